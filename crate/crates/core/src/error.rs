use std::path::PathBuf;

use crate::grid::Cell;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid bounding box: max must exceed min on both axes")]
    InvalidBoundingBox,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cells {from:?} and {to:?} are not adjacent")]
    NonAdjacentMove { from: Cell, to: Cell },
    #[error("a transition needs at least one of the previous and current cells")]
    EmptyTransition,
    #[error("neighbour query {from:?} -> {to:?} is outside the reachability constraint")]
    NonAdjacentQuery { from: Cell, to: Cell },
    #[error("transition state is not part of the domain")]
    StateNotInDomain,

    #[error("index {index} is outside a domain of size {size}")]
    IndexOutOfDomain { index: usize, size: usize },
    #[error("reports have mixed lengths ({expected} vs {found})")]
    MixedLengths { expected: usize, found: usize },
    #[error("frequency estimate has no contributing reports")]
    UnusableEstimate,

    #[error("stream `{0}` has already quit and has no location")]
    StreamClosed(String),

    #[error("window budget overflow at tick {tick}: spent {spent} of {budget}")]
    WindowOverflow { tick: u32, spent: f64, budget: f64 },
    #[error("user {user} reported twice within one window (ticks {previous} and {tick})")]
    DoubleReport { user: u32, previous: u32, tick: u32 },

    #[error("vector lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("stream covers {ticks} ticks but the time range needs {phi}")]
    StreamTooShort { ticks: u32, phi: u32 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("input contains no records")]
    EmptyInput,

    #[error("tick {tick}: {source}")]
    AtTick {
        tick: u32,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_tick(self, tick: u32) -> Self {
        match self {
            e @ Error::AtTick { .. } => e,
            e => Error::AtTick {
                tick,
                source: Box::new(e),
            },
        }
    }
}
