//! User-side state: the last reported cell of each stream and the perturbed
//! report for the current transition state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{transition_of, Cell, GridSpec, TransitionDomain, TransitionState};
use crate::oracle::{encode_perturbed, BitReport, PrivacyParams};

#[derive(Debug, Clone)]
pub struct UserStream {
    pub user_id: String,
    pub last_cell: Option<Cell>,
    pub entered_at: Option<u32>,
    pub live: bool,
}

impl UserStream {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            last_cell: None,
            entered_at: None,
            live: true,
        }
    }

    /// Feeds the location at tick `t` (or its absence) and returns the
    /// resulting transition state.
    pub fn observe(
        &mut self,
        t: u32,
        loc: Option<(f64, f64)>,
        grid: &GridSpec,
    ) -> Result<TransitionState> {
        self.observe_cell(t, loc.map(|(x, y)| grid.discretize(x, y)))
    }

    pub fn observe_cell(&mut self, t: u32, cell: Option<Cell>) -> Result<TransitionState> {
        if !self.live {
            return Err(Error::StreamClosed(self.user_id.clone()));
        }
        let state = transition_of(self.last_cell, cell)?;
        match state {
            TransitionState::Enter { at } => {
                self.entered_at = Some(t);
                self.last_cell = Some(at);
            }
            TransitionState::Move { to, .. } => self.last_cell = Some(to),
            TransitionState::Quit { .. } => self.live = false,
        }
        Ok(state)
    }
}

#[derive(Debug, Clone)]
pub struct ClientReport {
    pub user_id: u32,
    pub timestamp: u32,
    pub payload: BitReport,
    pub epsilon_spent: f64,
}

pub fn report<R: Rng + ?Sized>(
    user_id: u32,
    timestamp: u32,
    state: TransitionState,
    dom: &TransitionDomain,
    eps: PrivacyParams,
    rng: &mut R,
) -> Result<ClientReport> {
    let index = dom.index_of(state).ok_or(Error::StateNotInDomain)?;
    Ok(ClientReport {
        user_id,
        timestamp,
        payload: encode_perturbed(index, dom.len(), eps, rng)?,
        epsilon_spent: eps.epsilon(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundingBox;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(k: usize) -> GridSpec {
        GridSpec::new(BoundingBox::new(0.0, 0.0, k as f64, k as f64).unwrap(), k).unwrap()
    }

    #[test]
    fn observe_lifecycle() {
        let g = grid(3);
        let mut u = UserStream::new("a");
        let s = u.observe(4, Some((1.5, 1.5)), &g).unwrap();
        assert_eq!(
            s,
            TransitionState::Enter {
                at: Cell::new(1, 1)
            }
        );
        assert_eq!(u.entered_at, Some(4));
        let s = u.observe(5, Some((1.5, 2.5)), &g).unwrap();
        assert_eq!(
            s,
            TransitionState::Move {
                from: Cell::new(1, 1),
                to: Cell::new(1, 2)
            }
        );
        let s = u.observe(6, None, &g).unwrap();
        assert_eq!(
            s,
            TransitionState::Quit {
                last: Cell::new(1, 2)
            }
        );
        assert!(!u.live);
        assert!(matches!(
            u.observe(7, None, &g),
            Err(Error::StreamClosed(_))
        ));
    }

    #[test]
    fn observe_rejects_jumps() {
        let mut u = UserStream::new("b");
        u.observe_cell(0, Some(Cell::new(0, 0))).unwrap();
        assert!(matches!(
            u.observe_cell(1, Some(Cell::new(2, 2))),
            Err(Error::NonAdjacentMove { .. })
        ));
    }

    #[test]
    fn report_length_and_spend() {
        let dom = TransitionDomain::build(grid(1));
        let eps = PrivacyParams::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = report(
            7,
            3,
            TransitionState::Enter {
                at: Cell::new(0, 0),
            },
            &dom,
            eps,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.payload.len(), 3);
        assert_eq!(r.epsilon_spent, 1.0);
        assert_eq!((r.user_id, r.timestamp), (7, 3));
    }

    #[test]
    fn report_large_epsilon_keeps_only_true_bit() {
        let dom = TransitionDomain::build(grid(1));
        let eps = PrivacyParams::new(50.0).unwrap();
        let state = TransitionState::Enter {
            at: Cell::new(0, 0),
        };
        let idx = dom.index_of(state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut kept = 0;
        for _ in 0..10_000 {
            let r = report(0, 0, state, &dom, eps, &mut rng).unwrap();
            for (i, b) in r.payload.bits().iter().enumerate() {
                if i != idx {
                    assert!(!b);
                }
            }
            kept += r.payload.bits()[idx] as usize;
        }
        assert!((kept as f64 / 10_000.0 - 0.5).abs() < 0.03);
    }

    #[test]
    fn report_rejects_illegal_state() {
        let dom = TransitionDomain::build(grid(3));
        let eps = PrivacyParams::new(1.0).unwrap();
        let bad = TransitionState::Move {
            from: Cell::new(0, 0),
            to: Cell::new(2, 2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            report(0, 0, bad, &dom, eps, &mut rng),
            Err(Error::StateNotInDomain)
        ));
    }
}
