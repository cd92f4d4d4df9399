use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generator::GeneratorSpec;
use crate::allocation::AllocationParams;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::grid::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    /// CSV file with header `user_id,timestamp,x,y`.
    File(PathBuf),
    Generator(GeneratorSpec),
}

impl Default for InputSource {
    fn default() -> Self {
        InputSource::Generator(GeneratorSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub k: usize,
    /// Covering box of the input points when absent (the generator's own box
    /// for generated input).
    pub bbox: Option<BoundingBox>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { k: 6, bbox: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Defaults to the average length of the ingested streams.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Retrasyn,
    /// Refreshes every transition on each collection tick.
    AllUpdate,
    /// Models movement only: no entering, quitting or size adjustment.
    NoEq,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Retrasyn => "retrasyn",
            Variant::AllUpdate => "all_update",
            Variant::NoEq => "no_eq",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: InputSource,
    pub grid: GridConfig,
    pub epsilon: f64,
    pub w: usize,
    pub allocation: AllocationParams,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
    pub variant: Variant,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: InputSource::default(),
            grid: GridConfig::default(),
            epsilon: 1.0,
            w: 20,
            allocation: AllocationParams::default(),
            synth: SynthConfig::default(),
            eval: EvalConfig::default(),
            variant: Variant::default(),
            seed: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be > 0"));
        }
        if self.w == 0 {
            return Err(Error::invalid("w", "must be >= 1"));
        }
        if self.grid.k == 0 || self.grid.k > crate::grid::MAX_GRID_SIDE {
            return Err(Error::invalid(
                "grid.k",
                format!("must be in 1..={}", crate::grid::MAX_GRID_SIDE),
            ));
        }
        if let Some(b) = &self.grid.bbox {
            b.validate()?;
        }
        if let Some(l) = self.synth.lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::invalid("synth.lambda", "must be > 0"));
            }
        }
        if let InputSource::Generator(g) = &self.input {
            g.validate()?;
        }
        self.allocation.validate()?;
        self.eval.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.epsilon, c.w, c.grid.k, c.eval.phi), (1.0, 20, 6, 20));
        assert_eq!(c.variant, Variant::Retrasyn);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(
            r#"{"epsilon": 2.0, "variant": "no_eq", "input": {"file": "a.csv"}, "allocation": {"strategy": "uniform"}}"#,
        )
        .unwrap();
        assert_eq!(c.epsilon, 2.0);
        assert_eq!(c.variant, Variant::NoEq);
        assert_eq!(c.input, InputSource::File("a.csv".into()));
        assert_eq!(c.allocation.kappa, 5);
        assert_eq!(c.w, 20);
        let round: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            RunConfig {
                epsilon: 0.0,
                ..Default::default()
            },
            RunConfig {
                w: 0,
                ..Default::default()
            },
            RunConfig {
                synth: SynthConfig { lambda: Some(-1.0) },
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
