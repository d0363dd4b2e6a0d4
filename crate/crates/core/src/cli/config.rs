use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GenConfig;
use crate::error::{M3vError, Result};
use crate::policy::CalibrationConfig;
use crate::training::{GradCheckConfig, TrainConfig};

/// One experiment, as read from a TOML file.
///
/// The top-level `seed` is required in files and drives every stage; the
/// sections may not set their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Train/valid/test fractions used by `gen-data --split`.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub gen: GenConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub policy: CalibrationConfig,
    #[serde(default)]
    pub grad_check: GradCheckConfig,
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::with_seed(0)
    }
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = RunConfig {
            seed,
            split: default_split(),
            gen: GenConfig::default(),
            train: TrainConfig::default(),
            policy: CalibrationConfig::default(),
            grad_check: GradCheckConfig::default(),
        };
        cfg.set_seed(seed);
        cfg
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.gen.seed = seed;
        self.train.seed = seed;
        self.policy.svm.seed = seed;
        self.grad_check.seed = seed;
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| M3vError::Config(e.to_string()))?;
        for section in ["gen", "train", "grad_check"] {
            if raw.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(M3vError::Config(format!(
                    "[{section}] sets its own seed; use the top-level seed"
                )));
            }
        }
        if raw
            .get("policy")
            .and_then(|p| p.get("svm"))
            .and_then(|s| s.get("seed"))
            .is_some()
        {
            return Err(M3vError::Config(
                "[policy.svm] sets its own seed; use the top-level seed".into(),
            ));
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| M3vError::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| M3vError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            M3vError::Config(m) => M3vError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        self.policy.validate()?;
        let s = self.split;
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(M3vError::Config(format!("split fractions {s:?} must be positive and sum to 1")));
        }
        Ok(())
    }
}
