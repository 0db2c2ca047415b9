use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::geom::RotationSchedule;
use crate::network::ModelConfig;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "FOURDFOLD_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSplit {
    /// Train on the first 90% of each trajectory.
    S2l,
    /// Train on every state.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Caps the run below `epochs` worth of steps when set.
    pub max_steps: Option<usize>,
    pub stage: u8,
    pub seed: u64,
    /// Target steps per window.
    pub s: usize,
    pub stride: usize,
    pub grad_clip: f64,
    pub t_min: f64,
    /// Monte Carlo draws per grid time for the rotation loss weight.
    pub weight_samples: usize,
    pub weight_grid: usize,
    pub split: DataSplit,
    /// Trajectory files (JSON or PDB).
    pub data: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: 4,
            learning_rate: 1e-4,
            epochs: 50,
            max_steps: None,
            stage: 1,
            seed: 0,
            s: 8,
            stride: 1,
            grad_clip: 1.0,
            t_min: 0.01,
            weight_samples: 100_000,
            weight_grid: 64,
            split: DataSplit::S2l,
            data: Vec::new(),
            checkpoint: None,
            log: None,
        }
    }
}

impl TrainConfig {
    /// Full-scale preset: 32 target steps and 550 epochs.
    pub fn full() -> Self {
        TrainConfig {
            s: 32,
            epochs: 550,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !matches!(self.stage, 1 | 2) {
            return Err(Error::InvalidArgument(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("s", self.s),
            ("stride", self.stride),
            ("weight_samples", self.weight_samples),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.weight_grid < 2 {
            return Err(Error::InvalidArgument("weight_grid must be at least 2".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("grad_clip", self.grad_clip)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::InvalidArgument("t_min must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn from_str_any(text: &str) -> Result<Self> {
        let cfg: TrainConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative data and output paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_str_any(&text)?;
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            cfg.data.iter_mut().for_each(fix);
            cfg.checkpoint.as_mut().map(fix);
            cfg.log.as_mut().map(fix);
        }
        Ok(cfg)
    }

    /// The noise schedule with this config's loss-weight estimate.
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::with_estimate(
            RotationSchedule::default(),
            self.t_min,
            self.weight_grid,
            self.weight_samples,
        )
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}='{v}' is not an integer")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_desk_preset() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.epochs, c.s, c.stage), (4, 50, 8, 1));
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.model.d_v, 128);
        assert_eq!(TrainConfig::full().epochs, 550);
        c.validate().unwrap();
    }

    #[test]
    fn toml_and_json_parse_to_the_same_config() {
        let toml_text = "batch_size = 2\nseed = 9\nstage = 2\n[model]\nd_v = 32\n";
        let json_text = r#"{"batch_size": 2, "seed": 9, "stage": 2, "model": {"d_v": 32}}"#;
        let a = TrainConfig::from_str_any(toml_text).unwrap();
        let b = TrainConfig::from_str_any(json_text).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.model.d_z, ModelConfig::default().d_z);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig::from_str_any("stage = 3").is_err());
        assert!(TrainConfig::from_str_any("learning_rate = -1.0").is_err());
        assert!(TrainConfig::from_str_any("batch_size = 0").is_err());
        assert!(TrainConfig::from_str_any("bogus = [").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "data = [\"t.json\"]\ncheckpoint = \"out.ckpt\"\n").unwrap();
        let cfg = TrainConfig::load(&path).unwrap();
        assert_eq!(cfg.data[0], dir.path().join("t.json"));
        assert_eq!(cfg.checkpoint.unwrap(), dir.path().join("out.ckpt"));
    }
}
