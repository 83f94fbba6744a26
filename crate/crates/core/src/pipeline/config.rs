use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxfit::FitConfig;
use crate::cluster::ClusterConfig;
use crate::evalmetrics::EvalConfig;
use crate::triangulate::BaConfig;

use super::sim::SimConfig;
use super::PipelineError;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "MONOLABEL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    /// Depth range for the initial label set, meters.
    pub initial_range: (f64, f64),
    /// Depth range used when re-selecting during self-training, meters.
    pub retrain_range: (f64, f64),
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { initial_range: (0.5, 200.0), retrain_range: (0.5, 75.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub score_floor: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { score_floor: 0.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sim: SimConfig,
    pub ba: BaConfig,
    pub cluster: ClusterConfig,
    pub fit: FitConfig,
    pub eval: EvalConfig,
    pub select: SelectConfig,
    pub merge: MergeConfig,
    pub threads: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let check = |r: Result<(), String>, what: &str| r.map_err(|e| PipelineError::Config(format!("{what}: {e}")));
        check(self.sim.validate(), "sim")?;
        check(self.ba.validate(), "ba")?;
        check(self.cluster.validate(), "cluster")?;
        check(self.fit.validate(), "fit")?;
        check(self.eval.validate(), "eval")?;
        for (name, (lo, hi)) in [("initial_range", self.select.initial_range), ("retrain_range", self.select.retrain_range)] {
            if !(lo < hi) {
                return Err(PipelineError::Config(format!("select.{name}: min must be below max")));
            }
        }
        if !self.merge.score_floor.is_finite() {
            return Err(PipelineError::Config("merge.score_floor must be finite".into()));
        }
        if self.threads == Some(0) {
            return Err(PipelineError::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    /// Worker count: explicit flag, then the environment, then the config.
    pub fn resolve_threads(&self, flag: Option<usize>) -> Result<Option<usize>, PipelineError> {
        if let Some(n) = flag {
            return if n >= 1 { Ok(Some(n)) } else { Err(PipelineError::Config("--threads must be >= 1".into())) };
        }
        if let Ok(v) = std::env::var(THREADS_ENV) {
            return match v.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Some(n)),
                _ => Err(PipelineError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
            };
        }
        Ok(self.threads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn overrides_and_rejections() {
        let cfg = PipelineConfig::from_toml("[cluster]\ntheta = 50\n[select]\ninitial_range = [1.0, 80.0]\n").unwrap();
        assert_eq!(cfg.cluster.theta, 50);
        assert_eq!(cfg.cluster.delta1, 0.5);
        assert_eq!(cfg.select.initial_range, (1.0, 80.0));
        assert!(PipelineConfig::from_toml("[cluster]\ndelta1 = -1.0\n").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
        assert!(PipelineConfig::from_toml("[select]\ninitial_range = [5.0, 1.0]\n").is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = toml::to_string(&PipelineConfig::default()).unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), PipelineConfig::default());
    }
}
