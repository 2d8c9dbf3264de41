//! Experiment configuration: JSON with unknown keys rejected.

use std::path::{Path, PathBuf};

use hmc_smoother::hmc::{BasisSettings, HmcConfig};
use hmc_smoother::optimize::MinimizeOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub window: WindowConfig,
    pub truth: TruthConfig,
    pub prior: PriorConfig,
    pub obs: ObsConfig,
    #[serde(default)]
    pub rom: BasisSettings,
    #[serde(default)]
    pub fourdvar: MinimizeOptions,
    #[serde(default)]
    pub hmc: HmcBlock,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    Linear(LinearModelConfig),
    Swe(SweModelConfig),
}

/// `M = radius · Q` with a seeded random orthogonal `Q`, applied once per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModelConfig {
    pub dim: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    0.97
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweModelConfig {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub length_x: f64,
    pub length_y: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 15,
            ny: 15,
            length_x: 1.0,
            length_y: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub gravity: f64,
    pub f_hat: f64,
    pub beta: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            gravity: 1.0,
            f_hat: 4.0,
            beta: 2.0,
        }
    }
}

/// `length` time points (steps `0..length`) with `n_obs` observation times
/// spread evenly, so each interval spans `(length − 1)/(n_obs − 1)` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub length: usize,
    pub n_obs: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { length: 91, n_obs: 10 }
    }
}

impl WindowConfig {
    pub fn n_intervals(&self) -> usize {
        self.n_obs - 1
    }

    pub fn steps_per_interval(&self) -> usize {
        (self.length - 1) / (self.n_obs - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthConfig {
    /// Geostrophically balanced height bump (shallow-water only).
    Bump {
        mean_depth: f64,
        amplitude: f64,
        width: f64,
        center: (f64, f64),
    },
    /// Independent `N(mean, sd²)` components.
    Gaussian { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub sigma_b: f64,
    #[serde(default)]
    pub correlation_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsConfig {
    #[serde(default)]
    pub operator: ObsOperatorConfig,
    pub sigma_o: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObsOperatorConfig {
    #[default]
    Identity,
    /// Every `stride`-th component starting at `offset`.
    Subsample { stride: usize, offset: usize },
}

/// Sampler settings per variant. `seed` and `stream_id` inside these blocks
/// are replaced by values derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcBlock {
    pub full: HmcConfig,
    pub reduced: HmcConfig,
    pub approx: HmcConfig,
}

impl Default for HmcBlock {
    fn default() -> Self {
        Self {
            full: HmcConfig::default(),
            reduced: HmcConfig::default(),
            approx: HmcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    /// Target rejection-rate band.
    pub band: (f64, f64),
    pub n_proposals: usize,
    pub max_trials: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            band: (0.1, 0.3),
            n_proposals: 40,
            max_trials: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    pub alpha: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { alpha: 0.01 }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at '{path}': {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Compact JSON of the parsed config with every default filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let w = &self.window;
        if w.n_obs < 1 || w.length < 1 {
            return bad("window.length and window.n_obs must be >= 1".into());
        }
        if w.n_obs > 1 && (w.length - 1) % (w.n_obs - 1) != 0 {
            return bad(format!(
                "window.length - 1 = {} is not divisible into {} intervals",
                w.length - 1,
                w.n_obs - 1
            ));
        }
        if w.n_obs > 1 && w.steps_per_interval() == 0 {
            return bad("window.length must exceed window.n_obs - 1".into());
        }
        match (&self.model, &self.truth) {
            (ModelConfig::Linear(m), TruthConfig::Gaussian { sd, .. }) => {
                if m.dim == 0 {
                    return bad("model.dim must be >= 1".into());
                }
                if !(*sd >= 0.0) {
                    return bad("truth.sd must be >= 0".into());
                }
            }
            (ModelConfig::Swe(m), TruthConfig::Bump { .. }) => {
                if m.grid.nx < 3 || m.grid.ny < 3 {
                    return bad("model.grid needs at least 3x3 cells".into());
                }
            }
            (ModelConfig::Linear(_), _) => return bad("truth.type 'bump' needs model.type 'swe'".into()),
            (ModelConfig::Swe(_), _) => return bad("truth.type 'gaussian' needs model.type 'linear'".into()),
        }
        if !(self.prior.sigma_b > 0.0) {
            return bad("prior.sigma_b must be > 0".into());
        }
        if !(self.obs.sigma_o >= 0.0) {
            return bad("obs.sigma_o must be >= 0".into());
        }
        if let ObsOperatorConfig::Subsample { stride: 0, .. } = self.obs.operator {
            return bad("obs.operator.stride must be >= 1".into());
        }
        if !(self.rom.gamma > 0.0 && self.rom.gamma <= 1.0) {
            return bad("rom.gamma must lie in (0, 1]".into());
        }
        for (name, h) in [("full", &self.hmc.full), ("reduced", &self.hmc.reduced), ("approx", &self.hmc.approx)] {
            h.validate().map_err(|e| CliError::Config(format!("hmc.{name}: {e}")))?;
        }
        let (lo, hi) = self.tune.band;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad("tune.band must satisfy 0 <= low < high <= 1".into());
        }
        if !(self.diagnose.alpha > 0.0 && self.diagnose.alpha < 1.0) {
            return bad("diagnose.alpha must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR: &str = r#"{
        "model": {"type": "linear", "dim": 4},
        "window": {"length": 3, "n_obs": 3},
        "truth": {"type": "gaussian", "mean": 0.0, "sd": 1.0},
        "prior": {"sigma_b": 1.0},
        "obs": {"sigma_o": 0.5}
    }"#;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::from_json(LINEAR).unwrap();
        assert_eq!(cfg.hmc.full, HmcConfig::default());
        assert_eq!(cfg.output, PathBuf::from("out"));
        let canon = cfg.canonical_json();
        let again = ExperimentConfig::from_json(&canon).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical_json(), canon);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = LINEAR.replace("\"sigma_o\": 0.5", "\"sigma_o\": 0.5, \"sigma\": 1");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("obs"), "{msg}");
        assert_eq!(err.exit_code(), 2);
        let text = LINEAR.replace("\"dim\": 4", "\"dim\": 4, \"steps\": 2");
        assert!(ExperimentConfig::from_json(&text).unwrap_err().to_string().contains("model"));
        let text = LINEAR.replace("\"sd\": 1.0", "\"sd\": 1.0, \"width\": 2");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn nested_hmc_errors_carry_path() {
        let text = LINEAR.replace("\"obs\":", "\"hmc\": {\"full\": {\"step_size\": \"big\"}}, \"obs\":");
        let msg = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(msg.contains("hmc.full.step_size"), "{msg}");
    }

    #[test]
    fn window_must_divide() {
        let text = LINEAR.replace("\"length\": 3", "\"length\": 4");
        assert!(ExperimentConfig::from_json(&text).is_err());
        let w = WindowConfig::default();
        assert_eq!((w.n_intervals(), w.steps_per_interval()), (9, 10));
    }

    #[test]
    fn model_truth_pairing_checked() {
        let text = LINEAR.replace(
            r#"{"type": "gaussian", "mean": 0.0, "sd": 1.0}"#,
            r#"{"type": "bump", "mean_depth": 1.0, "amplitude": 0.1, "width": 0.1, "center": [0.5, 0.5]}"#,
        );
        assert!(matches!(ExperimentConfig::from_json(&text), Err(CliError::Config(_))));
    }
}
