//! Twin-experiment construction and the assimilation pipelines behind each mode.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use hmc_smoother::fourdvar::{background_covariance, AssimilationWindow, Observation, ObservationOperator, ObservationSet};
use hmc_smoother::hmc::{run_smoother, ApproxFullTarget, ChainResult, HmcConfig, ReducedTarget, SamplingTarget, StaticTarget};
use hmc_smoother::models::{propagate, LinearModel, Model, ShallowWaterModel, SweParams, Trajectory};
use hmc_smoother::optimize::{minimize, MinimizeResult};
use hmc_smoother::rom::{refresh_basis, PodBasis, RomProblem};
use hmc_smoother::state::{CovarianceOperator, GaussianDensity, RngStream};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelConfig, ObsOperatorConfig, TruthConfig};
use crate::error::{CliError, CliResult};

/// Stream ids under the master seed.
pub mod streams {
    pub const MODEL: u64 = 1;
    pub const TRUTH: u64 = 2;
    pub const BACKGROUND: u64 = 3;
    pub const OBSERVATIONS: u64 = 4;
    pub const CHAIN_FULL: u64 = 11;
    pub const CHAIN_REDUCED: u64 = 12;
    pub const CHAIN_APPROX: u64 = 13;
    pub const TUNE: u64 = 20;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Mode {
    #[serde(rename = "4dvar-full")]
    #[value(name = "4dvar-full")]
    FourDVarFull,
    #[serde(rename = "4dvar-reduced")]
    #[value(name = "4dvar-reduced")]
    FourDVarReduced,
    #[serde(rename = "hmc-full")]
    #[value(name = "hmc-full")]
    HmcFull,
    #[serde(rename = "hmc-reduced")]
    #[value(name = "hmc-reduced")]
    HmcReduced,
    #[serde(rename = "hmc-approx")]
    #[value(name = "hmc-approx")]
    HmcApprox,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::FourDVarFull,
        Mode::FourDVarReduced,
        Mode::HmcFull,
        Mode::HmcReduced,
        Mode::HmcApprox,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::FourDVarFull => "4dvar-full",
            Mode::FourDVarReduced => "4dvar-reduced",
            Mode::HmcFull => "hmc-full",
            Mode::HmcReduced => "hmc-reduced",
            Mode::HmcApprox => "hmc-approx",
        }
    }

    pub fn is_sampler(&self) -> bool {
        matches!(self, Mode::HmcFull | Mode::HmcReduced | Mode::HmcApprox)
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Sampler settings for this mode with seed and stream filled in.
    pub fn hmc_config(&self, cfg: &ExperimentConfig) -> Option<HmcConfig> {
        let (base, stream) = match self {
            Mode::HmcFull => (&cfg.hmc.full, streams::CHAIN_FULL),
            Mode::HmcReduced => (&cfg.hmc.reduced, streams::CHAIN_REDUCED),
            Mode::HmcApprox => (&cfg.hmc.approx, streams::CHAIN_APPROX),
            _ => return None,
        };
        Some(HmcConfig {
            seed: cfg.seed,
            stream_id: stream,
            ..base.clone()
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Model, observation operator and background covariance of a configured twin experiment.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: Arc<dyn Model>,
    swe: Option<ShallowWaterModel>,
    pub operator: ObservationOperator,
    pub b: CovarianceOperator,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> CliResult<Self> {
        config.validate()?;
        let spi = config.window.steps_per_interval().max(1);
        let (model, swe, points, period): (Arc<dyn Model>, _, Vec<(usize, f64, f64)>, _) = match &config.model {
            ModelConfig::Linear(m) => {
                let mut rng = RngStream::new(config.seed, streams::MODEL);
                let step = LinearModel::random_scaled_orthogonal(m.dim, m.radius, &mut rng)?;
                let interval = step.matrix().pow(spi as u32);
                let points = (0..m.dim).map(|i| (0, i as f64 / m.dim as f64, 0.0)).collect();
                (Arc::new(LinearModel::new(interval)?), None, points, None)
            }
            ModelConfig::Swe(m) => {
                let params = SweParams {
                    nx: m.grid.nx,
                    ny: m.grid.ny,
                    length_x: m.grid.length_x,
                    length_y: m.grid.length_y,
                    gravity: m.physics.gravity,
                    f_hat: m.physics.f_hat,
                    beta: m.physics.beta,
                    dt: m.dt,
                    steps_per_interval: spi,
                };
                let swe = ShallowWaterModel::new(params).map_err(|e| CliError::Config(format!("at 'model': {e}")))?;
                let cells = m.grid.nx * m.grid.ny;
                let points = (0..3 * cells)
                    .map(|i| {
                        let (x, y) = swe.coordinates(i % cells);
                        (i / cells, x, y)
                    })
                    .collect();
                (Arc::new(swe.clone()), Some(swe), points, Some(m.grid.length_x))
            }
        };
        let n = model.dim();
        let operator = match config.obs.operator {
            ObsOperatorConfig::Identity => ObservationOperator::Identity { dim: n },
            ObsOperatorConfig::Subsample { stride, offset } => ObservationOperator::Subsample {
                dim: n,
                indices: (offset..n).step_by(stride).collect(),
            },
        };
        let b = background_covariance(config.prior.sigma_b, config.prior.correlation_length, &points, period)
            .map_err(|e| CliError::Config(format!("at 'prior': {e}")))?;
        Ok(Self {
            config: config.clone(),
            model,
            swe,
            operator,
            b,
        })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn n_intervals(&self) -> usize {
        self.config.window.n_intervals()
    }

    pub fn truth_x0(&self) -> CliResult<DVector<f64>> {
        match &self.config.truth {
            TruthConfig::Bump {
                mean_depth,
                amplitude,
                width,
                center,
            } => {
                let swe = self.swe.as_ref().expect("validated model/truth pairing");
                Ok(swe.balanced_bump(*mean_depth, *amplitude, *width, *center)?)
            }
            TruthConfig::Gaussian { mean, sd } => {
                let mut rng = RngStream::new(self.config.seed, streams::TRUTH);
                Ok(rng.standard_normal_vector(self.dim()) * *sd + DVector::from_element(self.dim(), *mean))
            }
        }
    }

    pub fn truth_trajectory(&self, truth_x0: &DVector<f64>) -> CliResult<Trajectory> {
        Ok(propagate(self.model.as_ref(), truth_x0, self.n_intervals())?)
    }

    /// `x_b = x_true + e_b`, `e_b ~ N(0, B)`.
    pub fn background(&self, truth_x0: &DVector<f64>) -> CliResult<DVector<f64>> {
        let mut rng = RngStream::new(self.config.seed, streams::BACKGROUND);
        Ok(truth_x0 + self.b.sqrt_apply(&rng.standard_normal_vector(self.dim()))?)
    }

    /// `y_k = H x_k + σ_o z_k` at every observation time.
    pub fn observe(&self, trajectory: &Trajectory) -> CliResult<Vec<DVector<f64>>> {
        let mut rng = RngStream::new(self.config.seed, streams::OBSERVATIONS);
        let sigma = self.config.obs.sigma_o;
        trajectory
            .iter()
            .map(|x| {
                let hx = self.operator.apply(x)?;
                let noise = rng.standard_normal_vector(hx.len());
                Ok(if sigma == 0.0 { hx } else { hx + noise * sigma })
            })
            .collect()
    }

    pub fn window(&self, background: &DVector<f64>, observations: &[DVector<f64>]) -> CliResult<AssimilationWindow> {
        if observations.len() != self.n_intervals() + 1 {
            return Err(CliError::Input(format!(
                "expected {} observation times, found {}",
                self.n_intervals() + 1,
                observations.len()
            )));
        }
        let sigma = self.config.obs.sigma_o;
        let r = CovarianceOperator::scaled_identity(self.operator.obs_dim(), sigma * sigma)
            .map_err(|e| CliError::Config(format!("at 'obs.sigma_o': {e}")))?;
        let mut set = ObservationSet::default();
        for (k, y) in observations.iter().enumerate() {
            set.push(Observation::new(k, y.clone(), self.operator.clone(), r.clone())?);
        }
        let prior = GaussianDensity::new(background.clone(), self.b.clone())?;
        Ok(AssimilationWindow::new(prior, set, self.model.clone(), self.n_intervals())?)
    }

    /// Truth, background, observations and window in one go.
    pub fn twin(&self) -> CliResult<Twin> {
        let truth_x0 = self.truth_x0()?;
        let trajectory = self.truth_trajectory(&truth_x0)?;
        let background = self.background(&truth_x0)?;
        let observations = self.observe(&trajectory)?;
        let window = Arc::new(self.window(&background, &observations)?);
        Ok(Twin {
            truth_x0,
            trajectory,
            background,
            observations,
            window,
        })
    }
}

pub struct Twin {
    pub truth_x0: DVector<f64>,
    pub trajectory: Trajectory,
    pub background: DVector<f64>,
    pub observations: Vec<DVector<f64>>,
    pub window: Arc<AssimilationWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
    let t = Instant::now();
    let out = f()?;
    timings.push(StageTiming {
        stage: stage.into(),
        seconds: t.elapsed().as_secs_f64(),
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeSummary {
    pub cost: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

impl From<&MinimizeResult> for MinimizeSummary {
    fn from(r: &MinimizeResult) -> Self {
        Self {
            cost: r.cost,
            gradient_norm: r.gradient.norm(),
            iterations: r.iterations,
            converged: r.converged,
            line_search_failed: r.line_search_failed,
        }
    }
}

pub fn fourdvar_full(window: &AssimilationWindow, cfg: &ExperimentConfig) -> CliResult<MinimizeResult> {
    Ok(window.minimize(window.background(), &cfg.fourdvar)?)
}

pub fn minimize_reduced(rom: &RomProblem, xr_init: &DVector<f64>, cfg: &ExperimentConfig) -> CliResult<MinimizeResult> {
    let obj = (rom.basis().nred(), |x: &DVector<f64>| {
        let s = rom.reduced_sweep(x)?;
        Ok((s.cost, s.gradient))
    });
    Ok(minimize(&obj, xr_init, &cfg.fourdvar)?)
}

pub fn minimize_approx(rom: &RomProblem, x_init: &DVector<f64>, cfg: &ExperimentConfig) -> CliResult<MinimizeResult> {
    let obj = (rom.window().dim(), |x: &DVector<f64>| {
        let s = rom.approx_sweep(x)?;
        Ok((s.cost, s.gradient))
    });
    Ok(minimize(&obj, x_init, &cfg.fourdvar)?)
}

/// A sampling target together with its chain start (the minimizer of its own potential).
pub struct PreparedTarget {
    pub target: Box<dyn SamplingTarget>,
    pub start: DVector<f64>,
    pub fourdvar: MinimizeSummary,
    pub start_minimization: MinimizeSummary,
    pub initial_basis: Option<PodBasis>,
}

/// Full 4D-Var first; the reduced-order variants build their basis from
/// full forward/adjoint sweeps at its analysis.
pub fn prepare_target(
    window: &Arc<AssimilationWindow>,
    cfg: &ExperimentConfig,
    mode: Mode,
    timings: &mut Vec<StageTiming>,
) -> CliResult<PreparedTarget> {
    let xa = timed(timings, "4dvar", || fourdvar_full(window, cfg))?;
    let fourdvar = MinimizeSummary::from(&xa);
    let basis_at = |timings: &mut Vec<StageTiming>| {
        timed(timings, "basis", || {
            Ok(Arc::new(refresh_basis(window, &xa.x, cfg.rom.gamma, &cfg.rom.snapshots)?))
        })
    };
    match mode {
        Mode::HmcFull => Ok(PreparedTarget {
            target: Box::new(StaticTarget::full(window.clone())?),
            start: xa.x.clone(),
            start_minimization: fourdvar.clone(),
            fourdvar,
            initial_basis: None,
        }),
        Mode::HmcReduced => {
            let basis = basis_at(timings)?;
            let rom = RomProblem::new(window.clone(), basis.clone())?;
            let xr = timed(timings, "start", || minimize_reduced(&rom, &basis.restrict(&xa.x)?, cfg))?;
            Ok(PreparedTarget {
                target: Box::new(ReducedTarget::new(rom, cfg.rom.clone())?),
                start: xr.x.clone(),
                start_minimization: MinimizeSummary::from(&xr),
                fourdvar,
                initial_basis: Some((*basis).clone()),
            })
        }
        Mode::HmcApprox => {
            let basis = basis_at(timings)?;
            let rom = RomProblem::new(window.clone(), basis.clone())?;
            let xs = timed(timings, "start", || minimize_approx(&rom, &xa.x, cfg))?;
            Ok(PreparedTarget {
                target: Box::new(ApproxFullTarget::new(rom, cfg.rom.clone())?),
                start: xs.x.clone(),
                start_minimization: MinimizeSummary::from(&xs),
                fourdvar,
                initial_basis: Some((*basis).clone()),
            })
        }
        _ => Err(CliError::Input(format!("mode {mode} does not sample"))),
    }
}

pub struct AnalysisOutcome {
    /// Full-space analysis.
    pub analysis: DVector<f64>,
    pub summary: MinimizeSummary,
    pub basis: Option<PodBasis>,
}

pub struct EnsembleOutcome {
    pub chain: ChainResult,
    pub hmc: HmcConfig,
    pub start_full: DVector<f64>,
    pub fourdvar: MinimizeSummary,
    pub start_minimization: MinimizeSummary,
    pub initial_basis: Option<PodBasis>,
    pub final_basis: Option<PodBasis>,
}

pub enum Outcome {
    Analysis(AnalysisOutcome),
    Ensemble(Box<EnsembleOutcome>),
}

pub fn assimilate(
    window: &Arc<AssimilationWindow>,
    cfg: &ExperimentConfig,
    mode: Mode,
    timings: &mut Vec<StageTiming>,
) -> CliResult<Outcome> {
    match mode {
        Mode::FourDVarFull => {
            let r = timed(timings, "4dvar", || fourdvar_full(window, cfg))?;
            Ok(Outcome::Analysis(AnalysisOutcome {
                analysis: r.x.clone(),
                summary: MinimizeSummary::from(&r),
                basis: None,
            }))
        }
        Mode::FourDVarReduced => {
            let xb = window.background();
            let basis = timed(timings, "basis", || {
                Ok(Arc::new(refresh_basis(window, xb, cfg.rom.gamma, &cfg.rom.snapshots)?))
            })?;
            let rom = RomProblem::new(window.clone(), basis.clone())?;
            let r = timed(timings, "4dvar", || minimize_reduced(&rom, &basis.restrict(xb)?, cfg))?;
            Ok(Outcome::Analysis(AnalysisOutcome {
                analysis: basis.lift(&r.x)?,
                summary: MinimizeSummary::from(&r),
                basis: Some((*basis).clone()),
            }))
        }
        _ => {
            let hmc = mode.hmc_config(cfg).expect("sampler mode");
            let mut prepared = prepare_target(window, cfg, mode, timings)?;
            let start_full = prepared.target.to_full(&prepared.start)?;
            let chain = timed(timings, "sample", || Ok(run_smoother(prepared.target.as_mut(), &prepared.start, &hmc)?))?;
            Ok(Outcome::Ensemble(Box::new(EnsembleOutcome {
                final_basis: prepared.target.basis().cloned(),
                chain,
                hmc,
                start_full,
                fourdvar: prepared.fourdvar,
                start_minimization: prepared.start_minimization,
                initial_basis: prepared.initial_basis,
            })))
        }
    }
}
