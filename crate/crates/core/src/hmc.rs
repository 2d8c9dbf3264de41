//! Hybrid Monte Carlo: potentials, mass matrices, the position Verlet
//! integrator, the Metropolis step and the sampling chain.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::fourdvar::AssimilationWindow;
use crate::io;
use crate::rom::{refresh_basis, PodBasis, RomProblem, SnapshotOptions};
use crate::state::{CovarianceOperator, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendTag {
    Full,
    Reduced,
    ApproxFull,
    Gaussian,
}

impl BackendTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Reduced => "reduced",
            Self::ApproxFull => "approx_full",
            Self::Gaussian => "gaussian",
        }
    }
}

/// Potential energy `J(x)` of the target density `∝ exp(−J)`.
pub trait PotentialBackend: Send + Sync {
    fn dim(&self) -> usize;
    fn tag(&self) -> BackendTag;
    fn potential(&self, x: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn potential_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        Ok((self.potential(x)?, self.gradient(x)?))
    }
}

/// The full 4D-Var cost.
#[derive(Debug, Clone)]
pub struct FullPotential {
    window: Arc<AssimilationWindow>,
}

impl FullPotential {
    pub fn new(window: Arc<AssimilationWindow>) -> Self {
        Self { window }
    }
}

impl PotentialBackend for FullPotential {
    fn dim(&self) -> usize {
        self.window.dim()
    }
    fn tag(&self) -> BackendTag {
        BackendTag::Full
    }
    fn potential(&self, x: &DVector<f64>) -> Result<f64> {
        self.window.cost(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.window.gradient(x)
    }
    fn potential_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let s = self.window.sweep(x)?;
        Ok((s.cost, s.gradient))
    }
}

/// The cost in reduced coordinates.
#[derive(Debug, Clone)]
pub struct ReducedPotential {
    rom: RomProblem,
}

impl ReducedPotential {
    pub fn new(rom: RomProblem) -> Self {
        Self { rom }
    }
    pub fn rom(&self) -> &RomProblem {
        &self.rom
    }
}

impl PotentialBackend for ReducedPotential {
    fn dim(&self) -> usize {
        self.rom.basis().nred()
    }
    fn tag(&self) -> BackendTag {
        BackendTag::Reduced
    }
    fn potential(&self, x: &DVector<f64>) -> Result<f64> {
        self.rom.reduced_cost(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.rom.reduced_gradient(x)
    }
    fn potential_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let s = self.rom.reduced_sweep(x)?;
        Ok((s.cost, s.gradient))
    }
}

/// Full-space cost with the likelihood evaluated through the reduced model.
#[derive(Debug, Clone)]
pub struct ApproxFullPotential {
    rom: RomProblem,
}

impl ApproxFullPotential {
    pub fn new(rom: RomProblem) -> Self {
        Self { rom }
    }
    pub fn rom(&self) -> &RomProblem {
        &self.rom
    }
}

impl PotentialBackend for ApproxFullPotential {
    fn dim(&self) -> usize {
        self.rom.window().dim()
    }
    fn tag(&self) -> BackendTag {
        BackendTag::ApproxFull
    }
    fn potential(&self, x: &DVector<f64>) -> Result<f64> {
        self.rom.approx_cost(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.rom.approx_gradient(x)
    }
    fn potential_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let s = self.rom.approx_sweep(x)?;
        Ok((s.cost, s.gradient))
    }
}

/// `J(x) = ½ (x − μ)ᵀ Q (x − μ)` for a symmetric positive semi-definite `Q`.
/// `Q = 0` gives a flat potential.
#[derive(Debug, Clone)]
pub struct GaussianPotential {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl GaussianPotential {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        ensure_dim("gaussian potential", mean.len(), precision.nrows())?;
        ensure_dim("gaussian potential", mean.len(), precision.ncols())?;
        Ok(Self { mean, precision })
    }

    pub fn flat(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            precision: DMatrix::zeros(dim, dim),
        }
    }
}

impl PotentialBackend for GaussianPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn tag(&self) -> BackendTag {
        BackendTag::Gaussian
    }
    fn potential(&self, x: &DVector<f64>) -> Result<f64> {
        ensure_dim("gaussian potential", self.dim(), x.len())?;
        let d = x - &self.mean;
        Ok(0.5 * d.dot(&(&self.precision * &d)))
    }
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("gaussian gradient", self.dim(), x.len())?;
        Ok(&self.precision * (x - &self.mean))
    }
}

/// Relative error between `∇J·d` and a central difference of `J` along a
/// random unit direction `d`.
pub fn gradient_check(backend: &dyn PotentialBackend, x: &DVector<f64>, rng: &mut RngStream) -> Result<f64> {
    let mut d = rng.standard_normal_vector(backend.dim());
    d /= d.norm();
    let eps = 1e-6 * x.amax().max(1.0);
    let (j, g) = backend.potential_and_gradient(x)?;
    let fd = (backend.potential(&(x + &d * eps))? - backend.potential(&(x - &d * eps))?) / (2.0 * eps);
    let gd = g.dot(&d);
    // Floor keeps round-off from dominating where the gradient vanishes.
    let scale = gd.abs().max(fd.abs()).max(1e-8 * g.norm()).max(1e-6 * j.abs().max(1.0));
    Ok((gd - fd).abs() / scale)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MassMatrix {
    Diagonal(DVector<f64>),
    Dense(CovarianceOperator),
}

impl MassMatrix {
    pub fn diagonal(d: DVector<f64>) -> Result<Self> {
        if d.is_empty() || d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("mass matrix diagonal must be positive".into()));
        }
        Ok(Self::Diagonal(d))
    }

    pub fn identity(n: usize) -> Self {
        Self::Diagonal(DVector::from_element(n, 1.0))
    }

    /// Diagonal of a precision matrix, e.g. `diag(B⁻¹)`.
    pub fn from_precision_diagonal(precision: &DMatrix<f64>) -> Result<Self> {
        Self::diagonal(precision.diagonal())
    }

    pub fn dense(cov: CovarianceOperator) -> Result<Self> {
        if !cov.is_positive_definite() {
            return Err(Error::NotPositiveDefinite("mass matrix".into()));
        }
        Ok(Self::Dense(cov))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal(d) => d.len(),
            Self::Dense(c) => c.dim(),
        }
    }

    /// `M⁻¹ p`.
    pub fn inverse_apply(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("mass inverse_apply", self.dim(), p.len())?;
        match self {
            Self::Diagonal(d) => Ok(p.component_div(d)),
            Self::Dense(c) => c.inverse_apply(p),
        }
    }

    /// `p ~ N(0, M)`.
    pub fn sample(&self, rng: &mut RngStream) -> Result<DVector<f64>> {
        let z = rng.standard_normal_vector(self.dim());
        match self {
            Self::Diagonal(d) => Ok(z.component_mul(&d.map(f64::sqrt))),
            Self::Dense(c) => c.sqrt_apply(&z),
        }
    }

    /// `½ pᵀ M⁻¹ p`.
    pub fn kinetic(&self, p: &DVector<f64>) -> Result<f64> {
        Ok(0.5 * p.dot(&self.inverse_apply(p)?))
    }
}

pub fn hamiltonian(backend: &dyn PotentialBackend, mass: &MassMatrix, p: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    ensure_dim("hamiltonian momentum", backend.dim(), p.len())?;
    ensure_dim("hamiltonian position", backend.dim(), x.len())?;
    Ok(mass.kinetic(p)? + backend.potential(x)?)
}

/// `m` position Verlet steps:
/// `x ← x + h/2 M⁻¹p; p ← p − h ∇J(x); x ← x + h/2 M⁻¹p`.
pub fn verlet_trajectory(
    backend: &dyn PotentialBackend,
    mass: &MassMatrix,
    p0: &DVector<f64>,
    x0: &DVector<f64>,
    h: f64,
    m: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    ensure_dim("verlet momentum", backend.dim(), p0.len())?;
    ensure_dim("verlet position", backend.dim(), x0.len())?;
    let mut x = x0.clone();
    let mut p = p0.clone();
    for _ in 0..m {
        x += mass.inverse_apply(&p)? * (0.5 * h);
        let g = backend.gradient(&x)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential gradient".into()));
        }
        p -= g * h;
        x += mass.inverse_apply(&p)? * (0.5 * h);
    }
    Ok((p, x))
}

/// `min(1, e^{−ΔH})`; non-finite `ΔH` gives 0.
pub fn acceptance_probability(delta_h: f64) -> f64 {
    if delta_h.is_nan() {
        0.0
    } else if delta_h <= 0.0 {
        1.0
    } else {
        (-delta_h).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshPolicy {
    Never,
    AfterBurnIn,
    /// Every `k` proposals.
    Every(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    pub step_size: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    /// Keep every `mixing`-th accepted state.
    pub mixing: usize,
    pub ensemble_size: usize,
    pub seed: u64,
    pub stream_id: u64,
    /// Abort after this many proposals; 0 picks a bound from the other settings.
    pub max_proposals: usize,
    pub refresh: RefreshPolicy,
    /// Relative tolerance of the directional gradient check; 0 disables it.
    pub gradient_check_tol: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            n_steps: 10,
            burn_in: 25,
            mixing: 5,
            ensemble_size: 100,
            seed: 0,
            stream_id: 0,
            max_proposals: 0,
            refresh: RefreshPolicy::AfterBurnIn,
            gradient_check_tol: 1e-3,
        }
    }
}

impl HmcConfig {
    pub fn trajectory_length(&self) -> f64 {
        self.step_size * self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument("step_size must be positive".into()));
        }
        if self.n_steps == 0 || self.mixing == 0 || self.ensemble_size == 0 {
            return Err(Error::InvalidArgument("n_steps, mixing and ensemble_size must be >= 1".into()));
        }
        if let RefreshPolicy::Every(0) = self.refresh {
            return Err(Error::InvalidArgument("refresh interval must be >= 1".into()));
        }
        Ok(())
    }

    fn proposal_cap(&self) -> usize {
        if self.max_proposals > 0 {
            self.max_proposals
        } else {
            20 * (self.burn_in + self.ensemble_size * self.mixing) + 100
        }
    }
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub x: DVector<f64>,
    pub potential: f64,
    pub accepted: bool,
    pub delta_h: f64,
    pub failure: Option<String>,
}

/// One HMC transition from `x` (whose potential is `j_x`). Draws the
/// momentum, then the uniform, then integrates. A failed trajectory is a
/// rejection.
pub fn propose_and_accept(
    backend: &dyn PotentialBackend,
    mass: &MassMatrix,
    x: &DVector<f64>,
    j_x: f64,
    step_size: f64,
    n_steps: usize,
    rng: &mut RngStream,
) -> Result<Proposal> {
    let p = mass.sample(rng)?;
    let u = rng.uniform();
    let h0 = mass.kinetic(&p)? + j_x;
    let reject = |delta_h: f64, reason: String| Proposal {
        x: x.clone(),
        potential: j_x,
        accepted: false,
        delta_h,
        failure: Some(reason),
    };
    let (p_new, x_new) = match verlet_trajectory(backend, mass, &p, x, step_size, n_steps) {
        Ok(v) => v,
        Err(e @ (Error::Divergence { .. } | Error::NonFinite(_))) => return Ok(reject(f64::INFINITY, e.to_string())),
        Err(e) => return Err(e),
    };
    let j_new = match backend.potential(&x_new) {
        Ok(j) if j.is_finite() => j,
        Ok(_) => return Ok(reject(f64::INFINITY, "non-finite potential".into())),
        Err(e @ (Error::Divergence { .. } | Error::NonFinite(_))) => return Ok(reject(f64::INFINITY, e.to_string())),
        Err(e) => return Err(e),
    };
    let delta_h = mass.kinetic(&p_new)? + j_new - h0;
    if !delta_h.is_finite() {
        return Ok(reject(f64::INFINITY, "non-finite energy".into()));
    }
    let accepted = acceptance_probability(delta_h) > u;
    Ok(Proposal {
        x: if accepted { x_new } else { x.clone() },
        potential: if accepted { j_new } else { j_x },
        accepted,
        delta_h,
        failure: None,
    })
}

/// What a chain samples: a potential, a mass matrix and, for the
/// reduced-order variants, a basis that can be rebuilt.
pub trait SamplingTarget {
    fn backend(&self) -> &dyn PotentialBackend;
    fn mass(&self) -> &MassMatrix;
    /// Maps a sampling-space state to the full space.
    fn to_full(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// Identifier of the basis in use (0 before any refresh).
    fn basis_id(&self) -> Option<usize> {
        None
    }
    /// Rebuilds the basis at `x` and returns `x` in the new coordinates.
    /// `None` when the target has no basis.
    fn refresh(&mut self, _x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        Ok(None)
    }
    fn basis(&self) -> Option<&PodBasis> {
        None
    }
}

/// A fixed potential sampled in the full space.
pub struct StaticTarget {
    backend: Box<dyn PotentialBackend>,
    mass: MassMatrix,
}

impl StaticTarget {
    pub fn new(backend: Box<dyn PotentialBackend>, mass: MassMatrix) -> Result<Self> {
        ensure_dim("target mass", backend.dim(), mass.dim())?;
        Ok(Self { backend, mass })
    }

    /// Full 4D-Var posterior with mass `diag(B⁻¹)`.
    pub fn full(window: Arc<AssimilationWindow>) -> Result<Self> {
        let mass = MassMatrix::from_precision_diagonal(window.b_inv())?;
        Self::new(Box::new(FullPotential::new(window)), mass)
    }
}

impl SamplingTarget for StaticTarget {
    fn backend(&self) -> &dyn PotentialBackend {
        self.backend.as_ref()
    }
    fn mass(&self) -> &MassMatrix {
        &self.mass
    }
    fn to_full(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(x.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSettings {
    pub gamma: f64,
    pub snapshots: SnapshotOptions,
}

impl Default for BasisSettings {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            snapshots: SnapshotOptions::default(),
        }
    }
}

/// Sampling in reduced coordinates with mass `diag((VᵀBV)⁻¹)`.
pub struct ReducedTarget {
    potential: ReducedPotential,
    mass: MassMatrix,
    settings: BasisSettings,
    basis_id: usize,
}

impl ReducedTarget {
    pub fn new(rom: RomProblem, settings: BasisSettings) -> Result<Self> {
        let mass = MassMatrix::from_precision_diagonal(rom.reduced_background_cov().inverse()?)?;
        Ok(Self {
            potential: ReducedPotential::new(rom),
            mass,
            settings,
            basis_id: 0,
        })
    }

    pub fn rom(&self) -> &RomProblem {
        self.potential.rom()
    }
}

impl SamplingTarget for ReducedTarget {
    fn backend(&self) -> &dyn PotentialBackend {
        &self.potential
    }
    fn mass(&self) -> &MassMatrix {
        &self.mass
    }
    fn to_full(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.rom().basis().lift(x)
    }
    fn basis_id(&self) -> Option<usize> {
        Some(self.basis_id)
    }
    fn basis(&self) -> Option<&PodBasis> {
        Some(self.rom().basis())
    }
    fn refresh(&mut self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let full = self.to_full(x)?;
        let rom = self.rom();
        let basis = refresh_basis(rom.window(), &full, self.settings.gamma, &self.settings.snapshots)?;
        let rom = rom.with_basis(Arc::new(basis))?;
        let x_new = rom.basis().restrict(&full)?;
        *self = Self {
            basis_id: self.basis_id + 1,
            ..Self::new(rom, self.settings.clone())?
        };
        Ok(Some(x_new))
    }
}

/// Full-space sampling of the reduced-likelihood potential with mass `diag(B⁻¹)`.
pub struct ApproxFullTarget {
    potential: ApproxFullPotential,
    mass: MassMatrix,
    settings: BasisSettings,
    basis_id: usize,
}

impl ApproxFullTarget {
    pub fn new(rom: RomProblem, settings: BasisSettings) -> Result<Self> {
        let mass = MassMatrix::from_precision_diagonal(rom.window().b_inv())?;
        Ok(Self {
            potential: ApproxFullPotential::new(rom),
            mass,
            settings,
            basis_id: 0,
        })
    }

    pub fn rom(&self) -> &RomProblem {
        self.potential.rom()
    }
}

impl SamplingTarget for ApproxFullTarget {
    fn backend(&self) -> &dyn PotentialBackend {
        &self.potential
    }
    fn mass(&self) -> &MassMatrix {
        &self.mass
    }
    fn to_full(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(x.clone())
    }
    fn basis_id(&self) -> Option<usize> {
        Some(self.basis_id)
    }
    fn basis(&self) -> Option<&PodBasis> {
        Some(self.rom().basis())
    }
    fn refresh(&mut self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        let rom = self.rom();
        let basis = refresh_basis(rom.window(), x, self.settings.gamma, &self.settings.snapshots)?;
        let rom = rom.with_basis(Arc::new(basis))?;
        self.potential = ApproxFullPotential::new(rom);
        self.basis_id += 1;
        Ok(Some(x.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub delta_h: f64,
    pub accepted: bool,
    pub burn_in: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub backend: BackendTag,
    pub seed: u64,
    pub stream_id: u64,
    /// Samples in the sampling space of the backend.
    pub samples: Vec<DVector<f64>>,
    /// The same samples mapped to the full space.
    pub full_samples: Vec<DVector<f64>>,
    pub basis_ids: Vec<Option<usize>>,
    pub accept_log: Vec<ProposalRecord>,
    pub acceptance_rate: f64,
    pub refreshes: usize,
    pub gradient_checks: Vec<f64>,
}

impl ChainResult {
    pub fn rejection_rate(&self) -> f64 {
        1.0 - self.acceptance_rate
    }

    /// Full-space ensemble mean.
    pub fn mean(&self) -> DVector<f64> {
        let n = self.full_samples.len() as f64;
        self.full_samples.iter().fold(DVector::zeros(self.full_samples[0].len()), |acc, x| acc + x) / n
    }
}

fn delta_h_summary(log: &[ProposalRecord]) -> String {
    let finite: Vec<f64> = log.iter().map(|r| r.delta_h).filter(|d| d.is_finite()).collect();
    if finite.is_empty() {
        return format!("all {} trajectories failed; reduce the step size", log.len());
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    format!(
        "{} proposals, ΔH mean {mean:.3e} min {min:.3e} max {max:.3e}; reduce the step size",
        log.len()
    )
}

fn checked_gradient(target: &dyn SamplingTarget, x: &DVector<f64>, rng: &mut RngStream, tol: f64) -> Result<Option<f64>> {
    if tol <= 0.0 {
        return Ok(None);
    }
    let err = gradient_check(target.backend(), x, rng)?;
    if !(err <= tol) {
        return Err(Error::GradientCheck {
            rel_error: err,
            tolerance: tol,
        });
    }
    Ok(Some(err))
}

/// Runs one chain from `x_init` (in the target's sampling space).
///
/// Burn-in counts proposals. After burn-in, every `mixing`-th accepted
/// state is kept until `ensemble_size` samples are collected. Basis
/// refreshes happen only between proposals.
pub fn run_smoother(target: &mut dyn SamplingTarget, x_init: &DVector<f64>, cfg: &HmcConfig) -> Result<ChainResult> {
    cfg.validate()?;
    ensure_dim("chain start", target.backend().dim(), x_init.len())?;
    let mut rng = RngStream::new(cfg.seed, cfg.stream_id);
    // Gradient checks draw from their own stream so they do not shift the chain.
    let mut check_rng = RngStream::new(cfg.seed, cfg.stream_id ^ (1 << 63));
    let mut gradient_checks = Vec::new();
    gradient_checks.extend(checked_gradient(target, x_init, &mut check_rng, cfg.gradient_check_tol)?);

    let mut x = x_init.clone();
    let mut j = target.backend().potential(&x)?;
    let mut log: Vec<ProposalRecord> = Vec::new();
    let mut samples = Vec::with_capacity(cfg.ensemble_size);
    let mut full_samples = Vec::with_capacity(cfg.ensemble_size);
    let mut basis_ids = Vec::with_capacity(cfg.ensemble_size);
    let mut refreshes = 0;
    let mut accepted_after_burn = 0usize;
    let cap = cfg.proposal_cap();

    while samples.len() < cfg.ensemble_size {
        let index = log.len();
        if index >= cap {
            return Err(Error::SamplerAbort {
                reason: format!(
                    "proposal cap {cap} reached with {} of {} samples; {}",
                    samples.len(),
                    cfg.ensemble_size,
                    delta_h_summary(&log)
                ),
            });
        }
        let due = match cfg.refresh {
            RefreshPolicy::Never => false,
            RefreshPolicy::AfterBurnIn => index == cfg.burn_in && cfg.burn_in > 0,
            RefreshPolicy::Every(k) => index > 0 && index % k == 0,
        };
        if due {
            if let Some(x_new) = target.refresh(&x)? {
                x = x_new;
                j = target.backend().potential(&x)?;
                refreshes += 1;
                gradient_checks.extend(checked_gradient(target, &x, &mut check_rng, cfg.gradient_check_tol)?);
            }
        }

        let prop = propose_and_accept(target.backend(), target.mass(), &x, j, cfg.step_size, cfg.n_steps, &mut rng)?;
        let in_burn = index < cfg.burn_in;
        log.push(ProposalRecord {
            delta_h: prop.delta_h,
            accepted: prop.accepted,
            burn_in: in_burn,
            failure: prop.failure,
        });
        x = prop.x;
        j = prop.potential;

        if in_burn {
            if index + 1 == cfg.burn_in && !log.iter().any(|r| r.accepted) {
                return Err(Error::SamplerAbort {
                    reason: format!("no proposal accepted during burn-in; {}", delta_h_summary(&log)),
                });
            }
            continue;
        }
        if prop.accepted {
            accepted_after_burn += 1;
            if accepted_after_burn % cfg.mixing == 0 {
                full_samples.push(target.to_full(&x)?);
                samples.push(x.clone());
                basis_ids.push(target.basis_id());
            }
        }
    }

    let accepted = log.iter().filter(|r| r.accepted).count();
    Ok(ChainResult {
        backend: target.backend().tag(),
        seed: cfg.seed,
        stream_id: cfg.stream_id,
        samples,
        full_samples,
        basis_ids,
        acceptance_rate: accepted as f64 / log.len() as f64,
        accept_log: log,
        refreshes,
        gradient_checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub step_size: f64,
    pub rejection_rate: f64,
    /// `(h, rejection rate)` for every pilot run.
    pub trials: Vec<(f64, f64)>,
}

/// Rejection rate of `n_proposals` transitions from `x` with step `h`.
pub fn pilot_rejection_rate(
    target: &dyn SamplingTarget,
    x: &DVector<f64>,
    cfg: &HmcConfig,
    h: f64,
    n_proposals: usize,
    stream_id: u64,
) -> Result<f64> {
    let mut rng = RngStream::new(cfg.seed, stream_id);
    let mut x = x.clone();
    let mut j = target.backend().potential(&x)?;
    let mut rejected = 0;
    for _ in 0..n_proposals {
        let p = propose_and_accept(target.backend(), target.mass(), &x, j, h, cfg.n_steps, &mut rng)?;
        if !p.accepted {
            rejected += 1;
        }
        x = p.x;
        j = p.potential;
    }
    Ok(rejected as f64 / n_proposals as f64)
}

/// Searches over the step size (trajectory steps fixed) for a rejection
/// rate inside `[low, high]`: doubling/halving to bracket, then bisection
/// in log space. Returns the trial closest to the middle of the band.
pub fn tune_step_size(
    target: &dyn SamplingTarget,
    x: &DVector<f64>,
    cfg: &HmcConfig,
    band: (f64, f64),
    n_proposals: usize,
    max_trials: usize,
) -> Result<TuneReport> {
    cfg.validate()?;
    let (low, high) = band;
    if !(0.0 <= low && low < high && high <= 1.0) {
        return Err(Error::InvalidArgument(format!("invalid rejection band [{low}, {high}]")));
    }
    let mut trials: Vec<(f64, f64)> = Vec::new();
    let mut h = cfg.step_size;
    let (mut lo, mut hi): (Option<f64>, Option<f64>) = (None, None);
    for t in 0..max_trials.max(1) {
        let rate = pilot_rejection_rate(target, x, cfg, h, n_proposals, cfg.stream_id + 1000 + t as u64)?;
        trials.push((h, rate));
        if rate >= low && rate <= high {
            break;
        }
        if rate < low {
            lo = Some(h);
        } else {
            hi = Some(h);
        }
        h = match (lo, hi) {
            (Some(a), Some(b)) => (a * b).sqrt(),
            (Some(a), None) => a * 2.0,
            (None, Some(b)) => b * 0.5,
            (None, None) => unreachable!(),
        };
    }
    let mid = 0.5 * (low + high);
    let &(step_size, rejection_rate) = trials
        .iter()
        .min_by(|a, b| (a.1 - mid).abs().total_cmp(&(b.1 - mid).abs()))
        .expect("at least one trial");
    Ok(TuneReport {
        step_size,
        rejection_rate,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub rows: usize,
    pub cols: usize,
    pub layout: String,
    pub backend: BackendTag,
    pub seed: u64,
    pub stream_id: u64,
    pub acceptance_rate: f64,
    pub config: HmcConfig,
    pub basis: Option<crate::rom::BasisMetadata>,
}

const ENSEMBLE_LAYOUT: &str = "f64 little-endian, row-major, one sample per row";

/// Row-major `Nens × Nvar` bytes of the full-space samples.
pub fn ensemble_bytes(samples: &[DVector<f64>]) -> Vec<u8> {
    let flat: Vec<f64> = samples.iter().flat_map(|s| s.iter().copied()).collect();
    io::f64_to_le_bytes(&flat)
}

pub fn export_ensemble(path: &Path, chain: &ChainResult, cfg: &HmcConfig, basis: Option<&PodBasis>) -> Result<()> {
    let cols = chain.full_samples.first().map_or(0, |s| s.len());
    std::fs::write(path, ensemble_bytes(&chain.full_samples))?;
    let meta = EnsembleMetadata {
        rows: chain.full_samples.len(),
        cols,
        layout: ENSEMBLE_LAYOUT.into(),
        backend: chain.backend,
        seed: chain.seed,
        stream_id: chain.stream_id,
        acceptance_rate: chain.acceptance_rate,
        config: cfg.clone(),
        basis: basis.map(|b| b.metadata(Some(cfg.seed))),
    };
    io::write_json(&io::sidecar_path(path), &meta)
}

pub fn import_ensemble(path: &Path) -> Result<(Vec<DVector<f64>>, EnsembleMetadata)> {
    let meta: EnsembleMetadata = io::read_json(&io::sidecar_path(path))?;
    if meta.layout != ENSEMBLE_LAYOUT {
        return Err(Error::Metadata(format!("unsupported ensemble layout '{}'", meta.layout)));
    }
    let flat = io::read_f64_le(path, meta.rows * meta.cols)?;
    let samples = flat.chunks(meta.cols.max(1)).map(|r| DVector::from_column_slice(r)).collect();
    Ok((samples, meta))
}
