//! POD bases, the Galerkin reduced model and the two reduced-order
//! potentials: the fully reduced cost (sampled in reduced coordinates) and
//! the full-space cost whose likelihood runs through the reduced model.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::fourdvar::AssimilationWindow;
use crate::io;
use crate::models::Trajectory;
use crate::state::{weighted_norm_sq, CovarianceOperator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnapshotOptions {
    /// Scale adjoint and gradient columns to unit norm before the SVD.
    pub normalize_adjoint: bool,
    /// Subtract the snapshot mean before the SVD.
    pub center: bool,
    pub include_gradient: bool,
    /// Also record states after every internal model step.
    pub intermediate_steps: bool,
}

impl Default for SnapshotOptions {
    fn default() -> Self {
        Self {
            normalize_adjoint: true,
            center: false,
            include_gradient: true,
            intermediate_steps: false,
        }
    }
}

/// Orthonormal basis `V` (Nvar × Nred) from a snapshot SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    v: DMatrix<f64>,
    singular_values: Vec<f64>,
    gamma: f64,
    provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMetadata {
    pub nvar: usize,
    pub nred: usize,
    pub layout: String,
    pub gamma: f64,
    pub energy: f64,
    pub singular_values: Vec<f64>,
    pub provenance: String,
    pub seed: Option<u64>,
}

const BASIS_LAYOUT: &str = "f64 little-endian, column-major";

/// `I(p) = Σ_{i≤p} σ_i / Σ_i σ_i` for `p = 1..=len`.
pub fn energy_fractions(singular_values: &[f64]) -> Vec<f64> {
    let total: f64 = singular_values.iter().sum();
    let mut acc = 0.0;
    singular_values
        .iter()
        .map(|s| {
            acc += s;
            acc / total
        })
        .collect()
}

/// Left singular vectors of `snapshots` keeping the smallest `p` with
/// `I(p) ≥ gamma`. All-zero columns are ignored.
pub fn build_basis(snapshots: &DMatrix<f64>, gamma: f64) -> Result<PodBasis> {
    build_basis_with(snapshots, gamma, false, "snapshots".into())
}

fn build_basis_with(snapshots: &DMatrix<f64>, gamma: f64, center: bool, provenance: String) -> Result<PodBasis> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if snapshots.nrows() == 0 || snapshots.ncols() == 0 {
        return Err(Error::Degenerate("empty snapshot matrix".into()));
    }
    crate::state::ensure_finite("snapshots", snapshots.as_slice())?;
    let kept: Vec<usize> = (0..snapshots.ncols())
        .filter(|&j| snapshots.column(j).iter().any(|&v| v != 0.0))
        .collect();
    if kept.is_empty() {
        return Err(Error::Degenerate("all snapshot columns are zero; no basis".into()));
    }
    let mut x = snapshots.select_columns(&kept);
    if center {
        let mean = x.column_mean();
        for mut col in x.column_iter_mut() {
            col -= &mean;
        }
        if x.iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate("centered snapshots are all zero".into()));
        }
    }
    let svd = x.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let fractions = energy_fractions(&singular_values);
    let nred = fractions.iter().position(|&f| f >= gamma).unwrap_or(fractions.len() - 1) + 1;
    let v = u.select_columns(&order[..nred]);
    Ok(PodBasis {
        v,
        singular_values,
        gamma,
        provenance,
    })
}

impl PodBasis {
    /// Wraps a matrix with orthonormal columns (checked to 1e-10).
    pub fn from_orthonormal(v: DMatrix<f64>, provenance: impl Into<String>) -> Result<Self> {
        if v.ncols() == 0 || v.ncols() > v.nrows() {
            return Err(Error::InvalidArgument(format!("basis shape {}x{} is invalid", v.nrows(), v.ncols())));
        }
        let err = (v.transpose() * &v - DMatrix::identity(v.ncols(), v.ncols())).amax();
        if !(err < 1e-10) {
            return Err(Error::InvalidArgument(format!("basis columns not orthonormal (error {err:.2e})")));
        }
        let n = v.ncols();
        Ok(Self {
            v,
            singular_values: vec![1.0; n],
            gamma: 1.0,
            provenance: provenance.into(),
        })
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn nvar(&self) -> usize {
        self.v.nrows()
    }

    pub fn nred(&self) -> usize {
        self.v.ncols()
    }

    /// All singular values of the snapshot matrix, retained and discarded.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// `I(p)`; `p = 0` gives 0.
    pub fn energy(&self, p: usize) -> f64 {
        if p == 0 {
            0.0
        } else {
            energy_fractions(&self.singular_values)[p.min(self.singular_values.len()) - 1]
        }
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.v * self.v.transpose()
    }

    /// `Vᵀ x`.
    pub fn restrict(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("restrict", self.nvar(), x.len())?;
        Ok(self.v.tr_mul(x))
    }

    /// `V x̃`.
    pub fn lift(&self, xr: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("lift", self.nred(), xr.len())?;
        Ok(&self.v * xr)
    }

    /// `V Vᵀ x`.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.lift(&self.restrict(x)?)
    }

    pub fn metadata(&self, seed: Option<u64>) -> BasisMetadata {
        BasisMetadata {
            nvar: self.nvar(),
            nred: self.nred(),
            layout: BASIS_LAYOUT.into(),
            gamma: self.gamma,
            energy: self.energy(self.nred()),
            singular_values: self.singular_values.clone(),
            provenance: self.provenance.clone(),
            seed,
        }
    }

    /// Writes `V` to `path` and the metadata to the sidecar.
    pub fn export(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        io::write_f64_le(path, self.v.as_slice())?;
        io::write_json(&io::sidecar_path(path), &self.metadata(seed))
    }

    pub fn import(path: &Path) -> Result<Self> {
        let meta: BasisMetadata = io::read_json(&io::sidecar_path(path))?;
        if meta.layout != BASIS_LAYOUT {
            return Err(Error::Metadata(format!("unsupported basis layout '{}'", meta.layout)));
        }
        let data = io::read_f64_le(path, meta.nvar * meta.nred)?;
        Ok(Self {
            v: DMatrix::from_vec(meta.nvar, meta.nred, data),
            singular_values: meta.singular_values,
            gamma: meta.gamma,
            provenance: meta.provenance,
        })
    }
}

/// Snapshot matrix `[x_0 … x_N, λ_0 … λ_N, ∇J(x0)]` from full forward and
/// adjoint sweeps started at `x0`.
pub fn collect_snapshots(win: &AssimilationWindow, x0: &DVector<f64>, opts: &SnapshotOptions) -> Result<DMatrix<f64>> {
    let sweep = win.sweep(x0)?;
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (k, x) in sweep.trajectory.iter().enumerate() {
        cols.push(x.clone());
        if opts.intermediate_steps && k < win.n_intervals() {
            let inner = win.model().interval_states(x)?;
            cols.extend(inner.into_iter().take(win.model().steps_per_interval().saturating_sub(1)));
        }
    }
    let scaled = |v: &DVector<f64>| {
        let n = v.norm();
        if opts.normalize_adjoint && n > 0.0 {
            v / n
        } else {
            v.clone()
        }
    };
    cols.extend(sweep.lambdas.iter().map(scaled));
    if opts.include_gradient {
        cols.push(scaled(&sweep.gradient));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Basis from forward, adjoint and gradient snapshots at `x0`.
pub fn refresh_basis(win: &AssimilationWindow, x0: &DVector<f64>, gamma: f64, opts: &SnapshotOptions) -> Result<PodBasis> {
    let snaps = collect_snapshots(win, x0, opts)?;
    build_basis_with(&snaps, gamma, opts.center, format!("full forward/adjoint sweep, {} columns", snaps.ncols()))
}

/// A window paired with a basis. Provides the Galerkin reduced model and
/// both reduced-order potentials.
#[derive(Debug, Clone)]
pub struct RomProblem {
    window: Arc<AssimilationWindow>,
    basis: Arc<PodBasis>,
    reduced_b: CovarianceOperator,
    reduced_background: DVector<f64>,
}

/// Cost, gradient and the states they were computed from.
#[derive(Debug, Clone)]
pub struct RomSweep {
    pub cost: f64,
    pub observation_cost: f64,
    pub trajectory: Trajectory,
    pub gradient: DVector<f64>,
}

impl RomProblem {
    pub fn new(window: Arc<AssimilationWindow>, basis: Arc<PodBasis>) -> Result<Self> {
        ensure_dim("rom basis", window.dim(), basis.nvar())?;
        let v = basis.v();
        let vbv = v.transpose() * window.prior().cov.matrix() * v;
        let reduced_b = CovarianceOperator::from_symmetrized(vbv)?;
        if !reduced_b.is_positive_definite() {
            return Err(Error::NotPositiveDefinite("VᵀBV".into()));
        }
        reduced_b.inverse()?;
        let reduced_background = v.tr_mul(window.background());
        Ok(Self {
            window,
            basis,
            reduced_b,
            reduced_background,
        })
    }

    pub fn window(&self) -> &Arc<AssimilationWindow> {
        &self.window
    }

    pub fn basis(&self) -> &Arc<PodBasis> {
        &self.basis
    }

    /// `VᵀBV`.
    pub fn reduced_background_cov(&self) -> &CovarianceOperator {
        &self.reduced_b
    }

    /// `Vᵀ x_b`.
    pub fn reduced_background(&self) -> &DVector<f64> {
        &self.reduced_background
    }

    /// Same window, new basis.
    pub fn with_basis(&self, basis: Arc<PodBasis>) -> Result<Self> {
        Self::new(self.window.clone(), basis)
    }

    /// `x̃_{k+1} = Vᵀ M(V x̃_k)`.
    pub fn reduced_propagate(&self, xr0: &DVector<f64>, n_intervals: usize) -> Result<Trajectory> {
        ensure_dim("reduced_propagate", self.basis.nred(), xr0.len())?;
        crate::state::ensure_finite("reduced initial state", xr0.as_slice())?;
        let model = self.window.model();
        let mut traj = Vec::with_capacity(n_intervals + 1);
        traj.push(xr0.clone());
        for k in 0..n_intervals {
            let next = self.basis.restrict(&model.step(&self.basis.lift(&traj[k])?)?)?;
            traj.push(next);
        }
        Ok(traj)
    }

    pub fn reduced_cost(&self, xr0: &DVector<f64>) -> Result<f64> {
        let traj = self.reduced_propagate(xr0, self.window.n_intervals())?;
        let lifted = traj.iter().map(|x| self.basis.lift(x)).collect::<Result<Vec<_>>>()?;
        Ok(self.reduced_background_cost(xr0)? + self.window.observation_cost(&lifted)?)
    }

    fn reduced_background_cost(&self, xr0: &DVector<f64>) -> Result<f64> {
        Ok(0.5 * weighted_norm_sq(xr0, &self.reduced_background, self.reduced_b.inverse()?)?)
    }

    pub fn reduced_gradient(&self, xr0: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.reduced_sweep(xr0)?.gradient)
    }

    /// Reduced cost and its exact gradient. The backward recursion is
    /// `λ̃_k = (M̂ V)ᵀ V λ̃_{k+1} + Vᵀ H_kᵀ R⁻¹ d_k` with `M̂` linearized at
    /// the lifted state `V x̃_k`.
    pub fn reduced_sweep(&self, xr0: &DVector<f64>) -> Result<RomSweep> {
        let n = self.window.n_intervals();
        let traj = self.reduced_propagate(xr0, n)?;
        let v = self.basis.v();
        let model = self.window.model();
        let lifted = traj.iter().map(|x| self.basis.lift(x)).collect::<Result<Vec<_>>>()?;
        let (mut obs_cost, forcing) = self.window.misfit_at(n, &lifted[n])?;
        let mut lambda = v.tr_mul(&forcing);
        for k in (0..n).rev() {
            let (c, forcing) = self.window.misfit_at(k, &lifted[k])?;
            obs_cost += c;
            let jv = model.jacobian_times(&lifted[k], v)?;
            lambda = jv.tr_mul(&(v * &lambda)) + v.tr_mul(&forcing);
        }
        let b_inv = self.reduced_b.inverse()?;
        let gradient = b_inv * (xr0 - &self.reduced_background) - lambda;
        Ok(RomSweep {
            cost: self.reduced_background_cost(xr0)? + obs_cost,
            observation_cost: obs_cost,
            trajectory: traj,
            gradient,
        })
    }

    /// `x̂_0 = x0`, `x̂_k = V Vᵀ M(V Vᵀ x̂_{k−1})`.
    pub fn approx_trajectory(&self, x0: &DVector<f64>) -> Result<Trajectory> {
        ensure_dim("approx trajectory", self.window.dim(), x0.len())?;
        crate::state::ensure_finite("initial state", x0.as_slice())?;
        let model = self.window.model();
        let mut traj = Vec::with_capacity(self.window.n_intervals() + 1);
        traj.push(x0.clone());
        for k in 0..self.window.n_intervals() {
            let z = self.basis.project(&traj[k])?;
            traj.push(self.basis.project(&model.step(&z)?)?);
        }
        Ok(traj)
    }

    pub fn approx_observation_cost(&self, x0: &DVector<f64>) -> Result<f64> {
        self.window.observation_cost(&self.approx_trajectory(x0)?)
    }

    pub fn approx_cost(&self, x0: &DVector<f64>) -> Result<f64> {
        Ok(self.window.background_cost(x0)? + self.approx_observation_cost(x0)?)
    }

    pub fn approx_gradient(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.approx_sweep(x0)?.gradient)
    }

    /// Full-space cost with the likelihood through the reduced model, and
    /// its exact gradient: `λ̂_{k−1} = V M̃ᵀ Vᵀ λ̂_k + H_{k−1}ᵀ R⁻¹ d_{k−1}`
    /// with `M̃ = Vᵀ M̂ V` linearized at `V Vᵀ x̂_{k−1}`.
    pub fn approx_sweep(&self, x0: &DVector<f64>) -> Result<RomSweep> {
        let n = self.window.n_intervals();
        let traj = self.approx_trajectory(x0)?;
        let v = self.basis.v();
        let model = self.window.model();
        let (mut obs_cost, mut lambda) = self.window.misfit_at(n, &traj[n])?;
        for k in (0..n).rev() {
            let (c, forcing) = self.window.misfit_at(k, &traj[k])?;
            obs_cost += c;
            let z = self.basis.project(&traj[k])?;
            let jv = model.jacobian_times(&z, v)?;
            let back = jv.tr_mul(&(v * v.tr_mul(&lambda)));
            lambda = v * back + forcing;
        }
        let gradient = self.window.b_inv() * (x0 - self.window.background()) - lambda;
        Ok(RomSweep {
            cost: self.window.background_cost(x0)? + obs_cost,
            observation_cost: obs_cost,
            trajectory: traj,
            gradient,
        })
    }
}
