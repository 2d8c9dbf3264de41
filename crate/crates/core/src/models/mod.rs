//! Forward models with tangent-linear and adjoint capability.
//!
//! A model advances a state by one *observation interval*. The adjoint is
//! the transpose of the interval Jacobian, linearized at the interval's
//! starting state.

mod linear;
mod swe;

pub use linear::LinearModel;
pub use swe::{ShallowWaterModel, SweParams};

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};

/// States at observation times `0..=n_intervals`; element 0 is the initial state.
pub type Trajectory = Vec<DVector<f64>>;

pub trait Model: Send + Sync {
    fn dim(&self) -> usize;

    /// Short identifier used in metadata.
    fn name(&self) -> &'static str;

    /// Number of internal time steps making up one interval.
    fn steps_per_interval(&self) -> usize {
        1
    }

    /// Advances `x` by one observation interval.
    fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Jacobian of [`Model::step`] at `x` applied to `dx`.
    fn tangent_linear(&self, x: &DVector<f64>, dx: &DVector<f64>) -> Result<DVector<f64>>;

    /// Transposed Jacobian of [`Model::step`] at `x` applied to `lambda`.
    fn adjoint(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<DVector<f64>>;

    /// Jacobian at `x` applied to each column of `dirs`.
    fn jacobian_times(&self, x: &DVector<f64>, dirs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_dim("jacobian_times", self.dim(), dirs.nrows())?;
        let mut out = DMatrix::zeros(self.dim(), dirs.ncols());
        for (j, col) in dirs.column_iter().enumerate() {
            out.set_column(j, &self.tangent_linear(x, &col.into_owned())?);
        }
        Ok(out)
    }

    /// Full interval Jacobian at `x`.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.jacobian_times(x, &DMatrix::identity(self.dim(), self.dim()))
    }

    /// States after each internal time step of one interval starting at `x`;
    /// the last entry equals [`Model::step`].
    fn interval_states(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        Ok(vec![self.step(x)?])
    }

    /// The interval matrix, for models that are linear.
    fn linear_operator(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// Runs `model` for `n_intervals` observation intervals from `x0`.
pub fn propagate(model: &dyn Model, x0: &DVector<f64>, n_intervals: usize) -> Result<Trajectory> {
    ensure_dim("propagate", model.dim(), x0.len())?;
    crate::state::ensure_finite("initial state", x0.as_slice())?;
    let mut traj = Vec::with_capacity(n_intervals + 1);
    traj.push(x0.clone());
    for k in 0..n_intervals {
        let next = model.step(&traj[k]).map_err(|e| match e {
            Error::Divergence { step, reason } => Error::Divergence {
                step: k * model.steps_per_interval() + step,
                reason,
            },
            other => other,
        })?;
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: (k + 1) * model.steps_per_interval(),
                reason: format!("non-finite entry {i} after interval {k}"),
            });
        }
        traj.push(next);
    }
    Ok(traj)
}

/// `Mᵀ(x_ref) λ` for one interval.
pub fn adjoint_step(model: &dyn Model, x_ref: &DVector<f64>, lambda: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_dim("adjoint_step (state)", model.dim(), x_ref.len())?;
    ensure_dim("adjoint_step (lambda)", model.dim(), lambda.len())?;
    model.adjoint(x_ref, lambda)
}
