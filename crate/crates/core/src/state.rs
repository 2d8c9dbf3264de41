//! Vectors, covariance operators, Gaussian densities and the seeded random
//! stream shared by every other module.
//!
//! Norm convention: `weighted_norm_sq(a, b, C)` returns `(a-b)ᵀ C (a-b)` with
//! `C` applied as given. Cost functions therefore pass *inverse* covariances.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Which space a state lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Full,
    Reduced,
}

/// A finite, non-empty point in the full (`Nvar`) or reduced (`Nred`) space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    values: DVector<f64>,
    space: Space,
}

impl StateVector {
    pub fn new(values: DVector<f64>, space: Space) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("state vector must be non-empty".into()));
        }
        ensure_finite("state vector", values.as_slice())?;
        Ok(Self { values, space })
    }

    pub fn full(values: DVector<f64>) -> Result<Self> {
        Self::new(values, Space::Full)
    }

    pub fn reduced(values: DVector<f64>) -> Result<Self> {
        Self::new(values, Space::Reduced)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite(format!("{what} (entry {i})"))),
    }
}

/// `(a - b)ᵀ C (a - b)`.
pub fn weighted_norm_sq(a: &DVector<f64>, b: &DVector<f64>, c: &DMatrix<f64>) -> Result<f64> {
    ensure_dim("weighted_norm_sq (b)", a.len(), b.len())?;
    ensure_dim("weighted_norm_sq (C rows)", a.len(), c.nrows())?;
    ensure_dim("weighted_norm_sq (C cols)", a.len(), c.ncols())?;
    let d = a - b;
    Ok(d.dot(&(c * &d)))
}

/// Dense symmetric covariance with a cached lower-triangular square root.
#[derive(Clone)]
pub struct CovarianceOperator {
    matrix: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    inverse: OnceLock<DMatrix<f64>>,
}

impl std::fmt::Debug for CovarianceOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CovarianceOperator")
            .field("dim", &self.dim())
            .field("positive_definite", &self.is_positive_definite())
            .finish()
    }
}

impl CovarianceOperator {
    /// Wraps a symmetric matrix. Symmetry is checked exactly; a matrix that
    /// fails to factor is accepted but flagged as not positive definite.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "covariance must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        ensure_finite("covariance", matrix.as_slice())?;
        let n = matrix.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if matrix[(i, j)] != matrix[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let chol = Cholesky::new(matrix.clone())
            .filter(|c| c.l_dirty().diagonal().iter().all(|&d| d > 0.0 && d.is_finite()));
        Ok(Self {
            matrix,
            chol,
            inverse: OnceLock::new(),
        })
    }

    /// Averages `m` with its transpose before wrapping; for matrices assembled
    /// by arithmetic that is symmetric only up to round-off.
    pub fn from_symmetrized(m: DMatrix<f64>) -> Result<Self> {
        let sym = (&m + m.transpose()) * 0.5;
        Self::new(sym)
    }

    pub fn from_diagonal(diag: &DVector<f64>) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(diag))
    }

    pub fn scaled_identity(n: usize, variance: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * variance)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_positive_definite(&self) -> bool {
        self.chol.is_some()
    }

    fn factor(&self) -> Result<&Cholesky<f64, Dyn>> {
        self.chol
            .as_ref()
            .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} covariance", self.dim(), self.dim())))
    }

    /// Lower-triangular `L` with `L Lᵀ = C`.
    pub fn sqrt_factor(&self) -> Result<DMatrix<f64>> {
        Ok(self.factor()?.l())
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("covariance apply", self.dim(), v.len())?;
        Ok(&self.matrix * v)
    }

    pub fn inverse_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("covariance inverse_apply", self.dim(), v.len())?;
        Ok(self.factor()?.solve(v))
    }

    /// `L z`: maps standard normals to a draw with this covariance.
    pub fn sqrt_apply(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("covariance sqrt_apply", self.dim(), z.len())?;
        let chol = self.factor()?;
        Ok(chol.l_dirty().lower_triangle() * z)
    }

    /// Cached explicit inverse.
    pub fn inverse(&self) -> Result<&DMatrix<f64>> {
        let chol = self.factor()?;
        Ok(self.inverse.get_or_init(|| {
            let inv = chol.inverse();
            (&inv + inv.transpose()) * 0.5
        }))
    }

    /// `ln det C`.
    pub fn log_det(&self) -> Result<f64> {
        let chol = self.factor()?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }
}

impl PartialEq for CovarianceOperator {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

/// `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    pub mean: DVector<f64>,
    pub cov: CovarianceOperator,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: CovarianceOperator) -> Result<Self> {
        ensure_dim("gaussian density", cov.dim(), mean.len())?;
        ensure_finite("gaussian mean", mean.as_slice())?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + L z` with `z` drawn from `rng`.
    pub fn sample(&self, rng: &mut RngStream) -> Result<DVector<f64>> {
        let z = rng.standard_normal_vector(self.dim());
        Ok(&self.mean + self.cov.sqrt_apply(&z)?)
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        ensure_dim("log_density", self.dim(), x.len())?;
        let n = self.dim() as f64;
        let quad = weighted_norm_sq(x, &self.mean, self.cov.inverse()?)?;
        Ok(-0.5 * n * (2.0 * PI).ln() - 0.5 * self.cov.log_det()? - 0.5 * quad)
    }
}

/// Seeded ChaCha8 stream. ChaCha is counter based, so `(seed, stream_id)`
/// pins the draw sequence on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn standard_normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.standard_normal())
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}
