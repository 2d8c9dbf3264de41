use nalgebra::{DMatrix, DVector};

use super::Model;
use crate::error::{ensure_dim, Error, Result};
use crate::state::RngStream;

/// `x_{k+1} = M x_k` with a constant interval matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    matrix: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidArgument("linear model matrix must be square and non-empty".into()));
        }
        crate::state::ensure_finite("linear model matrix", matrix.as_slice())?;
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
        }
    }

    /// `radius · Q` with `Q` a random orthogonal matrix (QR of a Gaussian
    /// matrix, signs fixed by the diagonal of R).
    pub fn random_scaled_orthogonal(n: usize, radius: f64, rng: &mut RngStream) -> Result<Self> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Self::new(q * radius)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl Model for LinearModel {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn name(&self) -> &'static str {
        "linear"
    }

    fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("linear step", self.dim(), x.len())?;
        Ok(&self.matrix * x)
    }

    fn tangent_linear(&self, _x: &DVector<f64>, dx: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("linear tangent", self.dim(), dx.len())?;
        Ok(&self.matrix * dx)
    }

    fn adjoint(&self, _x: &DVector<f64>, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("linear adjoint", self.dim(), lambda.len())?;
        Ok(self.matrix.tr_mul(lambda))
    }

    fn jacobian_times(&self, _x: &DVector<f64>, dirs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_dim("linear jacobian_times", self.dim(), dirs.nrows())?;
        Ok(&self.matrix * dirs)
    }

    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.matrix.clone())
    }

    fn linear_operator(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}
