//! Shallow-water equations on a β-plane channel.
//!
//! `∂w/∂t = A(w) ∂w/∂x + B(w) ∂w/∂y + C(y) w` with `w = (u, v, φ)`,
//! `φ = 2√(g h)` and
//!
//! ```text
//! A = -[[u, 0, φ/2], [0, u, 0], [φ/2, 0, u]]
//! B = -[[v, 0, 0], [0, v, φ/2], [0, φ/2, v]]
//! C = [[0, f, 0], [-f, 0, 0], [0, 0, 0]],   f = f̂ + β (y - D/2)
//! ```
//!
//! Space: second-order centered differences, periodic in x. Rows `y = 0`
//! and `y = D` are boundary rows: `v = 0` there and `u`, `φ` copy the
//! adjacent interior row (zero normal gradient). Time: classical RK4 with
//! the boundary projection applied to every stage and to the step result.
//!
//! The tangent-linear model is the exact linearization of that discrete
//! scheme. The adjoint is the transpose of the interval Jacobian, assembled
//! column by column from tangent-linear probes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweParams {
    pub nx: usize,
    pub ny: usize,
    pub length_x: f64,
    pub length_y: f64,
    pub gravity: f64,
    pub f_hat: f64,
    pub beta: f64,
    pub dt: f64,
    pub steps_per_interval: usize,
}

impl Default for SweParams {
    fn default() -> Self {
        Self {
            nx: 15,
            ny: 15,
            length_x: 1.0,
            length_y: 1.0,
            gravity: 1.0,
            f_hat: 4.0,
            beta: 2.0,
            dt: 0.02,
            steps_per_interval: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShallowWaterModel {
    params: SweParams,
    dx: f64,
    dy: f64,
    coriolis: Vec<f64>,
}

// RK4 stage inputs of one time step.
type Stages = [Vec<f64>; 4];

impl ShallowWaterModel {
    pub fn new(params: SweParams) -> Result<Self> {
        if params.nx < 3 || params.ny < 3 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 3x3, got {}x{}",
                params.nx, params.ny
            )));
        }
        let positive = [params.length_x, params.length_y, params.gravity, params.dt];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(
                "length_x, length_y, gravity and dt must be positive".into(),
            ));
        }
        if !params.f_hat.is_finite() || !params.beta.is_finite() {
            return Err(Error::InvalidArgument("Coriolis parameters must be finite".into()));
        }
        if params.steps_per_interval == 0 {
            return Err(Error::InvalidArgument("steps_per_interval must be >= 1".into()));
        }
        let dx = params.length_x / params.nx as f64;
        let dy = params.length_y / (params.ny - 1) as f64;
        let coriolis = (0..params.ny)
            .map(|j| params.f_hat + params.beta * (j as f64 * dy - params.length_y / 2.0))
            .collect();
        Ok(Self {
            params,
            dx,
            dy,
            coriolis,
        })
    }

    pub fn params(&self) -> &SweParams {
        &self.params
    }

    fn cells(&self) -> usize {
        self.params.nx * self.params.ny
    }

    /// Grid coordinates `(x_i, y_j)` of cell `j * nx + i`.
    pub fn coordinates(&self, cell: usize) -> (f64, f64) {
        let i = cell % self.params.nx;
        let j = cell / self.params.nx;
        (i as f64 * self.dx, j as f64 * self.dy)
    }

    /// Enforces the boundary conditions in place.
    pub fn apply_boundary(&self, w: &mut [f64]) {
        let nx = self.params.nx;
        let ny = self.params.ny;
        let n = self.cells();
        let top = (ny - 1) * nx;
        let below_top = (ny - 2) * nx;
        for i in 0..nx {
            w[i] = w[nx + i];
            w[top + i] = w[below_top + i];
            w[n + i] = 0.0;
            w[n + top + i] = 0.0;
            w[2 * n + i] = w[2 * n + nx + i];
            w[2 * n + top + i] = w[2 * n + below_top + i];
        }
    }

    fn check_state(&self, w: &[f64], step: usize) -> Result<()> {
        let n = self.cells();
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                reason: format!("non-finite state entry {i}"),
            });
        }
        if let Some(c) = w[2 * n..].iter().position(|&phi| phi <= 0.0) {
            return Err(Error::Divergence {
                step,
                reason: format!("phi <= 0 at cell {c} (fluid depth must stay positive)"),
            });
        }
        Ok(())
    }

    // out += A(a) ∂b/∂x + B(a) ∂b/∂y on interior rows.
    fn advect(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let nx = self.params.nx;
        let ny = self.params.ny;
        let n = self.cells();
        let inv2dx = 0.5 / self.dx;
        let inv2dy = 0.5 / self.dy;
        let (au, rest) = a.split_at(n);
        let (av, ap) = rest.split_at(n);
        let (bu, rest) = b.split_at(n);
        let (bv, bp) = rest.split_at(n);
        let (ou, rest) = out.split_at_mut(n);
        let (ov, op) = rest.split_at_mut(n);
        for j in 1..ny - 1 {
            let row = j * nx;
            let up = row + nx;
            let down = row - nx;
            for i in 0..nx {
                let ip = row + if i + 1 == nx { 0 } else { i + 1 };
                let im = row + if i == 0 { nx - 1 } else { i - 1 };
                let c = row + i;
                let ux = (bu[ip] - bu[im]) * inv2dx;
                let vx = (bv[ip] - bv[im]) * inv2dx;
                let px = (bp[ip] - bp[im]) * inv2dx;
                let uy = (bu[up + i] - bu[down + i]) * inv2dy;
                let vy = (bv[up + i] - bv[down + i]) * inv2dy;
                let py = (bp[up + i] - bp[down + i]) * inv2dy;
                let (u, v, half_phi) = (au[c], av[c], 0.5 * ap[c]);
                ou[c] -= u * ux + half_phi * px + v * uy;
                ov[c] -= u * vx + v * vy + half_phi * py;
                op[c] -= half_phi * ux + u * px + half_phi * vy + v * py;
            }
        }
    }

    // out += C(y) w on interior rows.
    fn add_coriolis(&self, w: &[f64], out: &mut [f64]) {
        let nx = self.params.nx;
        let n = self.cells();
        for j in 1..self.params.ny - 1 {
            let f = self.coriolis[j];
            for c in j * nx..(j + 1) * nx {
                out[c] += f * w[n + c];
                out[n + c] -= f * w[c];
            }
        }
    }

    fn rhs_into(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.advect(w, w, out);
        self.add_coriolis(w, out);
    }

    // Linearized right-hand side at `w` applied to `d`.
    fn rhs_tangent_into(&self, w: &[f64], d: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.advect(d, w, out);
        self.advect(w, d, out);
        self.add_coriolis(d, out);
    }

    /// Right-hand side of the semi-discrete system.
    pub fn swe_rhs(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("swe_rhs", self.dim(), w.len())?;
        self.check_state(w.as_slice(), 0)?;
        let mut out = vec![0.0; w.len()];
        self.rhs_into(w.as_slice(), &mut out);
        Ok(DVector::from_vec(out))
    }

    fn rk4_step(&self, w: &[f64], dt: f64, step: usize, stages: Option<&mut Stages>) -> Result<Vec<f64>> {
        let len = w.len();
        let mut k = [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        let mut s2 = vec![0.0; len];
        self.rhs_into(w, &mut k[0]);
        for (dst, (x, kk)) in s2.iter_mut().zip(w.iter().zip(&k[0])) {
            *dst = x + 0.5 * dt * kk;
        }
        self.apply_boundary(&mut s2);
        self.check_state(&s2, step)?;
        self.rhs_into(&s2, &mut k[1]);
        let mut s3 = vec![0.0; len];
        for (dst, (x, kk)) in s3.iter_mut().zip(w.iter().zip(&k[1])) {
            *dst = x + 0.5 * dt * kk;
        }
        self.apply_boundary(&mut s3);
        self.check_state(&s3, step)?;
        self.rhs_into(&s3, &mut k[2]);
        let mut s4 = vec![0.0; len];
        for (dst, (x, kk)) in s4.iter_mut().zip(w.iter().zip(&k[2])) {
            *dst = x + dt * kk;
        }
        self.apply_boundary(&mut s4);
        self.check_state(&s4, step)?;
        self.rhs_into(&s4, &mut k[3]);
        let mut next = w.to_vec();
        for idx in 0..len {
            next[idx] += dt / 6.0 * (k[0][idx] + 2.0 * k[1][idx] + 2.0 * k[2][idx] + k[3][idx]);
        }
        self.apply_boundary(&mut next);
        self.check_state(&next, step + 1)?;
        if let Some(st) = stages {
            *st = [w.to_vec(), s2, s3, s4];
        }
        Ok(next)
    }

    /// Integrates `n_steps` RK4 steps of size `dt` (which may be negative).
    pub fn integrate(&self, w: &DVector<f64>, dt: f64, n_steps: usize) -> Result<DVector<f64>> {
        ensure_dim("integrate", self.dim(), w.len())?;
        self.check_state(w.as_slice(), 0)?;
        let mut state = w.as_slice().to_vec();
        for s in 0..n_steps {
            state = self.rk4_step(&state, dt, s, None)?;
        }
        Ok(DVector::from_vec(state))
    }

    fn forward_with_stages(&self, x: &DVector<f64>) -> Result<Vec<Stages>> {
        ensure_dim("swe forward", self.dim(), x.len())?;
        self.check_state(x.as_slice(), 0)?;
        let mut state = x.as_slice().to_vec();
        let mut all = Vec::with_capacity(self.params.steps_per_interval);
        for s in 0..self.params.steps_per_interval {
            let mut st: Stages = Default::default();
            state = self.rk4_step(&state, self.params.dt, s, Some(&mut st))?;
            all.push(st);
        }
        Ok(all)
    }

    fn tangent_sweep(&self, stages: &[Stages], d0: &[f64], buf: &mut TangentBuffers) -> Vec<f64> {
        let dt = self.params.dt;
        let mut d = d0.to_vec();
        let TangentBuffers { k, s } = buf;
        for st in stages {
            self.rhs_tangent_into(&st[0], &d, &mut k[0]);
            for (dst, (x, kk)) in s.iter_mut().zip(d.iter().zip(&k[0])) {
                *dst = x + 0.5 * dt * kk;
            }
            self.apply_boundary(s);
            self.rhs_tangent_into(&st[1], s, &mut k[1]);
            for (dst, (x, kk)) in s.iter_mut().zip(d.iter().zip(&k[1])) {
                *dst = x + 0.5 * dt * kk;
            }
            self.apply_boundary(s);
            self.rhs_tangent_into(&st[2], s, &mut k[2]);
            for (dst, (x, kk)) in s.iter_mut().zip(d.iter().zip(&k[2])) {
                *dst = x + dt * kk;
            }
            self.apply_boundary(s);
            self.rhs_tangent_into(&st[3], s, &mut k[3]);
            for idx in 0..d.len() {
                d[idx] += dt / 6.0 * (k[0][idx] + 2.0 * k[1][idx] + 2.0 * k[2][idx] + k[3][idx]);
            }
            self.apply_boundary(&mut d);
        }
        d
    }

    /// Geostrophically balanced state: a Gaussian height bump on a uniform
    /// depth, with `u = -g h_y / f` and `v = g h_x / f`.
    pub fn balanced_bump(
        &self,
        mean_depth: f64,
        amplitude: f64,
        width: f64,
        center: (f64, f64),
    ) -> Result<DVector<f64>> {
        if !(mean_depth > 0.0 && width > 0.0) {
            return Err(Error::InvalidArgument("mean_depth and width must be positive".into()));
        }
        let n = self.cells();
        let g = self.params.gravity;
        let lx = self.params.length_x;
        let mut w = vec![0.0; 3 * n];
        for c in 0..n {
            let (x, y) = self.coordinates(c);
            let j = c / self.params.nx;
            let mut ddx = x - center.0;
            ddx -= lx * (ddx / lx).round();
            let ddy = y - center.1;
            let bump = amplitude * (-(ddx * ddx + ddy * ddy) / (2.0 * width * width)).exp();
            let h = mean_depth + bump;
            if h <= 0.0 {
                return Err(Error::InvalidArgument("bump makes the depth non-positive".into()));
            }
            let hx = -bump * ddx / (width * width);
            let hy = -bump * ddy / (width * width);
            let f = self.coriolis[j];
            if amplitude != 0.0 && f == 0.0 {
                return Err(Error::InvalidArgument(
                    "geostrophic balance needs a non-zero Coriolis parameter".into(),
                ));
            }
            if f != 0.0 {
                w[c] = -g * hy / f;
                w[n + c] = g * hx / f;
            }
            w[2 * n + c] = 2.0 * (g * h).sqrt();
        }
        self.apply_boundary(&mut w);
        Ok(DVector::from_vec(w))
    }

    /// Uniform fluid at rest with depth `depth`.
    pub fn rest_state(&self, depth: f64) -> DVector<f64> {
        let n = self.cells();
        let phi = 2.0 * (self.params.gravity * depth).sqrt();
        DVector::from_fn(3 * n, |i, _| if i >= 2 * n { phi } else { 0.0 })
    }
}

struct TangentBuffers {
    k: [Vec<f64>; 4],
    s: Vec<f64>,
}

impl TangentBuffers {
    fn new(len: usize) -> Self {
        Self {
            k: [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            s: vec![0.0; len],
        }
    }
}

impl Model for ShallowWaterModel {
    fn dim(&self) -> usize {
        3 * self.cells()
    }

    fn name(&self) -> &'static str {
        "swe"
    }

    fn steps_per_interval(&self) -> usize {
        self.params.steps_per_interval
    }

    fn step(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.integrate(x, self.params.dt, self.params.steps_per_interval)
    }

    fn interval_states(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::with_capacity(self.params.steps_per_interval);
        let mut w = x.clone();
        for _ in 0..self.params.steps_per_interval {
            w = self.integrate(&w, self.params.dt, 1)?;
            out.push(w.clone());
        }
        Ok(out)
    }

    fn tangent_linear(&self, x: &DVector<f64>, dx: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("swe tangent", self.dim(), dx.len())?;
        let stages = self.forward_with_stages(x)?;
        let mut buf = TangentBuffers::new(self.dim());
        Ok(DVector::from_vec(self.tangent_sweep(&stages, dx.as_slice(), &mut buf)))
    }

    fn adjoint(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("swe adjoint", self.dim(), lambda.len())?;
        Ok(self.jacobian(x)?.tr_mul(lambda))
    }

    fn jacobian_times(&self, x: &DVector<f64>, dirs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_dim("swe jacobian_times", self.dim(), dirs.nrows())?;
        let stages = self.forward_with_stages(x)?;
        let mut buf = TangentBuffers::new(self.dim());
        let mut out = DMatrix::zeros(self.dim(), dirs.ncols());
        for j in 0..dirs.ncols() {
            let col = self.tangent_sweep(&stages, dirs.column(j).as_slice(), &mut buf);
            out.column_mut(j).copy_from_slice(&col);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::propagate;
    use crate::state::RngStream;

    fn small(f_hat: f64, beta: f64) -> ShallowWaterModel {
        ShallowWaterModel::new(SweParams {
            nx: 8,
            ny: 8,
            f_hat,
            beta,
            steps_per_interval: 4,
            ..SweParams::default()
        })
        .unwrap()
    }

    fn perturbed_bump(model: &ShallowWaterModel, rng: &mut RngStream, scale: f64) -> DVector<f64> {
        let mut w = model.balanced_bump(1.0, 0.1, 0.15, (0.5, 0.5)).unwrap();
        w += rng.standard_normal_vector(model.dim()) * scale;
        model.apply_boundary(w.as_mut_slice());
        w
    }

    #[test]
    fn rest_state_is_an_equilibrium() {
        let model = small(0.0, 0.0);
        let w0 = model.rest_state(1.0);
        let w = model.integrate(&w0, model.params().dt, 100).unwrap();
        assert!((w - &w0).amax() < 1e-12);
    }

    #[test]
    fn uniform_state_has_zero_rhs() {
        let model = small(0.0, 0.0);
        let n = 64;
        let w = DVector::from_fn(3 * n, |i, _| match i / n {
            0 => 0.3,
            1 => 0.0,
            _ => 2.0,
        });
        assert!(model.swe_rhs(&w).unwrap().amax() == 0.0);
        let rest = small(5.0, 1.0).rest_state(2.0);
        assert!(small(5.0, 1.0).swe_rhs(&rest).unwrap().amax() == 0.0);
    }

    #[test]
    fn nonpositive_phi_is_rejected() {
        let model = small(1.0, 0.0);
        let mut w = model.rest_state(1.0);
        w[3 * 64 - 5] = -0.1;
        assert!(matches!(model.swe_rhs(&w), Err(Error::Divergence { .. })));
        assert!(propagate(&model, &w, 1).is_err());
    }

    // u = a sin(kx), v = 0, φ = φ0 with no y dependence. Exactly:
    // du/dt = -u u_x, dv/dt = 0, dφ/dt = -φ0/2 u_x.
    #[test]
    fn x_derivatives_converge_at_second_order() {
        let err_for = |nx: usize| {
            let model = ShallowWaterModel::new(SweParams {
                nx,
                ny: 5,
                f_hat: 0.0,
                beta: 0.0,
                ..SweParams::default()
            })
            .unwrap();
            let n = nx * 5;
            let k = 2.0 * std::f64::consts::PI;
            let (a, phi0) = (0.2, 2.0);
            let mut w = DVector::zeros(3 * n);
            for c in 0..n {
                let (x, _) = model.coordinates(c);
                w[c] = a * (k * x).sin();
                w[2 * n + c] = phi0;
            }
            let rhs = model.swe_rhs(&w).unwrap();
            let mut err: f64 = 0.0;
            for c in nx..4 * nx {
                let (x, _) = model.coordinates(c);
                let u = a * (k * x).sin();
                let ux = a * k * (k * x).cos();
                err = err.max((rhs[c] + u * ux).abs());
                err = err.max((rhs[2 * n + c] + 0.5 * phi0 * ux).abs());
                err = err.max(rhs[n + c].abs());
            }
            err
        };
        let coarse = err_for(16);
        let fine = err_for(32);
        let ratio = coarse / fine;
        assert!((3.6..4.4).contains(&ratio), "ratio={ratio}");
    }

    #[test]
    fn tangent_linear_is_first_order_accurate() {
        let model = small(4.0, 2.0);
        let mut rng = RngStream::new(17, 0);
        let x = perturbed_bump(&model, &mut rng, 1e-3);
        let mut d = rng.standard_normal_vector(model.dim());
        model.apply_boundary(d.as_mut_slice());
        let base = model.step(&x).unwrap();
        let tl = model.tangent_linear(&x, &d).unwrap();
        let rel = |eps: f64| {
            let pert = model.step(&(&x + &d * eps)).unwrap();
            (pert - &base - &tl * eps).norm() / (&tl * eps).norm()
        };
        let r3 = rel(1e-3);
        let r5 = rel(1e-5);
        assert!(r3 < 1e-2, "r3={r3}");
        // error ratio shrinks linearly in eps
        assert!(r5 < r3 * 0.05, "r3={r3} r5={r5}");
    }

    #[test]
    fn adjoint_inner_product_identity() {
        let model = small(4.0, 2.0);
        let mut rng = RngStream::new(23, 0);
        let x = perturbed_bump(&model, &mut rng, 1e-3);
        for _ in 0..3 {
            let dx = rng.standard_normal_vector(model.dim());
            let lam = rng.standard_normal_vector(model.dim());
            let lhs = model.tangent_linear(&x, &dx).unwrap().dot(&lam);
            let rhs = dx.dot(&model.adjoint(&x, &lam).unwrap());
            assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
        }
        assert_eq!(
            model.adjoint(&x, &DVector::zeros(model.dim())).unwrap(),
            DVector::zeros(model.dim())
        );
    }

    #[test]
    fn forward_then_backward_returns_near_start() {
        let model = small(4.0, 2.0);
        let mut rng = RngStream::new(5, 0);
        let x = perturbed_bump(&model, &mut rng, 0.0);
        let dt = model.params().dt;
        let back_err = |dt: f64| {
            let fwd = model.integrate(&x, dt, 1).unwrap();
            let back = model.integrate(&fwd, -dt, 1).unwrap();
            (back - &x).amax()
        };
        let e1 = back_err(dt);
        let e2 = back_err(dt / 2.0);
        assert!(e1 < 10.0 * dt * dt, "e1={e1}");
        assert!(e2 < e1);
    }

    #[test]
    fn boundary_conditions_hold_after_steps() {
        let model = small(4.0, 2.0);
        let mut rng = RngStream::new(8, 0);
        let x = perturbed_bump(&model, &mut rng, 1e-3);
        let traj = propagate(&model, &x, 3).unwrap();
        let n = 64;
        for w in &traj[1..] {
            for i in 0..8 {
                assert_eq!(w[n + i], 0.0);
                assert_eq!(w[n + 56 + i], 0.0);
                assert_eq!(w[i], w[8 + i]);
                assert_eq!(w[2 * n + 56 + i], w[2 * n + 48 + i]);
            }
        }
    }

    #[test]
    fn balanced_bump_is_nearly_steady() {
        let model = small(4.0, 0.0);
        let w0 = model.balanced_bump(1.0, 0.05, 0.15, (0.5, 0.5)).unwrap();
        let w1 = model.step(&w0).unwrap();
        let rest = model.rest_state(1.0);
        let signal = (&w0 - &rest).amax();
        assert!((&w1 - &w0).amax() < signal);
    }
}
