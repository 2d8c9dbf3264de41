//! Strong-constraint 4D-Var: cost, adjoint gradient and minimization.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::models::{propagate, Model, Trajectory};
use crate::optimize::{minimize, MinimizeOptions, MinimizeResult, Objective};
use crate::state::{ensure_finite, weighted_norm_sq, CovarianceOperator, GaussianDensity};

/// Linear observation operator.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationOperator {
    Identity { dim: usize },
    /// Picks the listed state components.
    Subsample { dim: usize, indices: Vec<usize> },
    Matrix { matrix: DMatrix<f64> },
}

impl ObservationOperator {
    pub fn state_dim(&self) -> usize {
        match self {
            Self::Identity { dim } | Self::Subsample { dim, .. } => *dim,
            Self::Matrix { matrix } => matrix.ncols(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Self::Identity { dim } => *dim,
            Self::Subsample { indices, .. } => indices.len(),
            Self::Matrix { matrix } => matrix.nrows(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.state_dim() == 0 || self.obs_dim() == 0 {
            return Err(Error::InvalidArgument("observation operator has an empty dimension".into()));
        }
        match self {
            Self::Subsample { dim, indices } => {
                if let Some(&i) = indices.iter().find(|&&i| i >= *dim) {
                    return Err(Error::InvalidArgument(format!(
                        "subsample index {i} out of range for dimension {dim}"
                    )));
                }
            }
            Self::Matrix { matrix } => ensure_finite("observation matrix", matrix.as_slice())?,
            Self::Identity { .. } => {}
        }
        Ok(())
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("observation apply", self.state_dim(), x.len())?;
        Ok(match self {
            Self::Identity { .. } => x.clone(),
            Self::Subsample { indices, .. } => DVector::from_iterator(indices.len(), indices.iter().map(|&i| x[i])),
            Self::Matrix { matrix } => matrix * x,
        })
    }

    /// `Hᵀ r`.
    pub fn adjoint_apply(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("observation adjoint", self.obs_dim(), r.len())?;
        Ok(match self {
            Self::Identity { .. } => r.clone(),
            Self::Subsample { dim, indices } => {
                let mut out = DVector::zeros(*dim);
                for (&i, v) in indices.iter().zip(r.iter()) {
                    out[i] += v;
                }
                out
            }
            Self::Matrix { matrix } => matrix.tr_mul(r),
        })
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            Self::Identity { dim } => DMatrix::identity(*dim, *dim),
            Self::Subsample { dim, indices } => {
                let mut m = DMatrix::zeros(indices.len(), *dim);
                for (r, &i) in indices.iter().enumerate() {
                    m[(r, i)] = 1.0;
                }
                m
            }
            Self::Matrix { matrix } => matrix.clone(),
        }
    }
}

/// One observation vector at interval index `time`.
#[derive(Debug, Clone)]
pub struct Observation {
    time: usize,
    values: DVector<f64>,
    operator: ObservationOperator,
    noise: CovarianceOperator,
}

impl Observation {
    pub fn new(time: usize, values: DVector<f64>, operator: ObservationOperator, noise: CovarianceOperator) -> Result<Self> {
        operator.validate()?;
        ensure_dim("observation values", operator.obs_dim(), values.len())?;
        ensure_dim("observation noise", operator.obs_dim(), noise.dim())?;
        ensure_finite("observation values", values.as_slice())?;
        noise.inverse()?;
        Ok(Self {
            time,
            values,
            operator,
            noise,
        })
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn operator(&self) -> &ObservationOperator {
        &self.operator
    }

    pub fn noise(&self) -> &CovarianceOperator {
        &self.noise
    }

    /// `(½‖y - Hx‖²_{R⁻¹}, Hᵀ R⁻¹ (y - Hx))`.
    pub fn misfit(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let r_inv = self.noise.inverse()?;
        let d = &self.values - self.operator.apply(x)?;
        let w = r_inv * &d;
        Ok((0.5 * d.dot(&w), self.operator.adjoint_apply(&w)?))
    }
}

/// Observations over one window. Errors are uncorrelated across times.
#[derive(Debug, Clone, Default)]
pub struct ObservationSet {
    items: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(items: Vec<Observation>) -> Self {
        Self { items }
    }

    pub fn push(&mut self, obs: Observation) {
        self.items.push(obs);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn last_time(&self) -> Option<usize> {
        self.items.iter().map(|o| o.time).max()
    }

    pub fn at(&self, time: usize) -> impl Iterator<Item = &Observation> {
        self.items.iter().filter(move |o| o.time == time)
    }
}

/// Prior, observations and model over `n_intervals` observation intervals.
#[derive(Clone)]
pub struct AssimilationWindow {
    prior: GaussianDensity,
    observations: ObservationSet,
    model: Arc<dyn Model>,
    n_intervals: usize,
}

impl std::fmt::Debug for AssimilationWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AssimilationWindow")
            .field("model", &self.model.name())
            .field("dim", &self.dim())
            .field("n_intervals", &self.n_intervals)
            .field("n_observations", &self.observations.len())
            .finish()
    }
}

/// Result of one forward/backward pass.
#[derive(Debug, Clone)]
pub struct AdjointSweep {
    pub cost: f64,
    pub trajectory: Trajectory,
    /// `λ_0 … λ_N`.
    pub lambdas: Vec<DVector<f64>>,
    pub gradient: DVector<f64>,
}

impl AssimilationWindow {
    pub fn new(
        prior: GaussianDensity,
        observations: ObservationSet,
        model: Arc<dyn Model>,
        n_intervals: usize,
    ) -> Result<Self> {
        ensure_dim("window prior", model.dim(), prior.dim())?;
        prior.cov.inverse()?;
        for o in observations.iter() {
            ensure_dim("window observation operator", model.dim(), o.operator.state_dim())?;
            if o.time > n_intervals {
                return Err(Error::InvalidArgument(format!(
                    "observation at interval {} is outside a window of {n_intervals} intervals",
                    o.time
                )));
            }
        }
        Ok(Self {
            prior,
            observations,
            model,
            n_intervals,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn prior(&self) -> &GaussianDensity {
        &self.prior
    }

    pub fn background(&self) -> &DVector<f64> {
        &self.prior.mean
    }

    /// Cached `B⁻¹`.
    pub fn b_inv(&self) -> &DMatrix<f64> {
        self.prior.cov.inverse().expect("checked at construction")
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.observations
    }

    pub fn model(&self) -> &Arc<dyn Model> {
        &self.model
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    /// Same prior and model with a different observation set.
    pub fn with_observations(&self, observations: ObservationSet) -> Result<Self> {
        Self::new(self.prior.clone(), observations, self.model.clone(), self.n_intervals)
    }

    /// Observation cost and adjoint forcing at interval `k`.
    pub fn misfit_at(&self, k: usize, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let mut cost = 0.0;
        let mut forcing = DVector::zeros(x.len());
        for o in self.observations.at(k) {
            let (c, f) = o.misfit(x)?;
            cost += c;
            forcing += f;
        }
        Ok((cost, forcing))
    }

    /// `½ Σ_k ‖y_k − H_k x_k‖²_{R⁻¹}` along a trajectory.
    pub fn observation_cost(&self, traj: &Trajectory) -> Result<f64> {
        ensure_dim("observation_cost trajectory", self.n_intervals + 1, traj.len())?;
        let mut total = 0.0;
        for o in self.observations.iter() {
            total += o.misfit(&traj[o.time])?.0;
        }
        Ok(total)
    }

    pub fn background_cost(&self, x0: &DVector<f64>) -> Result<f64> {
        Ok(0.5 * weighted_norm_sq(x0, self.background(), self.b_inv())?)
    }

    pub fn trajectory(&self, x0: &DVector<f64>) -> Result<Trajectory> {
        propagate(self.model.as_ref(), x0, self.n_intervals)
    }

    pub fn cost(&self, x0: &DVector<f64>) -> Result<f64> {
        ensure_dim("cost", self.dim(), x0.len())?;
        let traj = self.trajectory(x0)?;
        Ok(self.background_cost(x0)? + self.observation_cost(&traj)?)
    }

    pub fn gradient(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.sweep(x0)?.gradient)
    }

    /// Forward run, then the backward adjoint recursion
    /// `λ_N = H_Nᵀ R⁻¹ d_N`, `λ_k = Mᵀ(x_k) λ_{k+1} + H_kᵀ R⁻¹ d_k`,
    /// `∇J = B⁻¹(x0 − x_b) − λ_0`.
    pub fn sweep(&self, x0: &DVector<f64>) -> Result<AdjointSweep> {
        ensure_dim("gradient", self.dim(), x0.len())?;
        let trajectory = self.trajectory(x0)?;
        let n = self.n_intervals;
        let mut lambdas = vec![DVector::zeros(0); n + 1];
        let (mut obs_cost, forcing) = self.misfit_at(n, &trajectory[n])?;
        lambdas[n] = forcing;
        for k in (0..n).rev() {
            let (c, forcing) = self.misfit_at(k, &trajectory[k])?;
            obs_cost += c;
            lambdas[k] = self.model.adjoint(&trajectory[k], &lambdas[k + 1])? + forcing;
        }
        let gradient = self.b_inv() * (x0 - self.background()) - &lambdas[0];
        Ok(AdjointSweep {
            cost: self.background_cost(x0)? + obs_cost,
            trajectory,
            lambdas,
            gradient,
        })
    }

    pub fn minimize(&self, x_init: &DVector<f64>, opts: &MinimizeOptions) -> Result<MinimizeResult> {
        minimize(self, x_init, opts)
    }
}

impl Objective for AssimilationWindow {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let s = self.sweep(x)?;
        Ok((s.cost, s.gradient))
    }
}

/// Background covariance `σ_b² (ρ_ij)`: a Gaussian correlation
/// `exp(−d²/2ℓ²)` between components of the same field, zero across fields.
/// `points[i] = (field, x, y)`; `period_x` wraps x distances.
pub fn background_covariance(
    sigma_b: f64,
    correlation_length: Option<f64>,
    points: &[(usize, f64, f64)],
    period_x: Option<f64>,
) -> Result<CovarianceOperator> {
    if !(sigma_b > 0.0 && sigma_b.is_finite()) {
        return Err(Error::InvalidArgument("sigma_b must be positive".into()));
    }
    let n = points.len();
    let var = sigma_b * sigma_b;
    match correlation_length {
        None => CovarianceOperator::scaled_identity(n, var),
        Some(l) if l > 0.0 => {
            let m = DMatrix::from_fn(n, n, |i, j| {
                let (fi, xi, yi) = points[i];
                let (fj, xj, yj) = points[j];
                if fi != fj {
                    return 0.0;
                }
                let mut dx = xi - xj;
                if let Some(p) = period_x {
                    dx -= p * (dx / p).round();
                }
                let dy = yi - yj;
                var * (-(dx * dx + dy * dy) / (2.0 * l * l)).exp()
            });
            let cov = CovarianceOperator::from_symmetrized(m)?;
            if !cov.is_positive_definite() {
                return Err(Error::NotPositiveDefinite(
                    "correlated background covariance; shorten the correlation length".into(),
                ));
            }
            Ok(cov)
        }
        Some(l) => Err(Error::InvalidArgument(format!("correlation length must be positive, got {l}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearModel, ShallowWaterModel, SweParams};
    use crate::state::RngStream;

    fn identity_obs(time: usize, y: DVector<f64>, var: f64) -> Observation {
        let n = y.len();
        Observation::new(
            time,
            y,
            ObservationOperator::Identity { dim: n },
            CovarianceOperator::scaled_identity(n, var).unwrap(),
        )
        .unwrap()
    }

    fn random_spd(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
        let m = &a * a.transpose() + DMatrix::identity(n, n);
        (&m + m.transpose()) * 0.5
    }

    struct Linear4 {
        win: AssimilationWindow,
        m: DMatrix<f64>,
        b: DMatrix<f64>,
        h: DMatrix<f64>,
        r: DMatrix<f64>,
        ys: Vec<(usize, DVector<f64>)>,
    }

    fn linear_case(seed: u64) -> Linear4 {
        let mut rng = RngStream::new(seed, 0);
        let model = LinearModel::random_scaled_orthogonal(4, 0.95, &mut rng).unwrap();
        let m = model.matrix().clone();
        let b = random_spd(4, &mut rng);
        let h = DMatrix::from_fn(3, 4, |_, _| rng.standard_normal());
        let r = random_spd(3, &mut rng) * 0.5;
        let r = (&r + r.transpose()) * 0.5;
        let xb = rng.standard_normal_vector(4);
        let mut set = ObservationSet::default();
        let mut ys = Vec::new();
        for k in [0usize, 2, 3] {
            let y = rng.standard_normal_vector(3);
            set.push(
                Observation::new(
                    k,
                    y.clone(),
                    ObservationOperator::Matrix { matrix: h.clone() },
                    CovarianceOperator::new(r.clone()).unwrap(),
                )
                .unwrap(),
            );
            ys.push((k, y));
        }
        let prior = GaussianDensity::new(xb, CovarianceOperator::new(b.clone()).unwrap()).unwrap();
        let win = AssimilationWindow::new(prior, set, Arc::new(model), 3).unwrap();
        Linear4 { win, m, b, h, r, ys }
    }

    // Direct quadratic form ½(x−xb)ᵀB⁻¹(x−xb) + ½Σ(y−HMᵏx)ᵀR⁻¹(y−HMᵏx).
    fn direct_cost(c: &Linear4, x: &DVector<f64>) -> f64 {
        let b_inv = c.b.clone().try_inverse().unwrap();
        let r_inv = c.r.clone().try_inverse().unwrap();
        let d = x - c.win.background();
        let mut j = 0.5 * (d.transpose() * &b_inv * &d)[(0, 0)];
        for (k, y) in &c.ys {
            let mk = c.m.pow(*k as u32);
            let e = y - &c.h * mk * x;
            j += 0.5 * (e.transpose() * &r_inv * &e)[(0, 0)];
        }
        j
    }

    // A0⁻¹ = B⁻¹ + Σ(HMᵏ)ᵀR⁻¹HMᵏ, mean = A0(B⁻¹xb + Σ(HMᵏ)ᵀR⁻¹y).
    fn posterior_mean(c: &Linear4) -> DVector<f64> {
        let b_inv = c.b.clone().try_inverse().unwrap();
        let r_inv = c.r.clone().try_inverse().unwrap();
        let mut prec = b_inv.clone();
        let mut rhs = &b_inv * c.win.background();
        for (k, y) in &c.ys {
            let g = &c.h * c.m.pow(*k as u32);
            prec += g.transpose() * &r_inv * &g;
            rhs += g.transpose() * &r_inv * y;
        }
        prec.lu().solve(&rhs).unwrap()
    }

    fn central_fd(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>, i: usize, h: f64) -> f64 {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    #[test]
    fn zero_cost_at_background_with_perfect_obs() {
        let model = Arc::new(LinearModel::identity(2));
        let xb = DVector::from_vec(vec![1.0, -1.0]);
        let set = ObservationSet::new(vec![identity_obs(0, xb.clone(), 1.0), identity_obs(2, xb.clone(), 1.0)]);
        let prior = GaussianDensity::new(xb.clone(), CovarianceOperator::scaled_identity(2, 1.0).unwrap()).unwrap();
        let win = AssimilationWindow::new(prior, set, model, 2).unwrap();
        assert_eq!(win.cost(&xb).unwrap(), 0.0);
    }

    #[test]
    fn scalar_cost_is_one() {
        let model = Arc::new(LinearModel::identity(1));
        let set = ObservationSet::new(vec![identity_obs(0, DVector::zeros(1), 1.0)]);
        let prior = GaussianDensity::new(DVector::zeros(1), CovarianceOperator::scaled_identity(1, 1.0).unwrap()).unwrap();
        let win = AssimilationWindow::new(prior, set, model, 0).unwrap();
        assert_eq!(win.cost(&DVector::from_element(1, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn cost_matches_direct_quadratic() {
        let c = linear_case(1);
        let mut rng = RngStream::new(99, 0);
        for _ in 0..5 {
            let x = rng.standard_normal_vector(4);
            let got = c.win.cost(&x).unwrap();
            let want = direct_cost(&c, &x);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn gradient_without_observations() {
        let c = linear_case(2);
        let win = c.win.with_observations(ObservationSet::default()).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let want = c.b.clone().try_inverse().unwrap() * (&x - win.background());
        assert!((win.gradient(&x).unwrap() - want).amax() < 1e-10);
    }

    #[test]
    fn gradient_vanishes_at_analytic_mean() {
        let c = linear_case(3);
        let xa = posterior_mean(&c);
        let g = c.win.gradient(&xa).unwrap();
        let scale = (c.win.b_inv() * c.win.background()).norm();
        assert!(g.norm() < 1e-8 * scale.max(1.0), "{}", g.norm());
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let c = linear_case(4);
        let x = RngStream::new(7, 0).standard_normal_vector(4);
        let g = c.win.gradient(&x).unwrap();
        let f = |x: &DVector<f64>| c.win.cost(x).unwrap();
        for i in 0..4 {
            let fd = central_fd(&f, &x, i, 1e-5);
            assert!((g[i] - fd).abs() <= 1e-6 * g[i].abs().max(1.0), "{i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn swe_gradient_matches_finite_differences() {
        let model = ShallowWaterModel::new(SweParams {
            nx: 8,
            ny: 8,
            steps_per_interval: 3,
            ..SweParams::default()
        })
        .unwrap();
        let mut rng = RngStream::new(11, 0);
        let truth = model.balanced_bump(1.0, 0.1, 0.15, (0.5, 0.5)).unwrap();
        let n = model.dim();
        let traj = propagate(&model, &truth, 2).unwrap();
        let mut set = ObservationSet::default();
        for k in [1usize, 2] {
            let y = &traj[k] + rng.standard_normal_vector(n) * 0.01;
            set.push(identity_obs(k, y, 1e-4));
        }
        let mut xb = truth.clone() + rng.standard_normal_vector(n) * 0.01;
        model.apply_boundary(xb.as_mut_slice());
        let prior = GaussianDensity::new(xb.clone(), CovarianceOperator::scaled_identity(n, 1e-4).unwrap()).unwrap();
        let win = AssimilationWindow::new(prior, set, Arc::new(model), 2).unwrap();
        let x = xb + rng.standard_normal_vector(n) * 0.005;
        let g = win.gradient(&x).unwrap();
        let f = |x: &DVector<f64>| win.cost(x).unwrap();
        let ginf = g.amax();
        for _ in 0..20 {
            let i = rng.index(n);
            let fd = central_fd(&f, &x, i, 1e-6);
            let denom = g[i].abs().max(fd.abs()).max(1e-3 * ginf);
            assert!((g[i] - fd).abs() / denom < 1e-4, "{i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn cost_is_invariant_to_observation_order() {
        let c = linear_case(5);
        let mut items: Vec<Observation> = c.win.observations().iter().cloned().collect();
        items.reverse();
        let win2 = c.win.with_observations(ObservationSet::new(items)).unwrap();
        let x = RngStream::new(1, 0).standard_normal_vector(4);
        let (a, b) = (c.win.cost(&x).unwrap(), win2.cost(&x).unwrap());
        assert!((a - b).abs() <= 1e-14 * a.abs());
    }

    #[test]
    fn minimize_reaches_analytic_mean() {
        let c = linear_case(6);
        let xa = posterior_mean(&c);
        let opts = MinimizeOptions {
            gtol: 1e-10,
            ..Default::default()
        };
        let res = c.win.minimize(c.win.background(), &opts).unwrap();
        assert!(res.converged);
        assert!((&res.x - &xa).norm() <= 1e-6 * xa.norm());
        let tight = MinimizeOptions {
            gtol_abs: 1e-8,
            ..opts
        };
        let again = c.win.minimize(&res.x, &tight).unwrap();
        assert!(again.iterations <= 1);
    }

    #[test]
    fn subsample_operator_adjoint() {
        let op = ObservationOperator::Subsample {
            dim: 5,
            indices: vec![4, 0, 2],
        };
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(op.apply(&x).unwrap().as_slice(), &[5.0, 1.0, 3.0]);
        let r = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        assert_eq!(op.adjoint_apply(&r).unwrap(), op.matrix().transpose() * &r);
        assert!(ObservationOperator::Subsample { dim: 2, indices: vec![2] }.validate().is_err());
    }

    #[test]
    fn observation_outside_window_rejected() {
        let model = Arc::new(LinearModel::identity(1));
        let set = ObservationSet::new(vec![identity_obs(4, DVector::zeros(1), 1.0)]);
        let prior = GaussianDensity::new(DVector::zeros(1), CovarianceOperator::scaled_identity(1, 1.0).unwrap()).unwrap();
        assert!(AssimilationWindow::new(prior, set, model, 3).is_err());
    }

    #[test]
    fn correlated_background_is_spd() {
        let pts: Vec<(usize, f64, f64)> = (0..2)
            .flat_map(|f| (0..16).map(move |c| (f, (c % 4) as f64 * 0.25, (c / 4) as f64 / 3.0)))
            .collect();
        let b = background_covariance(0.1, Some(0.2), &pts, Some(1.0)).unwrap();
        assert!(b.is_positive_definite());
        assert_eq!(b.matrix()[(0, 16)], 0.0);
        assert!((b.matrix()[(0, 0)] - 0.01).abs() < 1e-15);
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn cost_along_a_line_is_quadratic(seed in 0u64..1000, t1 in -2.0f64..2.0) {
            let c = linear_case(seed);
            let mut rng = RngStream::new(seed, 1);
            let x = rng.standard_normal_vector(4);
            let d = rng.standard_normal_vector(4);
            let f = |t: f64| c.win.cost(&(&x + &d * t)).unwrap();
            // Fit through t = -1, 0, 1 and evaluate elsewhere.
            let (fm, f0, fp) = (f(-1.0), f(0.0), f(1.0));
            let a = 0.5 * (fp + fm) - f0;
            let b = 0.5 * (fp - fm);
            let pred = a * t1 * t1 + b * t1 + f0;
            prop_assert!((pred - f(t1)).abs() <= 1e-10 * f0.abs().max(1.0));
        }
    }
}
