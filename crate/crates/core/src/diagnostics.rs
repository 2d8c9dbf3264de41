//! Closed-form Gaussian posteriors for linear windows, projected-posterior
//! identities, KL divergences, the two-sample covariance test, ensemble
//! moments and RMSE.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure_dim, Error, Result};
use crate::fourdvar::AssimilationWindow;
use crate::models::{propagate, Model};
use crate::rom::{PodBasis, RomProblem};
use crate::state::{weighted_norm_sq, CovarianceOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentsVariant {
    Full,
    ApproxRom,
    /// Reduced coordinates `x̃ = Vᵀx`.
    Reduced,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mean: DVector<f64>,
    pub cov: CovarianceOperator,
    pub variant: MomentsVariant,
}

fn linear_parts(win: &AssimilationWindow) -> Result<&DMatrix<f64>> {
    win.model()
        .linear_operator()
        .ok_or_else(|| Error::Unsupported(format!("closed-form moments need a linear model, got '{}'", win.model().name())))
}

/// Gaussian posterior with precision `P0 + Σ G_kᵀ R_k⁻¹ G_k` and mean
/// `A (P0 m0 + Σ G_kᵀ R_k⁻¹ y_k)`, where `G_k = H_k · prop(k)`.
fn gaussian_update(
    win: &AssimilationWindow,
    prior_precision: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    prop: impl Fn(usize) -> DMatrix<f64>,
    variant: MomentsVariant,
) -> Result<PosteriorMoments> {
    let mut precision = prior_precision.clone();
    let mut rhs = prior_precision * prior_mean;
    for o in win.observations().iter() {
        let g = o.operator().matrix() * prop(o.time());
        let r_inv = o.noise().inverse()?;
        precision += g.transpose() * r_inv * &g;
        rhs += g.transpose() * (r_inv * o.values());
    }
    let precision = CovarianceOperator::from_symmetrized(precision)?;
    let cov = CovarianceOperator::from_symmetrized(precision.inverse()?.clone())?;
    let mean = precision.inverse_apply(&rhs)?;
    Ok(PosteriorMoments { mean, cov, variant })
}

/// Posterior `N(x_a, A0)` of a linear window:
/// `A0⁻¹ = B⁻¹ + Σ (Mᵏ)ᵀ Hᵀ R⁻¹ H Mᵏ`, `x_a = A0 (B⁻¹ x_b + Σ (Mᵏ)ᵀ Hᵀ R⁻¹ y_k)`.
pub fn linear_posterior_moments(win: &AssimilationWindow) -> Result<PosteriorMoments> {
    let m = linear_parts(win)?;
    let powers = matrix_powers(m, win.n_intervals());
    gaussian_update(win, win.b_inv(), win.background(), |k| powers[k].clone(), MomentsVariant::Full)
}

/// Posterior of the full-space potential whose likelihood runs through the
/// reduced model: as [`linear_posterior_moments`] with `Mᵏ` replaced by
/// `(P M P)ᵏ`, `P = V Vᵀ` (the `k = 0` term keeps the identity).
pub fn approx_posterior_moments(win: &AssimilationWindow, basis: &PodBasis) -> Result<PosteriorMoments> {
    let m = linear_parts(win)?;
    ensure_dim("approx moments basis", win.dim(), basis.nvar())?;
    let p = basis.projector();
    let pmp = &p * m * &p;
    let powers = matrix_powers(&pmp, win.n_intervals());
    gaussian_update(win, win.b_inv(), win.background(), |k| powers[k].clone(), MomentsVariant::ApproxRom)
}

/// Posterior of the reduced potential in reduced coordinates: prior
/// `N(Vᵀx_b, VᵀBV)` and observation maps `H V M̃ᵏ`, `M̃ = VᵀMV`.
pub fn reduced_posterior_moments(rom: &RomProblem) -> Result<PosteriorMoments> {
    let win = rom.window();
    let m = linear_parts(win)?;
    let v = rom.basis().v();
    let mt = v.transpose() * m * v;
    let powers = matrix_powers(&mt, win.n_intervals());
    gaussian_update(
        win,
        rom.reduced_background_cov().inverse()?,
        rom.reduced_background(),
        |k| v * &powers[k],
        MomentsVariant::Reduced,
    )
}

fn matrix_powers(m: &DMatrix<f64>, n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(DMatrix::identity(m.nrows(), m.ncols()));
    for k in 0..n {
        out.push(m * &out[k]);
    }
    out
}

/// Spectral pseudo-inverse and pseudo-determinant of a symmetric matrix;
/// eigenvalues below `1e-12 · λ_max` count as zero.
#[derive(Debug, Clone)]
pub struct PseudoSpectral {
    pub pinv: DMatrix<f64>,
    pub log_pdet: f64,
    pub rank: usize,
}

pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<PseudoSpectral> {
    if !a.is_square() {
        return Err(Error::InvalidArgument("pseudo-inverse needs a square matrix".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-12 * lmax;
    let n = a.nrows();
    let mut pinv = DMatrix::zeros(n, n);
    let mut log_pdet = 0.0;
    let mut rank = 0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            let q = eig.eigenvectors.column(i);
            pinv += q * q.transpose() / l;
            log_pdet += l.ln();
            rank += 1;
        }
    }
    Ok(PseudoSpectral { pinv, log_pdet, rank })
}

/// Both sides of `‖Px − Px_a‖²_{(P A0 P)†} = ‖Vᵀx − Vᵀx_a‖²_{(VᵀA0V)⁻¹}`.
pub fn projected_pdf_quadform_check(
    a0: &DMatrix<f64>,
    v: &DMatrix<f64>,
    x0: &DVector<f64>,
    xa: &DVector<f64>,
) -> Result<(f64, f64)> {
    ensure_dim("quadform A0", v.nrows(), a0.nrows())?;
    ensure_dim("quadform x0", v.nrows(), x0.len())?;
    ensure_dim("quadform xa", v.nrows(), xa.len())?;
    let p = v * v.transpose();
    let pap = &p * a0 * &p;
    let lhs = weighted_norm_sq(&(&p * x0), &(&p * xa), &pseudo_inverse(&pap)?.pinv)?;
    let vav = CovarianceOperator::from_symmetrized(v.transpose() * a0 * v)?;
    let rhs = weighted_norm_sq(&v.tr_mul(x0), &v.tr_mul(xa), vav.inverse()?)?;
    Ok((lhs, rhs))
}

/// KL divergence of the projected (singular) posterior `N(P x_a, P A0 P)`
/// from `N(x_a, A0)`:
/// `½[(Nvar − Nred) ln 2π + ln(det A0 / det* Ă) + ‖P x_a − x_a‖²_{A0⁻¹} + tr((A0⁻¹ − Ă†) Ă)]`.
pub fn kl_projected_vs_full(a0: &DMatrix<f64>, xa: &DVector<f64>, v: &DMatrix<f64>) -> Result<f64> {
    ensure_dim("kl A0", v.nrows(), a0.nrows())?;
    ensure_dim("kl xa", v.nrows(), xa.len())?;
    let nvar = v.nrows() as f64;
    let nred = v.ncols() as f64;
    let a0_op = CovarianceOperator::from_symmetrized(a0.clone())?;
    let a0_inv = a0_op.inverse()?;
    let p = v * v.transpose();
    let a_breve = &p * a0 * &p;
    let ps = pseudo_inverse(&a_breve)?;
    let xa_breve = &p * xa;
    let log_ratio = a0_op.log_det()? - ps.log_pdet;
    let quad = weighted_norm_sq(&xa_breve, xa, a0_inv)?;
    let trace = ((a0_inv - &ps.pinv) * &a_breve).trace();
    Ok(0.5 * ((nvar - nred) * (2.0 * PI).ln() + log_ratio + quad + trace))
}

/// `π̂(x0)/π(x0) = exp(J_obs(x0) − Ĵ_obs(x0))`, full against reduced-model
/// observation terms.
pub fn likelihood_ratio(rom: &RomProblem, x0: &DVector<f64>) -> Result<f64> {
    Ok(observation_term_gap(rom, x0)?.exp())
}

fn observation_term_gap(rom: &RomProblem, x0: &DVector<f64>) -> Result<f64> {
    let win = rom.window();
    let full = win.observation_cost(&win.trajectory(x0)?)?;
    let approx = rom.approx_observation_cost(x0)?;
    Ok(full - approx)
}

/// Monte Carlo estimate of `D_KL(π̂ ‖ π)` as the mean of `J_obs − Ĵ_obs`
/// over draws from `π̂`.
pub fn kl_estimate(rom: &RomProblem, samples: &[DVector<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("KL estimate needs at least one sample".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += observation_term_gap(rom, s)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchottForm {
    /// `(1 − (n_i − 2)/η_i · tr S_i²)` grouped as typeset.
    AsPrinted,
    /// `(1 − (n_i − 2)/η_i) · tr S_i²`, the unbiased estimator of `tr Σ_i²`.
    BiasCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovTestReport {
    pub t_mn: f64,
    pub theta: f64,
    pub t_mn_star: f64,
    pub n1: usize,
    pub n2: usize,
    pub alpha: f64,
    pub z_crit: f64,
    pub reject: bool,
    pub form: SchottForm,
}

/// Two-sample test of `Σ1 = Σ2` from sample covariances `S1`, `S2` of
/// ensembles of sizes `n1`, `n2`. Rejects when `|t*| > z_{α/2}`.
pub fn schott_statistic(
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    n1: usize,
    n2: usize,
    alpha: f64,
    form: SchottForm,
) -> Result<CovTestReport> {
    if !s1.is_square() || s1.shape() != s2.shape() {
        return Err(Error::dim("schott covariance shapes", s1.nrows(), s2.nrows()));
    }
    if n1 < 3 || n2 < 3 {
        return Err(Error::InvalidArgument("ensemble sizes must be at least 3".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (f1, f2) = (n1 as f64, n2 as f64);
    let eta1 = (f1 + 2.0) * (f1 - 1.0);
    let eta2 = (f2 + 2.0) * (f2 - 1.0);
    let tr_sq = |m: &DMatrix<f64>| m.component_mul(&m.transpose()).sum();
    let (tr1, tr2) = (s1.trace(), s2.trace());
    let (tr11, tr22) = (tr_sq(s1), tr_sq(s2));
    let tr12 = s1.component_mul(&s2.transpose()).sum();
    let (own1, own2) = match form {
        SchottForm::AsPrinted => (1.0 - (f1 - 2.0) / eta1 * tr11, 1.0 - (f2 - 2.0) / eta2 * tr22),
        SchottForm::BiasCorrected => ((1.0 - (f1 - 2.0) / eta1) * tr11, (1.0 - (f2 - 2.0) / eta2) * tr22),
    };
    let t_mn = own1 + own2 - 2.0 * tr12 - f1 / eta1 * tr1 * tr1 - f2 / eta2 * tr2 * tr2;
    let n = f1 + f2;
    let s = s1 * (f1 / n) + s2 * (f2 / n);
    let a = n * n / ((n + 2.0) * (n - 1.0)) * (tr_sq(&s) - s.trace().powi(2) / n);
    let theta = (4.0 * a * a * ((f1 + f2) / (f1 * f2)).powi(2)).sqrt();
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Degenerate("pooled covariance gives a zero scale".into()));
    }
    let t_mn_star = t_mn / theta;
    let z_crit = standard_normal_upper_quantile(alpha / 2.0);
    Ok(CovTestReport {
        t_mn,
        theta,
        t_mn_star,
        n1,
        n2,
        alpha,
        z_crit,
        reject: t_mn_star.abs() > z_crit,
        form,
    })
}

/// `z` with `P(Z ≥ z) = q` for a standard normal `Z`.
pub fn standard_normal_upper_quantile(q: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(1.0 - q)
}

/// Sample mean and unbiased sample covariance.
pub fn ensemble_moments(samples: &[DVector<f64>]) -> Result<PosteriorMoments> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {}", samples.len())));
    }
    let n = samples[0].len();
    for s in samples {
        ensure_dim("ensemble member", n, s.len())?;
    }
    let k = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(n), |acc, s| acc + s) / k;
    let mut anomalies = DMatrix::zeros(n, samples.len());
    for (j, s) in samples.iter().enumerate() {
        anomalies.set_column(j, &(s - &mean));
    }
    let cov = &anomalies * anomalies.transpose() / (k - 1.0);
    Ok(PosteriorMoments {
        mean,
        cov: CovarianceOperator::from_symmetrized(cov)?,
        variant: MomentsVariant::Ensemble,
    })
}

/// `‖a − b‖₂ / √n`.
pub fn rmse(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    ensure_dim("rmse", a.len(), b.len())?;
    Ok((a - b).norm() / (a.len() as f64).sqrt())
}

/// RMSE at each observation time of the trajectories started from
/// `analysis_x0` and `truth_x0`.
pub fn rmse_series(analysis_x0: &DVector<f64>, truth_x0: &DVector<f64>, model: &dyn Model, n_intervals: usize) -> Result<Vec<f64>> {
    ensure_dim("rmse_series", truth_x0.len(), analysis_x0.len())?;
    let a = propagate(model, analysis_x0, n_intervals)?;
    let t = propagate(model, truth_x0, n_intervals)?;
    a.iter().zip(&t).map(|(x, y)| rmse(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourdvar::{Observation, ObservationOperator, ObservationSet};
    use crate::models::LinearModel;
    use crate::state::{GaussianDensity, RngStream};
    use std::sync::Arc;

    fn random_spd(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
        let m = &a * a.transpose() + DMatrix::identity(n, n);
        (&m + m.transpose()) * 0.5
    }

    fn random_orthonormal(n: usize, p: usize, rng: &mut RngStream) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, p, |_, _| rng.standard_normal());
        g.qr().q().columns(0, p).into_owned()
    }

    fn linear_window(n: usize, seed: u64) -> AssimilationWindow {
        let mut rng = RngStream::new(seed, 0);
        let model = LinearModel::random_scaled_orthogonal(n, 0.95, &mut rng).unwrap();
        let mut set = ObservationSet::default();
        for k in [0usize, 2, 3] {
            set.push(
                Observation::new(
                    k,
                    rng.standard_normal_vector(n),
                    ObservationOperator::Identity { dim: n },
                    CovarianceOperator::new(random_spd(n, &mut rng)).unwrap(),
                )
                .unwrap(),
            );
        }
        let prior = GaussianDensity::new(rng.standard_normal_vector(n), CovarianceOperator::new(random_spd(n, &mut rng)).unwrap()).unwrap();
        AssimilationWindow::new(prior, set, Arc::new(model), 3).unwrap()
    }

    #[test]
    fn no_observations_returns_prior() {
        let win = linear_window(4, 1);
        let win = win.with_observations(ObservationSet::default()).unwrap();
        let m = linear_posterior_moments(&win).unwrap();
        assert!((m.cov.matrix() - win.prior().cov.matrix()).amax() < 1e-10);
        assert!((m.mean - win.background()).amax() < 1e-10);
        let mut rng = RngStream::new(2, 0);
        let basis = PodBasis::from_orthonormal(random_orthonormal(4, 2, &mut rng), "v").unwrap();
        let a = approx_posterior_moments(&win, &basis).unwrap();
        assert!((a.cov.matrix() - win.prior().cov.matrix()).amax() < 1e-10);
        assert!((a.mean - win.background()).amax() < 1e-10);
    }

    #[test]
    fn scalar_posterior() {
        let model = Arc::new(LinearModel::identity(1));
        let set = ObservationSet::new(vec![Observation::new(
            0,
            DVector::from_element(1, 3.0),
            ObservationOperator::Identity { dim: 1 },
            CovarianceOperator::scaled_identity(1, 1.0).unwrap(),
        )
        .unwrap()]);
        let prior = GaussianDensity::new(DVector::from_element(1, 1.0), CovarianceOperator::scaled_identity(1, 1.0).unwrap()).unwrap();
        let win = AssimilationWindow::new(prior, set, model, 0).unwrap();
        let m = linear_posterior_moments(&win).unwrap();
        assert!((m.cov.matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((m.mean[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn posterior_mean_zeroes_the_gradient() {
        let win = linear_window(4, 3);
        let m = linear_posterior_moments(&win).unwrap();
        assert!(win.gradient(&m.mean).unwrap().norm() < 1e-8);
    }

    #[test]
    fn nonlinear_model_unsupported() {
        use crate::models::{ShallowWaterModel, SweParams};
        let model = ShallowWaterModel::new(SweParams {
            nx: 3,
            ny: 3,
            ..SweParams::default()
        })
        .unwrap();
        let n = model.dim();
        let prior = GaussianDensity::new(model.rest_state(1.0), CovarianceOperator::scaled_identity(n, 1.0).unwrap()).unwrap();
        let win = AssimilationWindow::new(prior, ObservationSet::default(), Arc::new(model), 1).unwrap();
        assert!(matches!(linear_posterior_moments(&win), Err(Error::Unsupported(_))));
    }

    #[test]
    fn approx_moments_with_square_basis_equal_full() {
        let win = linear_window(5, 4);
        let mut rng = RngStream::new(5, 0);
        let basis = PodBasis::from_orthonormal(random_orthonormal(5, 5, &mut rng), "q").unwrap();
        let full = linear_posterior_moments(&win).unwrap();
        let approx = approx_posterior_moments(&win, &basis).unwrap();
        assert!((full.cov.matrix() - approx.cov.matrix()).amax() < 1e-10);
        assert!((full.mean - approx.mean).amax() < 1e-10);
    }

    #[test]
    fn approx_covariance_is_not_the_projection() {
        let win = linear_window(6, 6);
        let mut rng = RngStream::new(7, 0);
        let basis = PodBasis::from_orthonormal(random_orthonormal(6, 3, &mut rng), "v").unwrap();
        let full = linear_posterior_moments(&win).unwrap();
        let approx = approx_posterior_moments(&win, &basis).unwrap();
        let p = basis.projector();
        let projected = &p * full.cov.matrix() * &p;
        assert!((approx.cov.matrix() - projected).amax() > 1e-3);
    }

    #[test]
    fn approx_mean_zeroes_the_approx_gradient() {
        let win = Arc::new(linear_window(6, 8));
        let mut rng = RngStream::new(9, 0);
        let basis = Arc::new(PodBasis::from_orthonormal(random_orthonormal(6, 3, &mut rng), "v").unwrap());
        let approx = approx_posterior_moments(&win, &basis).unwrap();
        let rom = RomProblem::new(win.clone(), basis).unwrap();
        assert!(rom.approx_gradient(&approx.mean).unwrap().norm() < 1e-8);
        let red = reduced_posterior_moments(&rom).unwrap();
        assert!(rom.reduced_gradient(&red.mean).unwrap().norm() < 1e-8);
    }

    #[test]
    fn quadform_identity_cases() {
        let mut rng = RngStream::new(10, 0);
        let a0 = random_spd(8, &mut rng);
        let xa = rng.standard_normal_vector(8);
        let v = random_orthonormal(8, 3, &mut rng);
        assert_eq!(projected_pdf_quadform_check(&a0, &v, &xa, &xa).unwrap(), (0.0, 0.0));
        let x0 = rng.standard_normal_vector(8);
        let (l, r) = projected_pdf_quadform_check(&a0, &v, &x0, &xa).unwrap();
        assert!((l - r).abs() / (1.0 + r.abs()) < 1e-8, "{l} {r}");
        let q = random_orthonormal(8, 8, &mut rng);
        let (l, r) = projected_pdf_quadform_check(&a0, &q, &x0, &xa).unwrap();
        let direct = weighted_norm_sq(&x0, &xa, &a0.clone().try_inverse().unwrap()).unwrap();
        assert!((l - direct).abs() < 1e-8 * direct && (r - direct).abs() < 1e-8 * direct);
    }

    #[test]
    fn kl_cases() {
        let mut rng = RngStream::new(11, 0);
        let a0 = random_spd(5, &mut rng);
        let xa = rng.standard_normal_vector(5);
        let q = random_orthonormal(5, 5, &mut rng);
        assert!(kl_projected_vs_full(&a0, &xa, &q).unwrap().abs() < 1e-10);
        // Nvar = 2, Nred = 1, A0 = I, x_a ∈ range(V)
        let v = DMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        let xa = DVector::from_vec(vec![1.2, 1.6]);
        let kl = kl_projected_vs_full(&DMatrix::identity(2, 2), &xa, &v).unwrap();
        assert!((kl - 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_independent_assembly() {
        let mut rng = RngStream::new(12, 0);
        for _ in 0..5 {
            let a0 = random_spd(6, &mut rng);
            let xa = rng.standard_normal_vector(6);
            let v = random_orthonormal(6, 2, &mut rng);
            // det* of P A0 P equals det(VᵀA0V); its pseudo-inverse is V (VᵀA0V)⁻¹ Vᵀ.
            let vav = v.transpose() * &a0 * &v;
            let pap = &v * &vav * v.transpose();
            let pinv = &v * vav.clone().try_inverse().unwrap() * v.transpose();
            let a0_inv = a0.clone().try_inverse().unwrap();
            let d = &v * v.transpose() * &xa - &xa;
            let t1 = 4.0 * (2.0 * PI).ln();
            let t2 = (a0.determinant() / vav.determinant()).ln();
            let t3 = (d.transpose() * &a0_inv * &d)[(0, 0)];
            let t4 = ((&a0_inv - pinv) * pap).trace();
            let want = 0.5 * (t1 + t2 + t3 + t4);
            let got = kl_projected_vs_full(&a0, &xa, &v).unwrap();
            assert!((got - want).abs() <= 1e-8 * want.abs(), "{got} {want}");
            assert!(got >= -1e-10);
        }
    }

    #[test]
    fn likelihood_ratio_is_one_without_truncation() {
        let win = Arc::new(linear_window(4, 13));
        let mut rng = RngStream::new(14, 0);
        let basis = Arc::new(PodBasis::from_orthonormal(random_orthonormal(4, 4, &mut rng), "q").unwrap());
        let rom = RomProblem::new(win, basis).unwrap();
        for _ in 0..3 {
            let x = rng.standard_normal_vector(4);
            assert!((likelihood_ratio(&rom, &x).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn likelihood_ratio_matches_dual_evaluation() {
        let win = Arc::new(linear_window(5, 15));
        let mut rng = RngStream::new(16, 0);
        let basis = Arc::new(PodBasis::from_orthonormal(random_orthonormal(5, 2, &mut rng), "v").unwrap());
        let rom = RomProblem::new(win.clone(), basis).unwrap();
        let x = rng.standard_normal_vector(5);
        let full = win.cost(&x).unwrap() - win.background_cost(&x).unwrap();
        let approx = rom.approx_cost(&x).unwrap() - win.background_cost(&x).unwrap();
        let want = (full - approx).exp();
        assert!((likelihood_ratio(&rom, &x).unwrap() - want).abs() <= 1e-10 * want);
        let est = kl_estimate(&rom, &[x.clone(), x.clone()]).unwrap();
        assert!((est - (full - approx)).abs() < 1e-10 * (full - approx).abs().max(1.0));
    }

    #[test]
    fn schott_identical_inputs_printed_form() {
        let mut rng = RngStream::new(17, 0);
        let s = random_spd(4, &mut rng);
        let n0 = 50usize;
        let r = schott_statistic(&s, &s, n0, n0, 0.01, SchottForm::AsPrinted).unwrap();
        // direct evaluation of the printed expression
        let f = n0 as f64;
        let eta = (f + 2.0) * (f - 1.0);
        let tr = s.trace();
        let tr2 = (&s * &s).trace();
        let t = 2.0 * (1.0 - (f - 2.0) / eta * tr2) - 2.0 * tr2 - 2.0 * f / eta * tr * tr;
        let n = 2.0 * f;
        let a = n * n / ((n + 2.0) * (n - 1.0)) * (tr2 - tr * tr / n);
        let theta = 2.0 * a * (2.0 * f) / (f * f);
        assert!((r.t_mn - t).abs() < 1e-10 * t.abs());
        assert!((r.t_mn_star - t / theta).abs() < 1e-10 * (t / theta).abs());
        assert_eq!(r, schott_statistic(&s, &s, n0, n0, 0.01, SchottForm::AsPrinted).unwrap());
        assert!((r.z_crit - 2.5758293035489).abs() < 1e-9);
    }

    #[test]
    fn schott_symmetric_and_checked() {
        let mut rng = RngStream::new(18, 0);
        let s1 = random_spd(5, &mut rng);
        let s2 = random_spd(5, &mut rng);
        for form in [SchottForm::AsPrinted, SchottForm::BiasCorrected] {
            let a = schott_statistic(&s1, &s2, 30, 70, 0.01, form).unwrap();
            let b = schott_statistic(&s2, &s1, 70, 30, 0.01, form).unwrap();
            assert!((a.t_mn_star - b.t_mn_star).abs() < 1e-10 * a.t_mn_star.abs());
        }
        assert!(schott_statistic(&s1, &DMatrix::identity(4, 4), 30, 30, 0.01, SchottForm::AsPrinted).is_err());
        assert!(matches!(
            schott_statistic(&DMatrix::zeros(3, 3), &DMatrix::zeros(3, 3), 10, 10, 0.01, SchottForm::AsPrinted),
            Err(Error::Degenerate(_))
        ));
    }

    fn sample_cov(n: usize, dim: usize, scale: f64, rng: &mut RngStream) -> DMatrix<f64> {
        let samples: Vec<DVector<f64>> = (0..n).map(|_| rng.standard_normal_vector(dim) * scale.sqrt()).collect();
        ensemble_moments(&samples).unwrap().cov.matrix().clone()
    }

    #[test]
    fn schott_separates_scaled_covariances() {
        let mut wins = [0usize; 2];
        for (fi, form) in [SchottForm::BiasCorrected, SchottForm::AsPrinted].into_iter().enumerate() {
            for seed in 0..20 {
                let mut rng = RngStream::new(100 + seed, 0);
                let a = sample_cov(1000, 20, 1.0, &mut rng);
                let b = sample_cov(1000, 20, 1.0, &mut rng);
                let c = sample_cov(1000, 20, 4.0, &mut rng);
                let same = schott_statistic(&a, &b, 1000, 1000, 0.01, form).unwrap().t_mn_star.abs();
                let diff = schott_statistic(&a, &c, 1000, 1000, 0.01, form).unwrap().t_mn_star.abs();
                if diff > same {
                    wins[fi] += 1;
                }
            }
        }
        assert!(wins[0] >= 19, "bias-corrected separated {} of 20", wins[0]);
        // The grouping as typeset makes every term negative and does not separate.
        assert!(wins[1] < 19, "as-printed separated {} of 20", wins[1]);
    }

    #[test]
    fn ensemble_moment_cases() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let m = ensemble_moments(&[x.clone(), -x.clone()]).unwrap();
        assert!(m.mean.amax() == 0.0);
        assert!((m.cov.matrix() - &x * x.transpose() * 2.0).amax() < 1e-15);
        let m = ensemble_moments(&[x.clone(), x.clone(), x.clone()]).unwrap();
        assert!(m.cov.matrix().amax() == 0.0);
        assert!(ensemble_moments(&[x]).is_err());
    }

    #[test]
    fn ensemble_moments_converge() {
        let mut rng = RngStream::new(19, 0);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]);
        let mu = DVector::from_vec(vec![3.0, -1.0]);
        let samples: Vec<DVector<f64>> = (0..100_000).map(|_| &mu + &l * rng.standard_normal_vector(2)).collect();
        let m = ensemble_moments(&samples).unwrap();
        let cov = &l * l.transpose();
        assert!((m.mean - mu).amax() < 4.0 * 2.1 / (1e5f64).sqrt());
        assert!((m.cov.matrix() - cov).amax() < 0.05);
    }

    #[test]
    fn rmse_cases() {
        let model = LinearModel::identity(4);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert!(rmse_series(&x, &x, &model, 3).unwrap().iter().all(|&r| r == 0.0));
        let shifted = x.add_scalar(-0.25);
        assert!(rmse_series(&shifted, &x, &model, 3).unwrap().iter().all(|&r| (r - 0.25).abs() < 1e-15));
        let mut rng = RngStream::new(20, 0);
        let a = rng.standard_normal_vector(7);
        let b = rng.standard_normal_vector(7);
        let mut acc = 0.0;
        for i in 0..7 {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert!((rmse(&a, &b).unwrap() - (acc / 7.0).sqrt()).abs() < 1e-15);
    }
}
