use hmc_smoother::diagnostics::{kl_projected_vs_full, projected_pdf_quadform_check};
use hmc_smoother::hmc::{hamiltonian, verlet_trajectory, GaussianPotential, MassMatrix};
use hmc_smoother::rom::build_basis;
use hmc_smoother::state::RngStream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
    let a = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.2;
    (&a + a.transpose()) * 0.5
}

fn orthonormal(n: usize, p: usize, rng: &mut RngStream) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.standard_normal()).qr().q().columns(0, p).into_owned()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pod_basis_is_orthonormal_and_meets_threshold(seed in 0u64..10_000, rows in 4usize..30, cols in 2usize..12, gamma in 0.3f64..0.999) {
        let mut rng = RngStream::new(seed, 0);
        let x = DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal());
        let b = build_basis(&x, gamma).unwrap();
        let p = b.nred();
        prop_assert!((b.v().transpose() * b.v() - DMatrix::identity(p, p)).amax() < 1e-10);
        prop_assert!(b.energy(p) >= gamma);
        if p > 1 {
            prop_assert!(b.energy(p - 1) < gamma);
        }
    }

    #[test]
    fn projected_quadform_identity(seed in 0u64..10_000, n in 3usize..15) {
        let mut rng = RngStream::new(seed, 1);
        let p = 1 + rng.index(n - 1);
        let a0 = spd(n, &mut rng);
        let v = orthonormal(n, p, &mut rng);
        let (l, r) = projected_pdf_quadform_check(&a0, &v, &rng.standard_normal_vector(n), &rng.standard_normal_vector(n)).unwrap();
        prop_assert!((l - r).abs() <= 1e-9 * r.abs().max(1.0));
    }

    #[test]
    fn kl_is_finite_for_projected_mean(seed in 0u64..10_000, n in 3usize..12) {
        let mut rng = RngStream::new(seed, 2);
        let p = 1 + rng.index(n - 1);
        let a0 = spd(n, &mut rng);
        let v = orthonormal(n, p, &mut rng);
        let xa = v.clone() * rng.standard_normal_vector(p);
        let kl = kl_projected_vs_full(&a0, &xa, &v).unwrap();
        prop_assert!(kl.is_finite());
    }

    #[test]
    fn verlet_is_time_reversible(seed in 0u64..10_000, n in 1usize..10, h in 0.005f64..0.1, m in 1usize..40) {
        let mut rng = RngStream::new(seed, 3);
        let pot = GaussianPotential::new(rng.standard_normal_vector(n), spd(n, &mut rng)).unwrap();
        let mass = MassMatrix::identity(n);
        let p0 = rng.standard_normal_vector(n);
        let x0 = rng.standard_normal_vector(n);
        let (p1, x1) = verlet_trajectory(&pot, &mass, &p0, &x0, h, m).unwrap();
        let (p2, x2) = verlet_trajectory(&pot, &mass, &(-p1.clone()), &x1, h, m).unwrap();
        prop_assert!((x2 - &x0).amax() < 1e-9);
        prop_assert!((p2 + &p0).amax() < 1e-9);
        let dh = hamiltonian(&pot, &mass, &p1, &x1).unwrap() - hamiltonian(&pot, &mass, &p0, &x0).unwrap();
        prop_assert!(dh.is_finite());
    }
}

#[test]
fn basis_restrict_lift_is_projection() {
    let mut rng = RngStream::new(1, 0);
    let x = DMatrix::from_fn(20, 6, |_, _| rng.standard_normal());
    let b = build_basis(&x, 0.9).unwrap();
    let z = DVector::from_fn(20, |i, _| i as f64);
    let once = b.project(&z).unwrap();
    assert!((b.project(&once).unwrap() - &once).amax() < 1e-12);
    assert!((b.lift(&b.restrict(&z).unwrap()).unwrap() - once).amax() < 1e-12);
}
