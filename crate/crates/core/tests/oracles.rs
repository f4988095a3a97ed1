//! Dense kernels and estimators against nalgebra, plus invariants as property tests.

use nalgebra::{DMatrix, SymmetricEigen};
use ogr::linalg::{self, eigh_small, EIGH_TOL};
use ogr::regression::clip;
use ogr::subspace::ORTHO_TOL_TIGHT;
use ogr::{Basis, Matrix, RegressionState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    gaussian(rng, n, n).qr().q()
}

/// A regression state fed with samples from a random affine gradient field.
fn random_state(rng: &mut ChaCha8Rng, d: usize, samples: usize) -> RegressionState {
    let h = gaussian(rng, d, d);
    let h = (&h + h.transpose()) * 0.5;
    let mut state = RegressionState::new(d);
    for _ in 0..samples {
        let theta = gaussian(rng, d, 1);
        let g = &h * &theta + gaussian(rng, d, 1) * 0.1;
        state.update(theta.as_slice(), g.as_slice(), 0.9).unwrap();
    }
    state
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigenvalues_match_nalgebra(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&mut rng, n, n);
        let a = (&a + a.transpose()) * 0.5;
        let ours = eigh_small(&from_na(&a), EIGH_TOL).unwrap();
        let mut want: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
        let mut got = ours.values.clone();
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-10 * a.norm().max(1.0));
        }
        let back = to_na(&ours.reconstruct());
        prop_assert!((back - &a).norm() <= 1e-10 * a.norm().max(1.0));
        prop_assert!(ours.rotation.orthogonality_error() <= 1e-12);
    }

    #[test]
    fn right_divide_matches_nalgebra(seed in any::<u64>(), n in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = gaussian(&mut rng, n, n);
        let m = &b * b.transpose() + DMatrix::identity(n, n);
        let x = gaussian(&mut rng, n, n);
        let ours = to_na(&linalg::right_divide(&from_na(&x), &from_na(&m)).unwrap());
        let want = &x * m.clone().try_inverse().unwrap();
        prop_assert!((ours - &want).norm() <= 1e-10 * want.norm().max(1.0));
    }

    #[test]
    fn s_follows_closed_form(beta in 0.01f64..0.999, t in 1usize..=1000) {
        let mut state = RegressionState::new(1);
        for _ in 0..t {
            state.update(&[0.0], &[0.0], beta).unwrap();
        }
        prop_assert!((state.s() - (1.0 - beta.powi(t as i32))).abs() <= 1e-12);
    }

    #[test]
    fn clip_keeps_sign_and_floor(x in -1e3f64..1e3, epsilon in 1e-9f64..1.0) {
        let c = clip(x, epsilon);
        prop_assert!(c.abs() >= epsilon);
        prop_assert_eq!(c.is_sign_negative(), x < 0.0);
        prop_assert_eq!(clip(c, epsilon), c);
        if x.abs() >= epsilon {
            prop_assert_eq!(c, x);
        }
    }

    #[test]
    fn rotation_conjugates_hessian(seed in any::<u64>(), d in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = random_state(&mut rng, d, 4 * d + 4);
        let before = to_na(&state.estimate_hessian().unwrap());
        let o = random_orthogonal(&mut rng, d);
        let mut basis = Basis::from_vectors(Matrix::identity(d)).unwrap();
        basis.rotate(&mut state, &from_na(&o)).unwrap();
        let after = to_na(&state.estimate_hessian().unwrap());
        let want = &o * before * o.transpose();
        prop_assert!((after - &want).norm() <= 1e-10 * want.norm().max(1.0));
    }

    #[test]
    fn zero_gamma_is_bitwise_noop(seed in any::<u64>(), d in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis = Basis::random(d, 12, &mut rng).unwrap();
        let before = basis.clone();
        let g = gaussian(&mut rng, 12, 1);
        basis.explore(g.as_slice(), 0.0).unwrap();
        prop_assert_eq!(basis, before);
    }

    #[test]
    fn explore_moves_exactly_gamma_along_residual(seed in any::<u64>(), d in 1usize..=4, gamma in 1e-4f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis = Basis::random(d, 12, &mut rng).unwrap();
        let g = gaussian(&mut rng, 12, 1);
        let r = basis.residual(g.as_slice()).unwrap();
        let rn = linalg::norm(&r);
        basis.explore(&r, gamma).unwrap();
        for i in 0..d {
            let along = linalg::dot(basis.vector(i), &r) / rn;
            prop_assert!((along - gamma * rn).abs() <= 1e-12 * (1.0 + gamma * rn));
        }
    }

    #[test]
    fn exploration_drift_is_third_order(seed in any::<u64>(), d in 1usize..=5, k in 1usize..=50, rate in 1e-3f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis = Basis::random(d, 20, &mut rng).unwrap();
        for _ in 0..k {
            let g = gaussian(&mut rng, 20, 1);
            let r = basis.residual(g.as_slice()).unwrap();
            basis.explore(&r, rate / linalg::norm(&r)).unwrap();
        }
        prop_assert!(basis.orthonormality_error() <= 2.0 * k as f64 * rate.powi(3) + 1e-12);
    }

    #[test]
    fn orthonormalize_restores_tight_bound(seed in any::<u64>(), d in 1usize..=6, noise in 0.0f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_orthogonal(&mut rng, 15);
        let v = q.rows(0, d) + gaussian(&mut rng, d, 15) * noise;
        let mut basis = Basis::from_vectors(from_na(&v.into_owned())).unwrap();
        basis.orthonormalize().unwrap();
        prop_assert!(basis.orthonormality_error() <= ORTHO_TOL_TIGHT);
    }
}

#[test]
fn explore_norm_correction_in_two_dimensions() {
    let mut basis = Basis::from_vectors(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
    let (gamma, q) = (0.1, 2.0);
    basis.explore(&[0.0, q], gamma).unwrap();
    let v = basis.vector(0);
    assert!((v[0] - (1.0 - 0.5 * gamma * gamma * q * q)).abs() < 1e-15);
    assert!((v[1] - gamma * q).abs() < 1e-15);
    let squared = linalg::dot(v, v);
    assert!((squared - (1.0 + 0.25 * (gamma * q).powi(4))).abs() < 1e-14);
}
