//! The tracked subspace: `d` nearly orthonormal directions in `R^D`.
//!
//! The basis is never exactly orthonormal. Exploration rotates every vector a
//! little toward the part of each gradient the subspace cannot represent, and
//! the resulting drift is cleaned up by a damped symmetric orthonormalization
//! that treats all vectors alike.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::regression::RegressionState;

/// Orthonormality error at which [`Basis::orthonormalize`] stops iterating.
pub const ORTHO_TOL_TIGHT: f64 = 1e-8;
/// Orthonormality error that triggers an unscheduled orthonormalization.
pub const ORTHO_TOL_LOOSE: f64 = 1e-3;
/// Damped symmetric iterations tried before falling back to Gram-Schmidt.
pub const ORTHO_MAX_ITERS: usize = 20;
/// A vector shorter than this after removing overlaps is considered collapsed.
pub const DEGENERATE_NORM: f64 = 1e-10;

/// `d` direction vectors in `R^D`, stored as the rows of a `d x D` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    vectors: Matrix,
}

/// How an orthonormalization call converged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrthoOutcome {
    pub symmetric_iterations: usize,
    pub used_gram_schmidt: bool,
}

impl Basis {
    /// Wraps `vectors` (one direction per row) without modifying them.
    pub fn from_vectors(vectors: Matrix) -> Result<Self> {
        if vectors.rows() > vectors.cols() {
            return Err(Error::config(
                "d",
                format!(
                    "{} directions do not fit in a {}-dimensional space",
                    vectors.rows(),
                    vectors.cols()
                ),
            ));
        }
        Ok(Self { vectors })
    }

    /// Random orthonormal set: standard normal vectors, then orthonormalized.
    pub fn random<R: Rng + ?Sized>(d: usize, ambient: usize, rng: &mut R) -> Result<Self> {
        if d > ambient {
            return Err(Error::config(
                "d",
                format!("{d} directions do not fit in a {ambient}-dimensional space"),
            ));
        }
        let vectors = Matrix::from_fn(d, ambient, |_, _| rng.sample(StandardNormal));
        let mut basis = Self { vectors };
        basis.gram_schmidt()?;
        basis.orthonormalize()?;
        Ok(basis)
    }

    /// Number of tracked directions.
    pub fn dim(&self) -> usize {
        self.vectors.rows()
    }

    /// Dimension of the parameter space.
    pub fn ambient_dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.vectors
    }

    /// `(x . v_1, ..., x . v_d)`
    pub fn coords(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Basis::coords", self.ambient_dim(), x.len())?;
        self.vectors.mul_vec(x)
    }

    /// `sum_i c_i v_i`
    pub fn combine(&self, coefficients: &[f64]) -> Result<Vec<f64>> {
        check_len("Basis::combine", self.dim(), coefficients.len())?;
        self.vectors.tr_mul_vec(coefficients)
    }

    /// The part of `g` the basis cannot represent: `g - sum_i (g . v_i) v_i`.
    pub fn residual(&self, g: &[f64]) -> Result<Vec<f64>> {
        let c = self.coords(g)?;
        Ok(self.residual_with_coords(g, &c))
    }

    pub(crate) fn residual_with_coords(&self, g: &[f64], coords: &[f64]) -> Vec<f64> {
        let mut out = g.to_vec();
        for (i, &c) in coords.iter().enumerate() {
            axpy(-c, self.vector(i), &mut out);
        }
        out
    }

    /// Rotates every direction toward `g_residual` with the same rate `gamma`.
    ///
    /// `v_i <- v_i + gamma g~ - (gamma^2 |g~|^2 / 2) sum_j v_j`. The last term
    /// cancels the first-order loss of orthonormality.
    pub fn explore(&mut self, g_residual: &[f64], gamma: f64) -> Result<()> {
        let gammas = vec![gamma; self.dim()];
        self.explore_weighted(g_residual, &gammas)
    }

    /// Exploration with a separate rate per direction.
    ///
    /// `v_i <- Gamma_ii v_i + sum_{j != i} Gamma_ij v_j + gamma_i g~` with
    /// `Gamma_ij = -gamma_i gamma_j |g~|^2 / 2` and `Gamma_ii = 1 - gamma_i^2 |g~|^2 / 2`.
    pub fn explore_weighted(&mut self, g_residual: &[f64], gammas: &[f64]) -> Result<()> {
        check_len(
            "Basis::explore (residual)",
            self.ambient_dim(),
            g_residual.len(),
        )?;
        check_len("Basis::explore (rates)", self.dim(), gammas.len())?;
        let n2 = dot(g_residual, g_residual);
        if n2 == 0.0 || gammas.iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let weighted_sum = self.vectors.tr_mul_vec(gammas)?;
        for (i, &gamma) in gammas.iter().enumerate() {
            if gamma == 0.0 {
                continue;
            }
            let row = self.vectors.row_mut(i);
            axpy(gamma, g_residual, row);
            axpy(-0.5 * gamma * n2, &weighted_sum, row);
        }
        Ok(())
    }

    /// `max_ij |v_i . v_j - delta_ij|`
    pub fn orthonormality_error(&self) -> f64 {
        self.vectors.orthogonality_error()
    }

    /// Restores orthonormality to [`ORTHO_TOL_TIGHT`].
    ///
    /// Repeats `u_i = v_i - 1/2 sum_{j != i} (v_i . v_j) v_j; v_i = u_i / |u_i|`
    /// for at most [`ORTHO_MAX_ITERS`] rounds, then falls back to Gram-Schmidt
    /// in index order. The undamped update (without the 1/2) only flips the
    /// sign of a pairwise overlap instead of shrinking it.
    pub fn orthonormalize(&mut self) -> Result<OrthoOutcome> {
        let mut outcome = OrthoOutcome {
            symmetric_iterations: 0,
            used_gram_schmidt: false,
        };
        while self.orthonormality_error() > ORTHO_TOL_TIGHT {
            if outcome.symmetric_iterations == ORTHO_MAX_ITERS {
                self.gram_schmidt()?;
                outcome.used_gram_schmidt = true;
                break;
            }
            self.vectors = self.damped_symmetric_step();
            self.normalize_rows()?;
            outcome.symmetric_iterations += 1;
        }
        Ok(outcome)
    }

    /// One unnormalized damped symmetric step.
    pub(crate) fn damped_symmetric_step(&self) -> Matrix {
        let d = self.dim();
        let mut next = self.vectors.clone();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    let overlap = dot(self.vector(i), self.vector(j));
                    axpy(-0.5 * overlap, self.vector(j), next.row_mut(i));
                }
            }
        }
        next
    }

    fn normalize_rows(&mut self) -> Result<()> {
        for i in 0..self.dim() {
            let len = norm(self.vectors.row(i));
            if !(len >= DEGENERATE_NORM) {
                return Err(Error::DegenerateBasis { index: i });
            }
            self.vectors.row_mut(i).iter_mut().for_each(|v| *v /= len);
        }
        Ok(())
    }

    /// Modified Gram-Schmidt in index order, two passes.
    fn gram_schmidt(&mut self) -> Result<()> {
        let d = self.dim();
        for i in 0..d {
            let original = norm(self.vectors.row(i));
            for _ in 0..2 {
                for j in 0..i {
                    let overlap = dot(self.vectors.row(i), self.vectors.row(j));
                    let vj = self.vectors.row(j).to_vec();
                    axpy(-overlap, &vj, self.vectors.row_mut(i));
                }
            }
            let len = norm(self.vectors.row(i));
            if !(len >= DEGENERATE_NORM * original.max(1.0)) {
                return Err(Error::DegenerateBasis { index: i });
            }
            self.vectors.row_mut(i).iter_mut().for_each(|v| *v /= len);
        }
        Ok(())
    }

    /// Replaces direction `index` with a random unit vector orthogonal to the others.
    pub fn replace_with_random<R: Rng + ?Sized>(
        &mut self,
        index: usize,
        rng: &mut R,
    ) -> Result<()> {
        if index >= self.dim() {
            return Err(Error::Dimension {
                context: "Basis::replace_with_random",
                expected: self.dim(),
                got: index,
            });
        }
        for _ in 0..16 {
            let mut fresh: Vec<f64> = (0..self.ambient_dim())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            for _ in 0..2 {
                for j in (0..self.dim()).filter(|&j| j != index) {
                    let vj = self.vector(j);
                    let overlap = dot(&fresh, vj) / dot(vj, vj).max(f64::MIN_POSITIVE);
                    axpy(-overlap, vj, &mut fresh);
                }
            }
            let len = norm(&fresh);
            if len > 1e-6 {
                fresh.iter_mut().for_each(|v| *v /= len);
                self.vectors.row_mut(index).copy_from_slice(&fresh);
                return Ok(());
            }
        }
        Err(Error::DegenerateBasis { index })
    }

    /// Applies the orthogonal change of basis `o` to the directions and to the
    /// regression accumulators, so that new coordinates are `o` times old ones.
    pub fn rotate(&mut self, state: &mut RegressionState, o: &Matrix) -> Result<()> {
        let d = self.dim();
        check_len("Basis::rotate (rotation)", d, o.rows())?;
        check_len("Basis::rotate (rotation)", d, o.cols())?;
        check_len("Basis::rotate (state)", d, state.dim())?;
        let deviation = o.orthogonality_error();
        if deviation > 1e-10 {
            return Err(Error::NotOrthogonal { deviation });
        }
        self.vectors = o.matmul(&self.vectors)?;
        state.theta_bar = o.mul_vec(&state.theta_bar)?;
        state.g_bar = o.mul_vec(&state.g_bar)?;
        state.theta_theta = state.theta_theta.conjugate(o)?.symmetrized();
        state.g_theta = state.g_theta.conjugate(o)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn random_basis_is_orthonormal() {
        let basis = Basis::random(4, 30, &mut rng(1)).unwrap();
        assert!(basis.orthonormality_error() <= ORTHO_TOL_TIGHT);
        let full = Basis::random(6, 6, &mut rng(2)).unwrap();
        let gram = full.matrix().matmul(&full.matrix().transpose()).unwrap();
        assert!(gram.sub(&Matrix::identity(6)).unwrap().max_abs() <= 1e-10);
        assert!(Basis::random(7, 6, &mut rng(2)).is_err());
    }

    #[test]
    fn coords_of_basis_vector_and_orthogonal_vector() {
        let basis =
            Basis::from_vectors(Matrix::from_fn(2, 4, |i, j| (i == j) as u8 as f64)).unwrap();
        assert_eq!(basis.coords(&[1.0, 0.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(
            basis.coords(&[0.0, 0.0, 3.0, -1.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(basis.coords(&[1.0]).is_err());
    }

    #[test]
    fn coords_match_dense_product() {
        let mut r = rng(4);
        let basis = Basis::random(3, 9, &mut r).unwrap();
        let x = random_vec(9, &mut r);
        let c = basis.coords(&x).unwrap();
        for i in 0..3 {
            let direct: f64 = (0..9).map(|k| basis.matrix()[(i, k)] * x[k]).sum();
            assert!((c[i] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn residual_cases() {
        let mut r = rng(5);
        let basis = Basis::random(3, 8, &mut r).unwrap();
        let inside = basis.combine(&[1.0, -2.0, 0.5]).unwrap();
        assert!(norm(&basis.residual(&inside).unwrap()) < 1e-12);

        let g = random_vec(8, &mut r);
        let res = basis.residual(&g).unwrap();
        let c = basis.coords(&g).unwrap();
        let lhs = dot(&g, &g);
        let rhs = dot(&res, &res) + dot(&c, &c);
        assert!((lhs - rhs).abs() <= 1e-10 * lhs);
        let orth = basis.residual(&res).unwrap();
        for (a, b) in orth.iter().zip(&res) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rate_or_zero_residual_is_a_noop() {
        let mut r = rng(6);
        let basis = Basis::random(3, 7, &mut r).unwrap();
        let g = random_vec(7, &mut r);
        let mut a = basis.clone();
        a.explore(&g, 0.0).unwrap();
        assert_eq!(a, basis);
        let mut b = basis.clone();
        b.explore(&[0.0; 7], 0.3).unwrap();
        assert_eq!(b, basis);
    }

    #[test]
    fn single_vector_exploration() {
        let (gamma, q) = (0.2, 0.5);
        let mut basis = Basis::from_vectors(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        basis.explore(&[0.0, q], gamma).unwrap();
        let v = basis.vector(0);
        let a = gamma * gamma * q * q;
        assert!((v[0] - (1.0 - 0.5 * a)).abs() < 1e-15);
        assert!((v[1] - gamma * q).abs() < 1e-15);
        assert!((dot(v, v) - (1.0 + 0.25 * a * a)).abs() < 1e-15);
    }

    #[test]
    fn exploration_component_along_residual() {
        let mut r = rng(7);
        let mut basis = Basis::random(3, 10, &mut r).unwrap();
        let g = basis.residual(&random_vec(10, &mut r)).unwrap();
        let unit: Vec<f64> = g.iter().map(|v| v / norm(&g)).collect();
        let gamma = 0.05;
        basis.explore(&g, gamma).unwrap();
        for i in 0..3 {
            assert!((dot(basis.vector(i), &unit) - gamma * norm(&g)).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_input_is_a_fixed_point() {
        let basis = Basis::from_vectors(Matrix::identity(4)).unwrap();
        let mut copy = basis.clone();
        let outcome = copy.orthonormalize().unwrap();
        assert_eq!(outcome.symmetric_iterations, 0);
        assert!(copy.matrix().sub(basis.matrix()).unwrap().max_abs() <= 1e-15);
    }

    #[test]
    fn damped_step_shrinks_overlap_cubically() {
        let delta: f64 = 0.1;
        let v2 = [delta, (1.0 - delta * delta).sqrt(), 0.0];
        let basis =
            Basis::from_vectors(Matrix::from_rows(&[vec![1.0, 0.0, 0.0], v2.to_vec()]).unwrap())
                .unwrap();
        let u = basis.damped_symmetric_step();
        let overlap = dot(u.row(0), u.row(1));
        assert!((overlap - delta.powi(3) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn undamped_step_would_only_flip_the_overlap() {
        // The literal update without the 1/2 factor, for contrast.
        let delta: f64 = 0.1;
        let v1 = [1.0, 0.0];
        let v2 = [delta, (1.0 - delta * delta).sqrt()];
        let u1: Vec<f64> = (0..2).map(|k| v1[k] - delta * v2[k]).collect();
        let u2: Vec<f64> = (0..2).map(|k| v2[k] - delta * v1[k]).collect();
        let overlap = dot(&u1, &u2) / (norm(&u1) * norm(&u2));
        assert!((overlap + delta).abs() < 1e-12);
    }

    #[test]
    fn rescaling_only() {
        let mut basis = Basis::from_vectors(
            Matrix::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 0.0, -0.5]]).unwrap(),
        )
        .unwrap();
        basis.orthonormalize().unwrap();
        assert_eq!(basis.vector(0), &[1.0, 0.0, 0.0]);
        assert_eq!(basis.vector(1), &[0.0, 0.0, -1.0]);
    }

    #[test]
    fn heavy_overlap_converges() {
        let mut r = rng(9);
        let base = random_vec(12, &mut r);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                base.iter()
                    .zip(random_vec(12, &mut r))
                    .map(|(b, n)| b + 0.3 * n)
                    .collect()
            })
            .collect();
        let mut basis = Basis::from_vectors(Matrix::from_rows(&rows).unwrap()).unwrap();
        basis.orthonormalize().unwrap();
        assert!(basis.orthonormality_error() <= ORTHO_TOL_TIGHT);
    }

    #[test]
    fn duplicate_vectors_are_degenerate() {
        let row = vec![0.6, 0.8, 0.0];
        let mut basis =
            Basis::from_vectors(Matrix::from_rows(&[row.clone(), row]).unwrap()).unwrap();
        assert!(matches!(
            basis.orthonormalize(),
            Err(Error::DegenerateBasis { .. })
        ));
    }

    #[test]
    fn replace_with_random_restores_rank() {
        let mut r = rng(10);
        let row = vec![0.6, 0.8, 0.0, 0.0];
        let mut basis =
            Basis::from_vectors(Matrix::from_rows(&[row.clone(), row]).unwrap()).unwrap();
        basis.replace_with_random(1, &mut r).unwrap();
        basis.orthonormalize().unwrap();
        assert!(basis.orthonormality_error() <= ORTHO_TOL_TIGHT);
    }

    fn populated_state(d: usize, r: &mut ChaCha8Rng) -> RegressionState {
        let mut state = RegressionState::new(d);
        for _ in 0..(3 * d + 4) {
            let theta = random_vec(d, r);
            let g = random_vec(d, r);
            state.update(&theta, &g, 0.8).unwrap();
        }
        state
    }

    #[test]
    fn identity_rotation_changes_nothing() {
        let mut r = rng(11);
        let mut basis = Basis::random(3, 5, &mut r).unwrap();
        let mut state = populated_state(3, &mut r);
        let (b0, s0) = (basis.clone(), state.clone());
        basis.rotate(&mut state, &Matrix::identity(3)).unwrap();
        assert_eq!(basis, b0);
        assert_eq!(state, s0);
    }

    #[test]
    fn permutation_swaps_directions() {
        let mut r = rng(12);
        let mut basis = Basis::random(3, 5, &mut r).unwrap();
        let mut state = populated_state(3, &mut r);
        let (b0, s0) = (basis.clone(), state.clone());
        let perm = Matrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        basis.rotate(&mut state, &perm).unwrap();
        let p = [1, 0, 2];
        for i in 0..3 {
            assert_eq!(basis.vector(i), b0.vector(p[i]));
            assert_eq!(state.theta_bar[i], s0.theta_bar[p[i]]);
            assert_eq!(state.g_bar[i], s0.g_bar[p[i]]);
            for j in 0..3 {
                assert_eq!(state.theta_theta[(i, j)], s0.theta_theta[(p[i], p[j])]);
                assert_eq!(state.g_theta[(i, j)], s0.g_theta[(p[i], p[j])]);
            }
        }
        assert_eq!(state.s, s0.s);
    }

    #[test]
    fn rotation_rejects_non_orthogonal() {
        let mut r = rng(13);
        let mut basis = Basis::random(2, 4, &mut r).unwrap();
        let mut state = populated_state(2, &mut r);
        let skew = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            basis.rotate(&mut state, &skew),
            Err(Error::NotOrthogonal { .. })
        ));
    }

    #[test]
    fn coordinates_transform_with_rotation() {
        let mut r = rng(14);
        let mut basis = Basis::random(4, 9, &mut r).unwrap();
        let mut state = populated_state(4, &mut r);
        let o = Basis::random(4, 4, &mut r).unwrap().matrix().clone();
        let x = random_vec(9, &mut r);
        let before = o.mul_vec(&basis.coords(&x).unwrap()).unwrap();
        basis.rotate(&mut state, &o).unwrap();
        let after = basis.coords(&x).unwrap();
        for (a, b) in after.iter().zip(&before) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
