//! Exponentially weighted least-squares fit of a linear gradient model.
//!
//! Inside the tracked subspace the objective is modeled as a quadratic, so its
//! gradient is affine in position: `g = H (theta - p)`. [`RegressionState`]
//! keeps the five EMA accumulators that are sufficient statistics for the
//! weighted least-squares fit of `H` and `p`; every sample of age `k` carries
//! weight `(1 - beta) * beta^k`.

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};

/// Relative floor below which a weighted position variance counts as zero.
pub const SPREAD_FLOOR: f64 = 1e-12;

/// EMA sufficient statistics of `(position, gradient)` pairs in subspace coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionState {
    pub(crate) s: f64,
    pub(crate) theta_bar: Vec<f64>,
    pub(crate) g_bar: Vec<f64>,
    /// `theta_theta[(i, j)]` averages `theta_i * theta_j`.
    pub(crate) theta_theta: Matrix,
    /// `g_theta[(i, j)]` averages `g_i * theta_j`; not symmetric in general.
    pub(crate) g_theta: Matrix,
}

/// Per-direction curvatures and stationary coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurvatureModel {
    pub lambdas: Vec<f64>,
    pub ps: Vec<f64>,
}

impl RegressionState {
    pub fn new(dim: usize) -> Self {
        Self {
            s: 0.0,
            theta_bar: vec![0.0; dim],
            g_bar: vec![0.0; dim],
            theta_theta: Matrix::zeros(dim, dim),
            g_theta: Matrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_bar.len()
    }

    /// Total EMA weight, `1 - beta^t` after `t` updates.
    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn theta_bar(&self) -> &[f64] {
        &self.theta_bar
    }

    pub fn g_bar(&self) -> &[f64] {
        &self.g_bar
    }

    pub fn theta_theta(&self) -> &Matrix {
        &self.theta_theta
    }

    pub fn g_theta(&self) -> &Matrix {
        &self.g_theta
    }

    /// Folds one `(position, gradient)` sample into every accumulator.
    pub fn update(&mut self, theta: &[f64], g: &[f64], beta: f64) -> Result<()> {
        check_beta(beta)?;
        let d = self.dim();
        check_len("RegressionState::update (theta)", d, theta.len())?;
        check_len("RegressionState::update (g)", d, g.len())?;
        let w = 1.0 - beta;
        self.s = beta * self.s + w;
        for i in 0..d {
            self.theta_bar[i] = beta * self.theta_bar[i] + w * theta[i];
            self.g_bar[i] = beta * self.g_bar[i] + w * g[i];
            for j in 0..d {
                self.g_theta[(i, j)] = beta * self.g_theta[(i, j)] + w * g[i] * theta[j];
            }
            for j in i..d {
                let v = beta * self.theta_theta[(i, j)] + w * (theta[i] * theta[j]);
                self.theta_theta[(i, j)] = v;
                self.theta_theta[(j, i)] = v;
            }
        }
        Ok(())
    }

    /// Unclipped slope of the gradient along direction `i`: weighted
    /// `cov(g_i, theta_i) / var(theta_i)`.
    pub fn slope_1d(&self, i: usize) -> Result<f64> {
        if i >= self.dim() {
            return Err(Error::Dimension {
                context: "RegressionState::slope_1d",
                expected: self.dim(),
                got: i,
            });
        }
        let tb = self.theta_bar[i];
        let second = self.s * self.theta_theta[(i, i)];
        let variance = second - tb * tb;
        if !(variance > SPREAD_FLOOR * second) {
            return Err(Error::InsufficientSpread {
                min_eigenvalue: variance,
            });
        }
        Ok((self.s * self.g_theta[(i, i)] - self.g_bar[i] * tb) / variance)
    }

    /// Clipped curvature and stationary coordinate of direction `i`.
    pub fn estimate_1d(&self, i: usize, epsilon: f64) -> Result<(f64, f64)> {
        let lambda = clip(self.slope_1d(i)?, epsilon);
        let p = (lambda * self.theta_bar[i] - self.g_bar[i]) / (self.s * lambda);
        Ok((lambda, p))
    }

    /// Weighted position covariance `s * theta_theta - theta_bar theta_bar^T`.
    pub fn position_covariance(&self) -> Matrix {
        let outer = Matrix::outer(&self.theta_bar, &self.theta_bar);
        self.theta_theta
            .scaled(self.s)
            .sub(&outer)
            .expect("accumulators share one dimension")
            .symmetrized()
    }

    /// Weighted cross covariance `s * g_theta - g_bar theta_bar^T`.
    pub fn cross_covariance(&self) -> Matrix {
        let outer = Matrix::outer(&self.g_bar, &self.theta_bar);
        self.g_theta
            .scaled(self.s)
            .sub(&outer)
            .expect("accumulators share one dimension")
    }

    /// Least-squares Hessian of the subspace model, symmetrized.
    ///
    /// The position covariance must be positive definite with eigenvalue
    /// ratio above [`SPREAD_FLOOR`]; otherwise the smallest eigenvalue is
    /// reported in [`Error::InsufficientSpread`].
    pub fn estimate_hessian(&self) -> Result<Matrix> {
        let cov = self.position_covariance();
        let spectrum = linalg::eigh_small(&cov, linalg::EIGH_TOL)?;
        let largest = spectrum.values.iter().fold(0.0f64, |m, v| m.max(*v));
        let smallest = spectrum.values.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if self.dim() == 0 || !(largest > 0.0) || smallest < SPREAD_FLOOR * largest {
            return Err(Error::InsufficientSpread {
                min_eigenvalue: if smallest.is_finite() { smallest } else { 0.0 },
            });
        }
        let h = linalg::right_divide(&self.cross_covariance(), &cov).map_err(|_| {
            Error::InsufficientSpread {
                min_eigenvalue: smallest,
            }
        })?;
        Ok(h.symmetrized())
    }

    /// Stationary point `(theta_bar - H^-1 g_bar) / s` of the model with Hessian `h`.
    pub fn estimate_stationary_point(&self, h: &Matrix) -> Result<Vec<f64>> {
        check_len("estimate_stationary_point", self.dim(), h.rows())?;
        if !(self.s > 0.0) {
            return Err(Error::InsufficientSpread {
                min_eigenvalue: 0.0,
            });
        }
        let shift = linalg::solve(h, &self.g_bar)?;
        Ok(self
            .theta_bar
            .iter()
            .zip(&shift)
            .map(|(t, x)| (t - x) / self.s)
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite()
            && self
                .theta_bar
                .iter()
                .chain(&self.g_bar)
                .all(|v| v.is_finite())
            && self.theta_theta.is_finite()
            && self.g_theta.is_finite()
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::config(
            "beta",
            format!("{beta} is outside the open interval (0, 1)"),
        ));
    }
    Ok(())
}

/// Raises `|x|` to at least `epsilon`, keeping the sign (`sign(0) = +1`).
pub fn clip(x: f64, epsilon: f64) -> f64 {
    let magnitude = x.abs().max(epsilon);
    if x < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feed(samples: &[(f64, f64)], beta: f64) -> RegressionState {
        let mut state = RegressionState::new(1);
        for &(t, g) in samples {
            state.update(&[t], &[g], beta).unwrap();
        }
        state
    }

    #[test]
    fn first_update_scales_by_one_minus_beta() {
        let state = feed(&[(1.0, 2.0)], 0.9);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(state.s, 0.1));
        assert!(close(state.theta_bar[0], 0.1));
        assert!(close(state.g_bar[0], 0.2));
        assert!(close(state.theta_theta[(0, 0)], 0.1));
        assert!(close(state.g_theta[(0, 0)], 0.2));
    }

    #[test]
    fn two_updates_at_half() {
        let state = feed(&[(1.0, 1.0), (1.0, 1.0)], 0.5);
        assert_eq!(state.s, 0.75);
        assert_eq!(state.theta_bar[0], 0.75);
        assert_eq!(state.g_theta[(0, 0)], 0.75);
    }

    #[test]
    fn s_after_twenty_updates() {
        let mut state = RegressionState::new(2);
        for _ in 0..20 {
            state.update(&[0.3, -1.0], &[1.0, 2.0], 0.9).unwrap();
        }
        assert!((state.s - 0.878_423_345_4).abs() < 1e-10);
        assert!((state.s - (1.0 - 0.9f64.powi(20))).abs() < 1e-12);
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let mut state = RegressionState::new(2);
        assert!(matches!(
            state.update(&[1.0], &[1.0, 2.0], 0.9),
            Err(Error::Dimension { .. })
        ));
        for beta in [0.0, 1.0, 1.5, -0.1, f64::NAN] {
            assert!(matches!(
                state.update(&[1.0, 1.0], &[1.0, 2.0], beta),
                Err(Error::Config { .. })
            ));
        }
        assert_eq!(state, RegressionState::new(2));
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(0.5, 1e-8), 0.5);
        assert_eq!(clip(1e-12, 1e-8), 1e-8);
        assert_eq!(clip(-1e-12, 1e-8), -1e-8);
        assert_eq!(clip(0.0, 1e-8), 1e-8);
        assert_eq!(clip(-3.0, 1e-8), -3.0);
    }

    #[test]
    fn exact_line_recovers_curvature_and_center() {
        // Uniform weights: beta = 1/2 does not give uniform weights, so feed
        // the accumulators through a state built from equal-weight samples.
        let mut state = RegressionState::new(1);
        let samples = [(0.0, -2.0), (1.0, 0.0), (2.0, 2.0)];
        for &(t, g) in &samples {
            state.s += 1.0 / 3.0;
            state.theta_bar[0] += t / 3.0;
            state.g_bar[0] += g / 3.0;
            state.theta_theta[(0, 0)] += t * t / 3.0;
            state.g_theta[(0, 0)] += g * t / 3.0;
        }
        let (lambda, p) = state.estimate_1d(0, 1e-8).unwrap();
        assert!((lambda - 2.0).abs() < 1e-12);
        assert!((p - 1.0).abs() < 1e-12);

        let ema = feed(&samples, 0.7);
        let (lambda, p) = ema.estimate_1d(0, 1e-8).unwrap();
        assert!((lambda - 2.0).abs() < 1e-12);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_gradient_is_clipped() {
        let state = feed(&[(0.0, 0.0), (1.0, 0.0)], 0.9);
        let (lambda, p) = state.estimate_1d(0, 1e-6).unwrap();
        assert_eq!(lambda, 1e-6);
        assert!((p - state.theta_bar[0] / state.s).abs() < 1e-12);
    }

    #[test]
    fn repeated_position_has_no_spread() {
        let state = feed(&[(3.0, 1.0), (3.0, 2.0), (3.0, 0.5)], 0.9);
        assert!(matches!(
            state.estimate_1d(0, 1e-8),
            Err(Error::InsufficientSpread { .. })
        ));
        assert!(matches!(
            RegressionState::new(1).estimate_1d(0, 1e-8),
            Err(Error::InsufficientSpread { .. })
        ));
    }

    #[test]
    fn one_dimensional_hessian_matches_slope() {
        let state = feed(&[(0.5, 1.0), (-1.0, 0.2), (2.0, -0.7), (0.1, 0.4)], 0.8);
        let h = state.estimate_hessian().unwrap();
        assert!((h[(0, 0)] - state.slope_1d(0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn exact_two_dimensional_quadratic() {
        let hessian = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let center = [1.0, -1.0];
        let mut state = RegressionState::new(2);
        for x in [-1.0, 0.0, 1.5] {
            for y in [-2.0, 0.5, 1.0] {
                let g = hessian.mul_vec(&[x - center[0], y - center[1]]).unwrap();
                state.update(&[x, y], &g, 0.9).unwrap();
            }
        }
        let h = state.estimate_hessian().unwrap();
        assert!(h.sub(&hessian).unwrap().max_abs() < 1e-8);
        assert_eq!(h.asymmetry(), 0.0);
        let p = state.estimate_stationary_point(&h).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-8 && (p[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn stationary_point_with_zero_mean_gradient() {
        let mut state = RegressionState::new(2);
        state.s = 0.5;
        state.theta_bar = vec![0.5 * 3.0, 0.5 * -2.0];
        let p = state
            .estimate_stationary_point(
                &Matrix::from_rows(&[vec![1.0, 0.3], vec![0.3, -2.0]]).unwrap(),
            )
            .unwrap();
        assert!((p[0] - 3.0).abs() < 1e-15 && (p[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_positions_are_singular() {
        let mut state = RegressionState::new(2);
        for t in [0.0, 1.0, 2.0, 3.0] {
            state.update(&[t, 2.0 * t], &[t, t], 0.9).unwrap();
        }
        assert!(matches!(
            state.estimate_hessian(),
            Err(Error::InsufficientSpread { .. })
        ));
    }
}
