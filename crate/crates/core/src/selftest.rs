//! Oracle-equivalence and invariant suites, as run by `ogr selftest`.
//!
//! Each suite returns a [`Check`] holding the worst measured value and the
//! tolerance it was held to. The regression suite compares against an
//! explicit weighted least-squares fit over the full sample history, which
//! shares no code with the streaming estimator apart from the dense solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::{self, norm, Matrix};
use crate::optimizer::{GradientOracle, Ogr, OgrConfig, Optimizer, StepCap};
use crate::problems::{Problem, ProblemSpec};
use crate::regression::{clip, RegressionState};
use crate::subspace::{Basis, ORTHO_TOL_LOOSE, ORTHO_TOL_TIGHT};

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: false,
            value: f64::INFINITY,
            tolerance,
            detail: detail.into(),
        }
    }

    /// `PASS name  value <= tolerance  detail`
    pub fn line(&self) -> String {
        format!(
            "{} {:<26} {:.3e} <= {:.1e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.detail
        )
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn rel(diff: f64, reference: f64) -> f64 {
    diff / reference.max(f64::MIN_POSITIVE)
}

/// A random regression history: `g = H theta + b + 0.1 noise` at Gaussian positions.
pub struct History {
    pub beta: f64,
    pub thetas: Vec<Vec<f64>>,
    pub grads: Vec<Vec<f64>>,
}

impl History {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let d = rng.random_range(1..=4);
        let beta = [0.5, 0.9, 0.99][rng.random_range(0..3)];
        let len = rng.random_range(d + 2..=64);
        let h = Matrix::from_fn(d, d, |_, _| normal(rng)).symmetrized();
        let b: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let mut thetas = Vec::with_capacity(len);
        let mut grads = Vec::with_capacity(len);
        for _ in 0..len {
            let theta: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
            let mut g = h.mul_vec(&theta).expect("square");
            for (gi, bi) in g.iter_mut().zip(&b) {
                *gi += bi + 0.1 * normal(rng);
            }
            thetas.push(theta);
            grads.push(g);
        }
        Self {
            beta,
            thetas,
            grads,
        }
    }

    pub fn dim(&self) -> usize {
        self.thetas[0].len()
    }

    pub fn state(&self) -> Result<RegressionState> {
        let mut state = RegressionState::new(self.dim());
        for (theta, g) in self.thetas.iter().zip(&self.grads) {
            state.update(theta, g, self.beta)?;
        }
        Ok(state)
    }

    /// Sample weights `(1 - beta) beta^(age)`.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.thetas.len();
        (0..n)
            .map(|k| (1.0 - self.beta) * self.beta.powi((n - 1 - k) as i32))
            .collect()
    }

    fn weighted_means(&self) -> (Vec<f64>, Vec<f64>) {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        let d = self.dim();
        let mut mt = vec![0.0; d];
        let mut mg = vec![0.0; d];
        for k in 0..w.len() {
            for i in 0..d {
                mt[i] += w[k] * self.thetas[k][i] / total;
                mg[i] += w[k] * self.grads[k][i] / total;
            }
        }
        (mt, mg)
    }

    /// Two-pass weighted slope of `g_i` against `theta_i`.
    pub fn slope_1d(&self, i: usize) -> f64 {
        let w = self.weights();
        let (mt, mg) = self.weighted_means();
        let (mut cov, mut var) = (0.0, 0.0);
        for k in 0..w.len() {
            let dt = self.thetas[k][i] - mt[i];
            cov += w[k] * dt * (self.grads[k][i] - mg[i]);
            var += w[k] * dt * dt;
        }
        cov / var
    }

    /// Clipped 1D curvature and stationary coordinate.
    pub fn estimate_1d(&self, i: usize, epsilon: f64) -> (f64, f64) {
        let (mt, mg) = self.weighted_means();
        let lambda = clip(self.slope_1d(i), epsilon);
        (lambda, mt[i] - mg[i] / lambda)
    }

    /// Symmetrized slope matrix of the weighted fit `g = a + B theta`.
    pub fn hessian(&self) -> Result<Matrix> {
        let d = self.dim();
        let w = self.weights();
        let mut normal_matrix = Matrix::zeros(d + 1, d + 1);
        let rows: Vec<Vec<f64>> = self
            .thetas
            .iter()
            .map(|t| std::iter::once(1.0).chain(t.iter().copied()).collect())
            .collect();
        for (x, wk) in rows.iter().zip(&w) {
            for a in 0..=d {
                for b in 0..=d {
                    normal_matrix[(a, b)] += wk * x[a] * x[b];
                }
            }
        }
        let mut slopes = Matrix::zeros(d, d);
        for j in 0..d {
            let rhs: Vec<f64> = (0..=d)
                .map(|a| {
                    rows.iter()
                        .zip(&w)
                        .zip(&self.grads)
                        .map(|((x, wk), g)| wk * x[a] * g[j])
                        .sum()
                })
                .collect();
            let coef = linalg::solve(&normal_matrix, &rhs)?;
            slopes.row_mut(j).copy_from_slice(&coef[1..]);
        }
        Ok(slopes.symmetrized())
    }

    /// Zero of `g = a + H theta` where `a` is the weighted-mean intercept for slope `h`.
    pub fn stationary_point(&self, h: &Matrix) -> Result<Vec<f64>> {
        let (mt, mg) = self.weighted_means();
        let h_mt = h.mul_vec(&mt)?;
        let minus_a: Vec<f64> = mg.iter().zip(&h_mt).map(|(g, hm)| hm - g).collect();
        linalg::solve(h, &minus_a)
    }
}

/// Streaming estimates against brute-force weighted least squares.
pub fn regression_oracle(cases: usize, seed: u64) -> Check {
    const TOL: f64 = 1e-8;
    let name = "regression oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let history = History::random(&mut rng);
        let outcome = (|| -> Result<f64> {
            let state = history.state()?;
            let mut err = 0.0f64;
            for i in 0..history.dim() {
                let (lambda, p) = state.estimate_1d(i, 1e-4)?;
                let (lo, po) = history.estimate_1d(i, 1e-4);
                err = err
                    .max(rel((lambda - lo).abs(), lo.abs()))
                    .max(rel((p - po).abs(), po.abs()));
            }
            let h = state.estimate_hessian()?;
            let ho = history.hessian()?;
            err = err.max(rel(h.sub(&ho)?.frobenius_norm(), ho.frobenius_norm()));
            let p = state.estimate_stationary_point(&ho)?;
            let po = history.stationary_point(&ho)?;
            let diff: Vec<f64> = p.iter().zip(&po).map(|(a, b)| a - b).collect();
            Ok(err.max(rel(norm(&diff), norm(&po))))
        })();
        match outcome {
            Ok(e) => worst = worst.max(e),
            Err(e) => return Check::failed(name, TOL, format!("case {case}: {e}")),
        }
    }
    Check::new(
        name,
        worst,
        TOL,
        format!("{cases} random histories, d <= 4, len <= 64"),
    )
}

/// `s = 1 - beta^t` after `t` updates.
pub fn s_identity() -> Check {
    const TOL: f64 = 1e-12;
    let mut worst = 0.0f64;
    for beta in [0.5, 0.9, 0.99, 0.999] {
        let mut state = RegressionState::new(1);
        for t in 1..=1000 {
            state.update(&[t as f64], &[0.0], beta).expect("valid beta");
            worst = worst.max((state.s() - (1.0 - beta.powi(t))).abs());
        }
    }
    Check::new(
        "s identity",
        worst,
        TOL,
        "beta in {0.5, 0.9, 0.99, 0.999}, t <= 1000",
    )
}

/// Jacobi eigendecomposition reconstructs random symmetric matrices.
pub fn eigen_reconstruction(cases: usize, seed: u64) -> Check {
    const TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.random_range(1..=8);
        let a = Matrix::from_fn(n, n, |_, _| normal(&mut rng)).symmetrized();
        match linalg::eigh_small(&a, linalg::EIGH_TOL) {
            Ok(eig) => {
                let recon = rel(
                    eig.reconstruct().sub(&a).expect("same shape").max_abs(),
                    a.max_abs(),
                );
                worst = worst.max(recon).max(eig.rotation.orthogonality_error());
            }
            Err(e) => return Check::failed("eigen reconstruction", TOL, e.to_string()),
        }
    }
    Check::new(
        "eigen reconstruction",
        worst,
        TOL,
        format!("{cases} symmetric matrices, n <= 8"),
    )
}

/// Rotating the state conjugates the Hessian estimate; rotating into its
/// eigenframe makes the re-estimate diagonal.
pub fn rotation_covariance(cases: usize, seed: u64) -> Check {
    const TOL: f64 = 1e-10;
    const DIAG_TOL: f64 = 1e-8;
    let name = "rotation covariance";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_conj, mut worst_offdiag) = (0.0f64, 0.0f64);
    for case in 0..cases {
        let history = History::random(&mut rng);
        let outcome = (|| -> Result<(f64, f64)> {
            let d = history.dim();
            let state = history.state()?;
            let h = state.estimate_hessian()?;

            let o = Basis::random(d, d, &mut rng)?.matrix().clone();
            let mut rotated = state.clone();
            Basis::from_vectors(Matrix::identity(d))?.rotate(&mut rotated, &o)?;
            let conj = rotated
                .estimate_hessian()?
                .sub(&h.conjugate(&o)?)?
                .frobenius_norm();

            let eig = linalg::eigh_small(&h, linalg::EIGH_TOL)?;
            let mut diag = state.clone();
            Basis::from_vectors(Matrix::identity(d))?.rotate(&mut diag, &eig.rotation)?;
            let hd = diag.estimate_hessian()?;
            let off = (0..d)
                .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
                .fold(0.0f64, |m, (i, j)| m.max(hd[(i, j)].abs()));
            Ok((conj, off))
        })();
        match outcome {
            Ok((c, o)) => {
                worst_conj = worst_conj.max(c);
                worst_offdiag = worst_offdiag.max(o);
            }
            Err(e) => return Check::failed(name, TOL, format!("case {case}: {e}")),
        }
    }
    let mut check = Check::new(
        name,
        worst_conj,
        TOL,
        format!("max post-diagonalization off-diagonal {worst_offdiag:.2e} (<= {DIAG_TOL:.0e})"),
    );
    check.passed &= worst_offdiag <= DIAG_TOL;
    check
}

/// Config used for exact recovery on noiseless quadratics: a probed warmup
/// of `3 d` steps, full trust and no step cap.
pub fn exact_recovery_config(d: usize) -> OgrConfig {
    OgrConfig {
        alpha: 1.0,
        warmup_probe: 0.1,
        max_step_norm: StepCap::Fixed(f64::INFINITY),
        ..OgrConfig::with_dim(d)
    }
}

/// Relative Hessian error after warmup and distance to the minimizer after
/// one full-trust step, on a noiseless `D = d = 10` quadratic.
pub fn exact_recovery_case(condition: f64, seed: u64) -> Result<(f64, f64)> {
    let problem = Problem::new(ProblemSpec::Quadratic {
        dim: 10,
        condition,
        noise: 0.0,
        seed,
        hessian: None,
        center: None,
        start: None,
    })?;
    let truth = problem.ground_truth().expect("quadratic has ground truth");
    let mut ogr = Ogr::new(exact_recovery_config(10), problem.start().to_vec(), seed)?;
    let mut oracle = problem.oracle(seed, 0);
    while ogr.in_warmup() {
        ogr.step(&mut oracle)?;
    }
    let v = ogr.basis().matrix();
    let h = ogr.regression().estimate_hessian()?;
    let err = rel(
        h.sub(&truth.hessian.conjugate(v)?)?.frobenius_norm(),
        truth.hessian.frobenius_norm(),
    );
    ogr.step(&mut oracle)?;
    let miss: Vec<f64> = ogr
        .theta()
        .iter()
        .zip(&truth.stationary_point)
        .map(|(a, b)| a - b)
        .collect();
    Ok((err, norm(&miss)))
}

pub fn exact_recovery(seeds: std::ops::Range<u64>) -> Check {
    const TOL: f64 = 1e-6;
    let name = "exact quadratic recovery";
    let (mut h_err, mut miss) = (0.0f64, 0.0f64);
    for seed in seeds.clone() {
        match exact_recovery_case(100.0, seed) {
            Ok((e, m)) => {
                h_err = h_err.max(e);
                miss = miss.max(m);
            }
            Err(e) => return Check::failed(name, TOL, format!("seed {seed}: {e}")),
        }
    }
    Check::new(
        name,
        h_err.max(miss),
        TOL,
        format!("D = d = 10, condition 100, seeds {seeds:?}: hessian {h_err:.1e}, miss {miss:.1e}"),
    )
}

/// Outcome of [`saddle_run`].
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleRun {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Post-warmup step at which `|y|` first exceeded 1.
    pub escaped_at: Option<usize>,
    /// `|x|` at the escape step (or at the end).
    pub x_at_escape: f64,
    /// `|y|` never decreased across post-warmup steps.
    pub y_monotone: bool,
}

/// OGR on `f = (x^2 - y^2) / 2` from `(1, 0.1)` with exact gradients for up
/// to 50 post-warmup steps, stopping once `|y| > 1`.
pub fn saddle_run(saddle_free: bool) -> Result<SaddleRun> {
    let start = vec![1.0, 0.1];
    let config = OgrConfig {
        saddle_free,
        ..OgrConfig::with_dim(2)
    };
    let mut ogr = Ogr::new(config, start.clone(), 0)?;
    let mut oracle = |t: &[f64]| vec![t[0], -t[1]];
    while ogr.in_warmup() {
        ogr.step(&mut oracle as &mut dyn GradientOracle)?;
    }
    let mut y_prev = ogr.theta()[1].abs();
    let mut y_monotone = true;
    let mut escaped_at = None;
    for k in 1..=50 {
        ogr.step(&mut oracle as &mut dyn GradientOracle)?;
        let y = ogr.theta()[1].abs();
        y_monotone &= y > y_prev;
        y_prev = y;
        if saddle_free && y > 1.0 {
            escaped_at = Some(k);
            break;
        }
    }
    Ok(SaddleRun {
        start,
        end: ogr.theta().to_vec(),
        escaped_at,
        x_at_escape: ogr.theta()[0].abs(),
        y_monotone,
    })
}

/// Saddle-free steps escape the saddle; plain model-Newton steps are attracted.
pub fn saddle_repulsion() -> Check {
    let name = "saddle repulsion";
    let (free, newton) = match (saddle_run(true), saddle_run(false)) {
        (Ok(f), Ok(n)) => (f, n),
        (Err(e), _) | (_, Err(e)) => return Check::failed(name, 0.1, e.to_string()),
    };
    let attracted = norm(&newton.end) < norm(&newton.start);
    let mut check = Check::new(
        name,
        free.x_at_escape,
        0.1,
        format!(
            "|y| > 1 after {:?} steps, |y| increasing {}, newton variant |theta| {:.2e} (start {:.2e})",
            free.escaped_at,
            free.y_monotone,
            norm(&newton.end),
            norm(&newton.start)
        ),
    );
    check.passed &= free.escaped_at.is_some() && free.y_monotone && attracted;
    check
}

/// Basis orthonormality at every step of OGR runs with default exploration.
pub fn orthonormality(steps: usize, seeds: std::ops::Range<u64>) -> Check {
    let name = "orthonormality";
    let problems = match [
        ProblemSpec::default_for("quadratic").map(|p| p.with_noise(0.1)),
        Ok(ProblemSpec::Quadratic {
            dim: 50,
            condition: 100.0,
            noise: 0.1,
            seed: 3,
            hessian: None,
            center: None,
            start: None,
        }),
        ProblemSpec::default_for("rosenbrock").map(|p| p.with_noise(0.01)),
        ProblemSpec::default_for("plateau").map(|p| p.with_noise(0.01)),
    ]
    .into_iter()
    .collect::<Result<Vec<_>>>()
    {
        Ok(p) => p,
        Err(e) => return Check::failed(name, ORTHO_TOL_TIGHT, e.to_string()),
    };
    let (mut worst_after_ortho, mut worst_any) = (0.0f64, 0.0f64);
    let mut events = 0;
    for spec in &problems {
        for seed in seeds.clone() {
            let outcome = (|| -> Result<()> {
                let problem = Problem::new(spec.clone())?;
                let d = problem.dim().min(10);
                // Rosenbrock's b = 100 valley needs a smaller warmup rate than the default.
                let eta = if problem.kind() == "rosenbrock" {
                    1e-3
                } else {
                    0.01
                };
                let config = OgrConfig {
                    eta,
                    ..OgrConfig::with_dim(d)
                };
                let mut ogr = Ogr::new(config, problem.start().to_vec(), seed)?;
                let mut oracle = problem.oracle(seed, 0);
                for _ in 0..steps {
                    let report = ogr.step(&mut oracle)?;
                    let err = report.ortho_error.unwrap_or(0.0);
                    worst_any = worst_any.max(err);
                    if report.orthonormalized {
                        events += 1;
                        worst_after_ortho = worst_after_ortho.max(err);
                    }
                }
                Ok(())
            })();
            if let Err(e) = outcome {
                return Check::failed(name, ORTHO_TOL_TIGHT, format!("seed {seed}: {e}"));
            }
        }
    }
    let mut check = Check::new(
        name,
        worst_after_ortho,
        ORTHO_TOL_TIGHT,
        format!("{events} orthonormalizations; max at any step {worst_any:.2e} (<= {ORTHO_TOL_LOOSE:.0e})"),
    );
    check.passed &= worst_any <= ORTHO_TOL_LOOSE;
    check
}

/// Finite-difference tolerance per problem kind.
pub fn gradient_tolerance(kind: &str) -> f64 {
    if kind == "mlp" {
        1e-5
    } else {
        1e-6
    }
}

/// Central differences against the analytic gradient at the start and at
/// random points around it.
pub fn gradient_check(spec: ProblemSpec, seed: u64) -> Result<Check> {
    let problem = Problem::new(spec)?;
    let kind = problem.kind();
    let tol = gradient_tolerance(kind);
    let h = if kind == "mlp" { 1e-5 } else { 1e-6 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..4 {
        let scale = if k == 0 { 0.0 } else { 0.5 };
        let theta: Vec<f64> = problem
            .start()
            .iter()
            .map(|v| v + scale * normal(&mut rng))
            .collect();
        worst = worst.max(problem.finite_diff_check(&theta, h, tol)?.max_rel_error);
    }
    Ok(Check::new(
        &format!("gradient check {kind}"),
        worst,
        tol,
        format!("D = {}, start plus 3 random points", problem.dim()),
    ))
}

/// Gradient checks over every problem kind.
pub fn gradient_checks(seed: u64) -> Vec<Check> {
    ["quadratic", "saddle", "rosenbrock", "plateau", "mlp"]
        .iter()
        .map(|kind| {
            ProblemSpec::default_for(kind)
                .and_then(|spec| gradient_check(spec, seed))
                .unwrap_or_else(|e| {
                    Check::failed(&format!("gradient check {kind}"), 0.0, e.to_string())
                })
        })
        .collect()
}

/// Every suite with its default size.
pub fn run_all() -> Vec<Check> {
    let mut checks = vec![
        regression_oracle(100, 1),
        s_identity(),
        eigen_reconstruction(100, 2),
        rotation_covariance(100, 3),
        exact_recovery(0..5),
        saddle_repulsion(),
        orthonormality(500, 0..2),
    ];
    checks.extend(gradient_checks(4));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_s() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let history = History::random(&mut rng);
        let s: f64 = history.weights().iter().sum();
        assert!((s - history.state().unwrap().s()).abs() < 1e-12);
    }

    #[test]
    fn cheap_suites_pass() {
        for check in [
            regression_oracle(20, 5),
            s_identity(),
            eigen_reconstruction(20, 6),
            saddle_repulsion(),
        ] {
            assert!(check.passed, "{}", check.line());
        }
    }
}
