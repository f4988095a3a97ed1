//! Benchmark objectives with stochastic gradient oracles.
//!
//! Analytic problems add isotropic Gaussian noise of scale `noise` to the
//! exact gradient. The MLP problem instead returns minibatch gradients of a
//! fixed synthetic regression dataset. Either way the oracle is a pure
//! function of `(theta, noise_seed)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, norm, Matrix};
use crate::optimizer::GradientOracle;
use crate::subspace::Basis;

/// Construction parameters of a benchmark problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemSpec {
    /// `f = 1/2 (x - p)^T H (x - p)`. `H` is either given or random with
    /// eigenvalues log-spaced in `[1, condition]`.
    Quadratic {
        dim: usize,
        condition: f64,
        noise: f64,
        seed: u64,
        hessian: Option<Vec<Vec<f64>>>,
        center: Option<Vec<f64>>,
        start: Option<Vec<f64>>,
    },
    /// `f = 1/2 sum_i c_i x_i^2` with curvatures of either sign.
    Saddle {
        curvatures: Vec<f64>,
        noise: f64,
        start: Option<Vec<f64>>,
    },
    /// Chained Rosenbrock `sum_i b (x_{i+1} - x_i^2)^2 + (a - x_i)^2`.
    Rosenbrock {
        dim: usize,
        a: f64,
        b: f64,
        noise: f64,
    },
    /// Separable well with a long, nearly flat shelf between start and minimizer.
    Plateau { dim: usize, width: f64, noise: f64 },
    /// Two-layer tanh network on synthetic regression data, squared loss.
    Mlp {
        inputs: usize,
        hidden: usize,
        outputs: usize,
        samples: usize,
        batch: usize,
        seed: u64,
    },
}

impl ProblemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic { .. } => "quadratic",
            ProblemSpec::Saddle { .. } => "saddle",
            ProblemSpec::Rosenbrock { .. } => "rosenbrock",
            ProblemSpec::Plateau { .. } => "plateau",
            ProblemSpec::Mlp { .. } => "mlp",
        }
    }

    /// Default parameters for `kind`.
    pub fn default_for(kind: &str) -> Result<Self> {
        Ok(match kind {
            "quadratic" => ProblemSpec::Quadratic {
                dim: 10,
                condition: 10.0,
                noise: 0.0,
                seed: 0,
                hessian: None,
                center: None,
                start: None,
            },
            "saddle" => ProblemSpec::Saddle {
                curvatures: vec![1.0, -1.0],
                noise: 0.0,
                start: None,
            },
            "rosenbrock" => ProblemSpec::Rosenbrock {
                dim: 2,
                a: 1.0,
                b: 100.0,
                noise: 0.0,
            },
            "plateau" => ProblemSpec::Plateau {
                dim: 10,
                width: 3.0,
                noise: 0.0,
            },
            "mlp" => ProblemSpec::Mlp {
                inputs: 8,
                hidden: 16,
                outputs: 1,
                samples: 256,
                batch: 16,
                seed: 0,
            },
            other => {
                return Err(Error::config(
                    "kind",
                    format!("unknown problem `{other}` (expected quadratic, saddle, rosenbrock, plateau or mlp)"),
                ))
            }
        })
    }

    /// Same problem with the gradient noise set to `noise` (no effect on `mlp`).
    pub fn with_noise(mut self, value: f64) -> Self {
        match &mut self {
            ProblemSpec::Quadratic { noise, .. }
            | ProblemSpec::Saddle { noise, .. }
            | ProblemSpec::Rosenbrock { noise, .. }
            | ProblemSpec::Plateau { noise, .. } => *noise = value,
            ProblemSpec::Mlp { .. } => {}
        }
        self
    }
}

/// Known second-order structure of a problem.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub hessian: Matrix,
    pub stationary_point: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Landscape {
    Quadratic { hessian: Matrix, center: Vec<f64> },
    Rosenbrock { a: f64, b: f64 },
    Plateau(Shelf),
    Mlp(Mlp),
}

/// A benchmark objective with its stochastic gradient oracle.
#[derive(Clone, Debug)]
pub struct Problem {
    spec: ProblemSpec,
    dim: usize,
    noise: f64,
    landscape: Landscape,
    start: Vec<f64>,
    minimum: Option<f64>,
}

impl Problem {
    /// Builds and validates a problem.
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let problem = match &spec {
            ProblemSpec::Quadratic {
                dim,
                condition,
                noise,
                seed,
                hessian,
                center,
                start,
            } => build_quadratic(
                *dim,
                *condition,
                *seed,
                hessian.as_deref(),
                center.as_deref(),
                start.as_deref(),
                *noise,
            )?,
            ProblemSpec::Saddle {
                curvatures,
                noise,
                start,
            } => {
                if curvatures.is_empty() {
                    return Err(Error::config("curvatures", "need at least one curvature"));
                }
                let n = curvatures.len();
                let start = match start {
                    Some(s) => s.clone(),
                    None => {
                        let mut s = vec![0.1; n];
                        s[0] = 1.0;
                        s
                    }
                };
                check_start(&start, n)?;
                let minimum = curvatures.iter().all(|&c| c > 0.0).then_some(0.0);
                Problem {
                    spec: spec.clone(),
                    dim: n,
                    noise: *noise,
                    landscape: Landscape::Quadratic {
                        hessian: Matrix::diag(curvatures),
                        center: vec![0.0; n],
                    },
                    start,
                    minimum,
                }
            }
            ProblemSpec::Rosenbrock { dim, a, b, noise } => {
                if *dim < 2 {
                    return Err(Error::config(
                        "dim",
                        "rosenbrock needs at least 2 dimensions",
                    ));
                }
                if !(b.is_finite() && *b > 0.0 && a.is_finite()) {
                    return Err(Error::config("b", "needs finite a and positive b"));
                }
                let start = (0..*dim)
                    .map(|i| if i % 2 == 0 { -1.2 } else { 1.0 })
                    .collect();
                Problem {
                    spec: spec.clone(),
                    dim: *dim,
                    noise: *noise,
                    landscape: Landscape::Rosenbrock { a: *a, b: *b },
                    start,
                    minimum: (*a == 1.0 || *dim == 2).then_some(0.0),
                }
            }
            ProblemSpec::Plateau { dim, width, noise } => {
                if *dim == 0 {
                    return Err(Error::config("dim", "must be at least 1"));
                }
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(Error::config("width", format!("{width} must be positive")));
                }
                let shelf = Shelf::new(*width);
                shelf.check_flat_region(*dim)?;
                let x_min = shelf.minimizer();
                Problem {
                    spec: spec.clone(),
                    dim: *dim,
                    noise: *noise,
                    start: vec![shelf.start(); *dim],
                    minimum: Some(*dim as f64 * shelf.value(x_min)),
                    landscape: Landscape::Plateau(shelf),
                }
            }
            ProblemSpec::Mlp {
                inputs,
                hidden,
                outputs,
                samples,
                batch,
                seed,
            } => {
                let mlp = Mlp::new(*inputs, *hidden, *outputs, *samples, *batch, *seed)?;
                Problem {
                    spec: spec.clone(),
                    dim: mlp.dim(),
                    noise: 0.0,
                    start: mlp.initial_parameters(),
                    minimum: None,
                    landscape: Landscape::Mlp(mlp),
                }
            }
        };
        if !(problem.noise >= 0.0 && problem.noise.is_finite()) {
            return Err(Error::config(
                "noise",
                format!("{} must be a finite nonnegative number", problem.noise),
            ));
        }
        Ok(problem)
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn kind(&self) -> &'static str {
        self.spec.kind()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Recommended initial parameters.
    pub fn start(&self) -> &[f64] {
        &self.start
    }

    /// Global minimum value, when known.
    pub fn minimum(&self) -> Option<f64> {
        self.minimum
    }

    /// Exact Hessian and stationary point for quadratic landscapes.
    pub fn ground_truth(&self) -> Option<GroundTruth> {
        match &self.landscape {
            Landscape::Quadratic { hessian, center } => Some(GroundTruth {
                hessian: hessian.clone(),
                stationary_point: center.clone(),
            }),
            _ => None,
        }
    }

    /// Noise-free objective (full dataset for the MLP).
    pub fn objective(&self, theta: &[f64]) -> f64 {
        match &self.landscape {
            Landscape::Quadratic { hessian, center } => {
                let diff: Vec<f64> = theta.iter().zip(center).map(|(t, c)| t - c).collect();
                let hd = hessian
                    .mul_vec(&diff)
                    .expect("dimension checked at construction");
                0.5 * linalg::dot(&diff, &hd)
            }
            Landscape::Rosenbrock { a, b } => theta
                .windows(2)
                .map(|w| b * (w[1] - w[0] * w[0]).powi(2) + (a - w[0]).powi(2))
                .sum(),
            Landscape::Plateau(shelf) => theta.iter().map(|&x| shelf.value(x)).sum(),
            Landscape::Mlp(mlp) => mlp.loss(theta, None),
        }
    }

    /// Noise-free gradient (full dataset for the MLP).
    pub fn exact_gradient(&self, theta: &[f64]) -> Vec<f64> {
        match &self.landscape {
            Landscape::Quadratic { hessian, center } => {
                let diff: Vec<f64> = theta.iter().zip(center).map(|(t, c)| t - c).collect();
                hessian
                    .mul_vec(&diff)
                    .expect("dimension checked at construction")
            }
            Landscape::Rosenbrock { a, b } => {
                let n = theta.len();
                let mut g = vec![0.0; n];
                for i in 0..n - 1 {
                    let r = theta[i + 1] - theta[i] * theta[i];
                    g[i] += -4.0 * b * theta[i] * r - 2.0 * (a - theta[i]);
                    g[i + 1] += 2.0 * b * r;
                }
                g
            }
            Landscape::Plateau(shelf) => theta.iter().map(|&x| shelf.derivative(x)).collect(),
            Landscape::Mlp(mlp) => mlp.gradient(theta, None),
        }
    }

    /// Stochastic gradient, deterministic in `(theta, noise_seed)`.
    pub fn gradient(&self, theta: &[f64], noise_seed: u64) -> Result<Vec<f64>> {
        check_len("Problem::gradient", self.dim, theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Oracle("non-finite parameters".into()));
        }
        if let Landscape::Mlp(mlp) = &self.landscape {
            return Ok(mlp.gradient(theta, Some(mlp.batch_for(noise_seed))));
        }
        let mut g = self.exact_gradient(theta);
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            for v in &mut g {
                let z: f64 = rng.sample(StandardNormal);
                *v += self.noise * z;
            }
        }
        Ok(g)
    }

    /// Minibatches per epoch (1 for analytic problems).
    pub fn batches_per_epoch(&self) -> usize {
        match &self.landscape {
            Landscape::Mlp(mlp) => mlp.batches_per_epoch(),
            _ => 1,
        }
    }

    /// Central-difference check of the analytic gradient at `theta`.
    pub fn finite_diff_check(&self, theta: &[f64], h: f64, tol: f64) -> Result<GradCheck> {
        check_len("finite_diff_check", self.dim, theta.len())?;
        let analytic = self.exact_gradient(theta);
        let mut probe = theta.to_vec();
        let mut numeric = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = self.objective(&probe);
            probe[i] = orig - h;
            let down = self.objective(&probe);
            probe[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let scale = analytic
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-8);
        let (worst_index, max_abs) = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .enumerate()
            .fold(
                (0, 0.0f64),
                |best, (i, e)| if e > best.1 { (i, e) } else { best },
            );
        let max_rel_error = max_abs / scale;
        Ok(GradCheck {
            max_rel_error,
            worst_index,
            passed: max_rel_error <= tol,
        })
    }

    /// Gradient oracle for one run: evaluation `k` uses noise seed `mix(run_seed, stream, k)`.
    pub fn oracle(&self, run_seed: u64, stream: u64) -> ProblemOracle<'_> {
        ProblemOracle {
            problem: self,
            run_seed,
            stream,
            evaluations: 0,
        }
    }
}

/// Result of [`Problem::finite_diff_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `max_i |analytic_i - numeric_i| / max_i |analytic_i|`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Counts evaluations and derives a fresh noise seed for each one.
#[derive(Clone, Debug)]
pub struct ProblemOracle<'a> {
    problem: &'a Problem,
    run_seed: u64,
    stream: u64,
    evaluations: u64,
}

impl ProblemOracle<'_> {
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn next_seed(&self) -> u64 {
        mix_seed(&[self.run_seed, self.stream, self.evaluations])
    }
}

impl GradientOracle for ProblemOracle<'_> {
    fn gradient(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        let seed = self.next_seed();
        self.evaluations += 1;
        self.problem.gradient(theta, seed)
    }

    fn objective(&mut self, theta: &[f64]) -> Option<f64> {
        Some(self.problem.objective(theta))
    }
}

/// Order-sensitive SplitMix64 combination of seed parts.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        state ^= p;
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

fn check_start(start: &[f64], dim: usize) -> Result<()> {
    if start.len() != dim {
        return Err(Error::config(
            "start",
            format!("has {} entries, expected {dim}", start.len()),
        ));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("start", "must be finite"));
    }
    Ok(())
}

fn build_quadratic(
    dim: usize,
    condition: f64,
    seed: u64,
    hessian: Option<&[Vec<f64>]>,
    center: Option<&[f64]>,
    start: Option<&[f64]>,
    noise: f64,
) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hessian = match hessian {
        Some(rows) => {
            let h = Matrix::from_rows(rows)
                .map_err(|_| Error::config("hessian", "rows have unequal lengths"))?;
            if !h.is_square() || h.rows() == 0 {
                return Err(Error::config("hessian", "must be a nonempty square matrix"));
            }
            if !h.is_finite() {
                return Err(Error::config("hessian", "entries must be finite"));
            }
            if h.asymmetry() > 1e-12 * h.max_abs() {
                return Err(Error::config("hessian", "must be symmetric"));
            }
            h
        }
        None => {
            if dim == 0 {
                return Err(Error::config("dim", "must be at least 1"));
            }
            if !(condition >= 1.0 && condition.is_finite()) {
                return Err(Error::config(
                    "condition",
                    format!("{condition} must be at least 1"),
                ));
            }
            let eigenvalues: Vec<f64> = (0..dim)
                .map(|i| {
                    let frac = if dim == 1 {
                        0.0
                    } else {
                        i as f64 / (dim - 1) as f64
                    };
                    condition.powf(frac)
                })
                .collect();
            let q = Basis::random(dim, dim, &mut rng)?;
            Matrix::diag(&eigenvalues)
                .conjugate(&q.matrix().transpose())?
                .symmetrized()
        }
    };
    let n = hessian.rows();
    if dim != 0 && dim != n {
        return Err(Error::config(
            "dim",
            format!("{dim} does not match the hessian order {n}"),
        ));
    }
    let center = match center {
        Some(c) => {
            check_start(c, n)
                .map_err(|_| Error::config("center", format!("needs {n} finite entries")))?;
            c.to_vec()
        }
        None => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    };
    let start = match start {
        Some(s) => {
            check_start(s, n)?;
            s.to_vec()
        }
        None => center
            .iter()
            .map(|c| c + rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    let minimum = linalg::eigh_small(&hessian, linalg::EIGH_TOL)?
        .values
        .iter()
        .all(|&l| l > 0.0)
        .then_some(0.0);
    Ok(Problem {
        spec: ProblemSpec::Quadratic {
            dim: n,
            condition,
            noise,
            seed,
            hessian: Some(hessian.to_rows()),
            center: Some(center.clone()),
            start: Some(start.clone()),
        },
        dim: n,
        noise,
        landscape: Landscape::Quadratic { hessian, center },
        start,
        minimum,
    })
}

/// One coordinate of the plateau landscape:
/// `h(x) = 1 - exp(-x^2 / 2) + w softplus((x - b) / w) + w softplus((-x - 3) / w)`.
///
/// A unit Gaussian well sits near the origin, a unit-slope ramp of softness
/// `w` starts around `b`, and a mirrored wall past `-3` keeps the far side of
/// the well from being a second, unbounded plateau. Between `SHELF_START` and `SHELF_START + width`
/// both terms are nearly flat but strictly increasing, so the shelf holds no
/// stationary point.
#[derive(Clone, Copy, Debug)]
struct Shelf {
    width: f64,
    ramp_center: f64,
}

const SHELF_START: f64 = 5.0;
const RAMP_SOFTNESS: f64 = 0.4;
const WALL_START: f64 = -3.0;
/// Largest gradient norm allowed anywhere on the flat region.
pub const PLATEAU_FLATNESS: f64 = 1e-3;

impl Shelf {
    fn new(width: f64) -> Self {
        Self {
            width,
            ramp_center: SHELF_START + width + 10.0 * RAMP_SOFTNESS,
        }
    }

    fn start(&self) -> f64 {
        self.ramp_center + 2.0
    }

    fn value(&self, x: f64) -> f64 {
        let ramp = (x - self.ramp_center) / RAMP_SOFTNESS;
        let wall = (WALL_START - x) / RAMP_SOFTNESS;
        1.0 - (-0.5 * x * x).exp() + RAMP_SOFTNESS * (softplus(ramp) + softplus(wall))
    }

    fn derivative(&self, x: f64) -> f64 {
        let ramp = (x - self.ramp_center) / RAMP_SOFTNESS;
        let wall = (WALL_START - x) / RAMP_SOFTNESS;
        x * (-0.5 * x * x).exp() + sigmoid(ramp) - sigmoid(wall)
    }

    /// The single root of `h'`, in `[-1, 1]`.
    fn minimizer(&self) -> f64 {
        let (mut lo, mut hi) = (-1.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.derivative(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn check_flat_region(&self, dim: usize) -> Result<()> {
        let samples = 64;
        let mut worst: f64 = 0.0;
        for k in 0..=samples {
            let x = SHELF_START + self.width * k as f64 / samples as f64;
            let d = self.derivative(x);
            if !(d > 0.0) {
                return Err(Error::config(
                    "width",
                    format!("stationary point on the shelf near {x}"),
                ));
            }
            worst = worst.max(d);
        }
        // Separable: the largest gradient norm on the cube is sqrt(dim) times the per-coordinate maximum.
        let grad_norm = worst * (dim as f64).sqrt();
        if grad_norm >= PLATEAU_FLATNESS {
            return Err(Error::config(
                "dim",
                format!("shelf gradient norm {grad_norm:e} is not below {PLATEAU_FLATNESS:e} in {dim} dimensions"),
            ));
        }
        Ok(())
    }

    fn flat_region(&self) -> (f64, f64) {
        (SHELF_START, SHELF_START + self.width)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Problem {
    /// Per-coordinate bounds of the designated flat region of a plateau problem.
    pub fn flat_region(&self) -> Option<(f64, f64)> {
        match &self.landscape {
            Landscape::Plateau(shelf) => Some(shelf.flat_region()),
            _ => None,
        }
    }
}

/// Teacher-generated regression data and a student network of the same shape.
#[derive(Clone, Debug)]
struct Mlp {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    batch: usize,
    seed: u64,
    xs: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
}

const MLP_MAX_HIDDEN: usize = 64;

impl Mlp {
    fn new(
        inputs: usize,
        hidden: usize,
        outputs: usize,
        samples: usize,
        batch: usize,
        seed: u64,
    ) -> Result<Self> {
        for (key, v) in [
            ("inputs", inputs),
            ("hidden", hidden),
            ("outputs", outputs),
            ("samples", samples),
            ("batch", batch),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if hidden > MLP_MAX_HIDDEN {
            return Err(Error::config(
                "hidden",
                format!("{hidden} exceeds the maximum of {MLP_MAX_HIDDEN}"),
            ));
        }
        if !samples.is_multiple_of(batch) {
            return Err(Error::config(
                "batch",
                format!("{batch} does not divide samples = {samples}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1]));
        let shape = Self {
            inputs,
            hidden,
            outputs,
            batch,
            seed,
            xs: Vec::new(),
            ys: Vec::new(),
        };
        let teacher: Vec<f64> = (0..shape.dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let xs: Vec<Vec<f64>> = (0..samples)
            .map(|_| (0..inputs).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let ys = xs
            .iter()
            .map(|x| {
                let mut y = shape.forward(&teacher, x).1;
                for v in &mut y {
                    *v += 0.05 * rng.sample::<f64, _>(StandardNormal);
                }
                y
            })
            .collect();
        Ok(Self { xs, ys, ..shape })
    }

    fn dim(&self) -> usize {
        self.hidden * self.inputs + self.hidden + self.outputs * self.hidden + self.outputs
    }

    fn batches_per_epoch(&self) -> usize {
        self.xs.len() / self.batch
    }

    fn initial_parameters(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, 2]));
        let (_, b1, w2, b2) = self.offsets();
        (0..self.dim())
            .map(|k| {
                let fan_in = if k < b1 {
                    self.inputs
                } else if (w2..b2).contains(&k) {
                    self.hidden
                } else {
                    return 0.0;
                };
                rng.sample::<f64, _>(StandardNormal) / (fan_in as f64).sqrt()
            })
            .collect()
    }

    /// Start offsets of W1, b1, W2, b2 inside the flat parameter vector.
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        (w1, b1, w2, b2)
    }

    /// Hidden activations and outputs for one input.
    fn forward(&self, theta: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (w1, b1, w2, b2) = self.offsets();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &theta[w1 + j * self.inputs..w1 + (j + 1) * self.inputs];
                (linalg::dot(row, x) + theta[b1 + j]).tanh()
            })
            .collect();
        let out = (0..self.outputs)
            .map(|k| {
                let row = &theta[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
                linalg::dot(row, &hidden) + theta[b2 + k]
            })
            .collect();
        (hidden, out)
    }

    /// Sample indices of the minibatch selected by `noise_seed`: the seed
    /// picks an epoch (fixing a permutation) and a batch within it.
    fn batch_for(&self, noise_seed: u64) -> Vec<usize> {
        let per_epoch = self.batches_per_epoch() as u64;
        let epoch = noise_seed / per_epoch;
        let index = (noise_seed % per_epoch) as usize;
        let mut order: Vec<usize> = (0..self.xs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.seed, 3, epoch,
        ])));
        order[index * self.batch..(index + 1) * self.batch].to_vec()
    }

    fn loss(&self, theta: &[f64], batch: Option<Vec<usize>>) -> f64 {
        let idx = batch.unwrap_or_else(|| (0..self.xs.len()).collect());
        let total: f64 = idx
            .iter()
            .map(|&n| {
                let (_, out) = self.forward(theta, &self.xs[n]);
                0.5 * out
                    .iter()
                    .zip(&self.ys[n])
                    .map(|(o, y)| (o - y).powi(2))
                    .sum::<f64>()
            })
            .sum();
        total / idx.len() as f64
    }

    fn gradient(&self, theta: &[f64], batch: Option<Vec<usize>>) -> Vec<f64> {
        let idx = batch.unwrap_or_else(|| (0..self.xs.len()).collect());
        let (w1, b1, w2, b2) = self.offsets();
        let mut grad = vec![0.0; self.dim()];
        for &n in &idx {
            let x = &self.xs[n];
            let (hidden, out) = self.forward(theta, x);
            let err: Vec<f64> = out.iter().zip(&self.ys[n]).map(|(o, y)| o - y).collect();
            let mut back = vec![0.0; self.hidden];
            for k in 0..self.outputs {
                grad[b2 + k] += err[k];
                for j in 0..self.hidden {
                    grad[w2 + k * self.hidden + j] += err[k] * hidden[j];
                    back[j] += err[k] * theta[w2 + k * self.hidden + j];
                }
            }
            for j in 0..self.hidden {
                let dz = back[j] * (1.0 - hidden[j] * hidden[j]);
                grad[b1 + j] += dz;
                linalg::axpy(
                    dz,
                    x,
                    &mut grad[w1 + j * self.inputs..w1 + (j + 1) * self.inputs],
                );
            }
        }
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        grad
    }
}

/// Largest gradient norm of a plateau problem over random points of its flat region.
pub fn plateau_flatness(problem: &Problem, samples: usize, seed: u64) -> Option<f64> {
    let (lo, hi) = problem.flat_region()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let worst = (0..samples)
        .map(|_| {
            let x: Vec<f64> = (0..problem.dim())
                .map(|_| rng.random_range(lo..=hi))
                .collect();
            norm(&problem.exact_gradient(&x))
        })
        .fold(0.0f64, f64::max);
    Some(worst)
}
