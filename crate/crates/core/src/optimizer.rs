//! The regression-based optimizer and the first-order baselines it is compared against.
//!
//! Each optimizer step of [`Ogr`] consumes exactly one stochastic gradient:
//!
//! 1. draw `g` at the current parameters;
//! 2. fold the subspace coordinates of `(theta, g)` into the regression state;
//! 3. estimate curvatures `lambda_i` and stationary coordinates `p_i`;
//! 4. move `alpha * sign(lambda_i) * (p_i - theta_i)` along each direction, so
//!    negative curvature repels instead of attracting;
//! 5. rotate the basis toward the residual gradient and descend along it;
//! 6. periodically diagonalize the subspace Hessian and rotate into its eigenframe;
//! 7. periodically (or on drift) restore orthonormality of the basis.
//!
//! Before the model has seen enough samples, warmup steps run plain SGD while
//! still updating the regression and exploring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, norm};
use crate::regression::{self, clip, CurvatureModel, RegressionState};
use crate::subspace::{Basis, ORTHO_TOL_LOOSE};

/// Source of stochastic gradients.
pub trait GradientOracle {
    fn gradient(&mut self, theta: &[f64]) -> Result<Vec<f64>>;

    /// Noise-free objective value, when the oracle can provide one. Only used for reporting.
    fn objective(&mut self, _theta: &[f64]) -> Option<f64> {
        None
    }
}

impl<F> GradientOracle for F
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    fn gradient(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self(theta))
    }
}

/// How curvature is estimated inside the subspace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Independent 1D regressions along each basis direction.
    #[default]
    Diagonal,
    /// Full `d x d` Hessian and stationary point every step, stepping in its eigenframe.
    Entangled,
}

/// Limit on the norm of the in-subspace displacement of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepCap {
    /// Absolute bound; `f64::INFINITY` disables capping.
    Fixed(f64),
    /// Multiple of the running RMS of past step norms.
    RelativeRms(f64),
}

impl Default for StepCap {
    fn default() -> Self {
        StepCap::RelativeRms(10.0)
    }
}

/// Hyperparameters of [`Ogr`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OgrConfig {
    /// Number of modeled directions.
    pub d: usize,
    /// Trust in the model: fraction of the way to the modeled stationary point.
    pub alpha: f64,
    /// EMA constant of the regression averages.
    pub beta: f64,
    /// Exploration rate of the basis rotation.
    pub gamma: f64,
    /// Curvature clipping floor.
    pub epsilon: f64,
    /// Gradient descent rate outside the subspace, and during warmup.
    pub eta: f64,
    pub warmup_steps: usize,
    /// Scale of a random in-subspace displacement added to each warmup step.
    /// Noiseless gradient descent alone visits nearly collinear points; the
    /// probe gives the regression full-rank spread. 0 disables it.
    pub warmup_probe: f64,
    pub diag_period: usize,
    pub ortho_period: usize,
    pub mode: Mode,
    /// Per-direction exploration `gamma_i ~ |lambda_i|^-kappa`, normalized to mean `gamma`.
    pub explore_kappa: Option<f64>,
    pub max_step_norm: StepCap,
    /// Flip the step on negative curvature. Disabling gives plain Newton on the model.
    pub saddle_free: bool,
}

impl Default for OgrConfig {
    fn default() -> Self {
        Self::with_dim(10)
    }
}

impl OgrConfig {
    /// Defaults for `d` modeled directions (warmup of `3 d` steps).
    pub fn with_dim(d: usize) -> Self {
        Self {
            d,
            alpha: 0.5,
            beta: 0.9,
            gamma: 1e-3,
            epsilon: 1e-4,
            eta: 0.01,
            warmup_steps: (3 * d).max(2),
            warmup_probe: 0.0,
            diag_period: 10,
            ortho_period: 20,
            mode: Mode::Diagonal,
            explore_kappa: None,
            max_step_norm: StepCap::default(),
            saddle_free: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.d == 0 {
            return fail("d", "must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail("alpha", format!("{} is outside (0, 1]", self.alpha));
        }
        regression::check_beta(self.beta)?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail(
                "gamma",
                format!("{} must be a finite nonnegative number", self.gamma),
            );
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon", format!("{} must be positive", self.epsilon));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return fail(
                "eta",
                format!("{} must be a finite nonnegative number", self.eta),
            );
        }
        if self.warmup_steps < 2 {
            return fail(
                "warmup_steps",
                format!("{} is below the minimum of 2", self.warmup_steps),
            );
        }
        if !(self.warmup_probe >= 0.0 && self.warmup_probe.is_finite()) {
            return fail(
                "warmup_probe",
                format!("{} must be a finite nonnegative number", self.warmup_probe),
            );
        }
        if self.diag_period == 0 {
            return fail("diag_period", "must be at least 1".into());
        }
        if self.ortho_period == 0 {
            return fail("ortho_period", "must be at least 1".into());
        }
        if let Some(kappa) = self.explore_kappa {
            if !(kappa >= 0.0 && kappa.is_finite()) {
                return fail(
                    "explore_kappa",
                    format!("{kappa} must be a finite nonnegative number"),
                );
            }
        }
        match self.max_step_norm {
            StepCap::Fixed(v) if !(v > 0.0) => {
                fail("max_step_norm", format!("{v} must be positive"))
            }
            StepCap::RelativeRms(v) if !(v > 0.0 && v.is_finite()) => {
                fail("step_cap_rms_factor", format!("{v} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// What happened during one optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    /// Steps completed, including this one.
    pub step: usize,
    pub objective_before: Option<f64>,
    pub objective_after: Option<f64>,
    pub grad_norm: f64,
    /// Norm of the gradient part outside the tracked subspace.
    pub residual_norm: Option<f64>,
    /// Curvatures used for the step (clipped); empty for warmup and baselines.
    pub lambdas: Vec<f64>,
    pub ps: Vec<f64>,
    pub step_norm: f64,
    pub ortho_error: Option<f64>,
    pub warmup: bool,
    pub diagonalized: bool,
    /// Diagonalization was due but the regression lacked spread.
    pub diag_skipped: bool,
    pub orthonormalized: bool,
    /// The in-subspace step hit the step cap.
    pub capped: bool,
    /// Directions that fell back to gradient descent for lack of spread.
    pub fallback_directions: usize,
    /// Basis vectors replaced after collapsing.
    pub basis_repairs: usize,
}

impl StepReport {
    /// `|`-separated event flags, e.g. `diag|ortho`.
    pub fn events(&self) -> String {
        let mut events = Vec::new();
        if self.warmup {
            events.push("warmup".to_string());
        }
        if self.diagonalized {
            events.push("diag".to_string());
        }
        if self.diag_skipped {
            events.push("diag_skipped".to_string());
        }
        if self.orthonormalized {
            events.push("ortho".to_string());
        }
        if self.capped {
            events.push("capped".to_string());
        }
        if self.fallback_directions > 0 {
            events.push(format!("fallback{}", self.fallback_directions));
        }
        if self.basis_repairs > 0 {
            events.push(format!("repair{}", self.basis_repairs));
        }
        events.join("|")
    }
}

/// Common interface of every optimizer in the harness.
pub trait Optimizer {
    fn name(&self) -> &str;
    fn theta(&self) -> &[f64];
    /// Performs one step, consuming exactly one gradient evaluation.
    fn step(&mut self, oracle: &mut dyn GradientOracle) -> Result<StepReport>;
}

/// Online gradient regression optimizer.
#[derive(Clone, Debug)]
pub struct Ogr {
    name: String,
    config: OgrConfig,
    theta: Vec<f64>,
    basis: Basis,
    regression: RegressionState,
    t: usize,
    rng: ChaCha8Rng,
    step_sq_avg: f64,
    step_sq_weight: f64,
    last_lambdas: Option<Vec<f64>>,
}

const STEP_RMS_BETA: f64 = 0.99;

impl Ogr {
    /// Zeroed regression state and a seeded random orthonormal basis around `theta0`.
    pub fn new(config: OgrConfig, theta0: Vec<f64>, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.d > theta0.len() {
            return Err(Error::config(
                "d",
                format!(
                    "{} exceeds the problem dimension {}",
                    config.d,
                    theta0.len()
                ),
            ));
        }
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("theta0", "initial parameters must be finite"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = Basis::random(config.d, theta0.len(), &mut rng)?;
        Ok(Self {
            name: "ogr".to_string(),
            regression: RegressionState::new(config.d),
            config,
            theta: theta0,
            basis,
            t: 0,
            rng,
            step_sq_avg: 0.0,
            step_sq_weight: 0.0,
            last_lambdas: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &OgrConfig {
        &self.config
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn regression(&self) -> &RegressionState {
        &self.regression
    }

    /// Steps completed so far.
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn in_warmup(&self) -> bool {
        self.t < self.config.warmup_steps
    }

    /// Replaces the parameters, e.g. to restart from a chosen point with the current model.
    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        check_len("Ogr::set_theta", self.theta.len(), theta.len())?;
        self.theta = theta;
        Ok(())
    }

    fn draw_gradient(&mut self, oracle: &mut dyn GradientOracle) -> Result<Vec<f64>> {
        let g = oracle.gradient(&self.theta)?;
        check_len("gradient oracle", self.theta.len(), g.len())?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Oracle(format!(
                "non-finite gradient at step {}",
                self.t + 1
            )));
        }
        Ok(g)
    }

    /// Plain SGD step that still trains the model and explores.
    ///
    /// The last warmup step also diagonalizes and orthonormalizes.
    pub fn warmup_step(&mut self, oracle: &mut dyn GradientOracle) -> Result<StepReport> {
        if !self.in_warmup() {
            return Err(Error::config("warmup_steps", "warmup already completed"));
        }
        let objective_before = oracle.objective(&self.theta);
        let g = self.draw_gradient(oracle)?;
        let theta_coords = self.basis.coords(&self.theta)?;
        let g_coords = self.basis.coords(&g)?;
        self.regression
            .update(&theta_coords, &g_coords, self.config.beta)?;

        let residual = self.basis.residual_with_coords(&g, &g_coords);
        self.explore(&residual)?;
        let mut delta: Vec<f64> = g.iter().map(|v| -self.config.eta * v).collect();
        if self.config.warmup_probe > 0.0 {
            let z: Vec<f64> = (0..self.config.d)
                .map(|_| self.config.warmup_probe * self.rng.sample::<f64, _>(StandardNormal))
                .collect();
            linalg::axpy(1.0, &self.basis.combine(&z)?, &mut delta);
        }
        linalg::axpy(1.0, &delta, &mut self.theta);
        let step_norm = norm(&delta);
        self.record_step_norm(step_norm);
        self.t += 1;

        let mut report = StepReport {
            step: self.t,
            grad_norm: norm(&g),
            residual_norm: Some(norm(&residual)),
            step_norm,
            warmup: true,
            ..StepReport::default()
        };
        if self.t == self.config.warmup_steps {
            report.diagonalized = self.diagonalize_now()?;
            report.diag_skipped = !report.diagonalized;
            report.basis_repairs = self.orthonormalize()?;
            report.orthonormalized = true;
        } else if self.basis.orthonormality_error() > ORTHO_TOL_LOOSE {
            report.basis_repairs = self.orthonormalize()?;
            report.orthonormalized = true;
        }
        report.ortho_error = Some(self.basis.orthonormality_error());
        report.objective_before = objective_before;
        report.objective_after = oracle.objective(&self.theta);
        Ok(report)
    }

    /// One model-based step; requires a completed warmup.
    pub fn ogr_step(&mut self, oracle: &mut dyn GradientOracle) -> Result<StepReport> {
        if self.in_warmup() {
            return Err(Error::config("warmup_steps", "warmup not finished"));
        }
        let objective_before = oracle.objective(&self.theta);
        let g = self.draw_gradient(oracle)?;
        let theta_coords = self.basis.coords(&self.theta)?;
        let g_coords = self.basis.coords(&g)?;
        self.regression
            .update(&theta_coords, &g_coords, self.config.beta)?;

        let mut report = StepReport {
            grad_norm: norm(&g),
            ..StepReport::default()
        };
        let coefficients = match self.config.mode {
            Mode::Diagonal => self.diagonal_step(&theta_coords, &g_coords, &mut report)?,
            Mode::Entangled => self.entangled_step(&theta_coords, &g_coords, &mut report)?,
        };

        let mut sub_step = self.basis.combine(&coefficients)?;
        let sub_norm = norm(&sub_step);
        let limit = self.step_limit();
        if sub_norm > limit {
            let scale = limit / sub_norm;
            sub_step.iter_mut().for_each(|v| *v *= scale);
            report.capped = true;
        }

        let residual = self.basis.residual_with_coords(&g, &g_coords);
        self.explore(&residual)?;
        let mut total = sub_step;
        linalg::axpy(-self.config.eta, &residual, &mut total);
        linalg::axpy(1.0, &total, &mut self.theta);
        report.step_norm = norm(&total);
        report.residual_norm = Some(norm(&residual));
        self.record_step_norm(report.step_norm);
        self.t += 1;
        report.step = self.t;

        if self.t.is_multiple_of(self.config.diag_period) {
            report.diagonalized = self.diagonalize_now()?;
            report.diag_skipped = !report.diagonalized;
        }
        if self.t.is_multiple_of(self.config.ortho_period)
            || self.basis.orthonormality_error() > ORTHO_TOL_LOOSE
        {
            report.basis_repairs = self.orthonormalize()?;
            report.orthonormalized = true;
        }
        report.ortho_error = Some(self.basis.orthonormality_error());
        report.objective_before = objective_before;
        report.objective_after = oracle.objective(&self.theta);
        Ok(report)
    }

    /// Per-direction 1D regressions; returns the step coefficients along the basis.
    fn diagonal_step(
        &mut self,
        theta_coords: &[f64],
        g_coords: &[f64],
        report: &mut StepReport,
    ) -> Result<Vec<f64>> {
        let d = self.config.d;
        let mut model = CurvatureModel {
            lambdas: Vec::with_capacity(d),
            ps: Vec::with_capacity(d),
        };
        let mut coefficients = Vec::with_capacity(d);
        for i in 0..d {
            match self.regression.estimate_1d(i, self.config.epsilon) {
                Ok((lambda, p)) => {
                    coefficients.push(self.model_step(lambda, p - theta_coords[i]));
                    model.lambdas.push(lambda);
                    model.ps.push(p);
                }
                Err(Error::InsufficientSpread { .. }) => {
                    coefficients.push(-self.config.eta * g_coords[i]);
                    report.fallback_directions += 1;
                }
                Err(e) => return Err(e),
            }
        }
        self.last_lambdas = (report.fallback_directions == 0).then(|| model.lambdas.clone());
        report.lambdas = model.lambdas;
        report.ps = model.ps;
        Ok(coefficients)
    }

    /// Full-Hessian variant: clipped eigenvalues, stationary point, step in the eigenframe.
    fn entangled_step(
        &mut self,
        theta_coords: &[f64],
        g_coords: &[f64],
        report: &mut StepReport,
    ) -> Result<Vec<f64>> {
        let d = self.config.d;
        let h = match self.regression.estimate_hessian() {
            Ok(h) => h,
            Err(Error::InsufficientSpread { .. }) => {
                report.fallback_directions = d;
                self.last_lambdas = None;
                return Ok(g_coords.iter().map(|g| -self.config.eta * g).collect());
            }
            Err(e) => return Err(e),
        };
        let eig = linalg::eigh_small(&h, linalg::EIGH_TOL)?;
        let lambdas: Vec<f64> = eig
            .values
            .iter()
            .map(|&l| clip(l, self.config.epsilon))
            .collect();
        let clipped = linalg::EigenPair {
            values: lambdas.clone(),
            rotation: eig.rotation.clone(),
        }
        .reconstruct();
        let p = self.regression.estimate_stationary_point(&clipped)?;
        let offset: Vec<f64> = p.iter().zip(theta_coords).map(|(p, t)| p - t).collect();
        let offset_eigen = eig.rotation.mul_vec(&offset)?;
        let stepped: Vec<f64> = offset_eigen
            .iter()
            .zip(&lambdas)
            .map(|(&o, &l)| self.model_step(l, o))
            .collect();
        report.ps = eig.rotation.mul_vec(&p)?;
        report.lambdas = lambdas.clone();
        // Exploration rates are per basis vector, so weight by the diagonal of H.
        self.last_lambdas = Some(
            (0..d)
                .map(|i| h[(i, i)].abs().max(self.config.epsilon))
                .collect(),
        );
        eig.rotation.tr_mul_vec(&stepped)
    }

    fn model_step(&self, lambda: f64, offset: f64) -> f64 {
        let direction = if self.config.saddle_free && lambda < 0.0 {
            -1.0
        } else {
            1.0
        };
        self.config.alpha * direction * offset
    }

    fn step_limit(&self) -> f64 {
        match self.config.max_step_norm {
            StepCap::Fixed(v) => v,
            StepCap::RelativeRms(factor) => {
                if self.step_sq_weight > 0.0 {
                    let rms = (self.step_sq_avg / self.step_sq_weight).sqrt();
                    if rms > 0.0 {
                        factor * rms
                    } else {
                        f64::INFINITY
                    }
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn record_step_norm(&mut self, step_norm: f64) {
        self.step_sq_avg =
            STEP_RMS_BETA * self.step_sq_avg + (1.0 - STEP_RMS_BETA) * step_norm * step_norm;
        self.step_sq_weight = STEP_RMS_BETA * self.step_sq_weight + (1.0 - STEP_RMS_BETA);
    }

    fn explore(&mut self, residual: &[f64]) -> Result<()> {
        match (self.config.explore_kappa, &self.last_lambdas) {
            (Some(kappa), Some(lambdas)) if kappa > 0.0 => {
                let weights: Vec<f64> = lambdas.iter().map(|l| l.abs().powf(-kappa)).collect();
                let total: f64 = weights.iter().sum();
                let d = weights.len() as f64;
                let gammas: Vec<f64> = weights
                    .iter()
                    .map(|w| self.config.gamma * d * w / total)
                    .collect();
                self.basis.explore_weighted(residual, &gammas)
            }
            _ => self.basis.explore(residual, self.config.gamma),
        }
    }

    /// Estimates the subspace Hessian and rotates basis and averages into its eigenframe.
    ///
    /// Returns `false` (and changes nothing) when the regression lacks spread.
    pub fn diagonalize_now(&mut self) -> Result<bool> {
        let h = match self.regression.estimate_hessian() {
            Ok(h) => h,
            Err(Error::InsufficientSpread { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
        let eig = linalg::eigh_small(&h, linalg::EIGH_TOL)?;
        self.basis.rotate(&mut self.regression, &eig.rotation)?;
        self.last_lambdas = Some(
            eig.values
                .iter()
                .map(|l| l.abs().max(self.config.epsilon))
                .collect(),
        );
        Ok(true)
    }

    /// Orthonormalizes the basis, replacing collapsed vectors by random ones.
    /// Returns the number of replaced vectors.
    pub fn orthonormalize(&mut self) -> Result<usize> {
        let mut repairs = 0;
        loop {
            match self.basis.orthonormalize() {
                Ok(_) => return Ok(repairs),
                Err(Error::DegenerateBasis { index }) if repairs <= self.config.d => {
                    self.basis.replace_with_random(index, &mut self.rng)?;
                    repairs += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl Optimizer for Ogr {
    fn name(&self) -> &str {
        &self.name
    }

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn step(&mut self, oracle: &mut dyn GradientOracle) -> Result<StepReport> {
        if self.in_warmup() {
            self.warmup_step(oracle)
        } else {
            self.ogr_step(oracle)
        }
    }
}

/// First-order reference methods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineKind {
    Sgd {
        lr: f64,
    },
    /// `v <- decay v + g; theta <- theta - lr v`
    Momentum {
        lr: f64,
        decay: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl BaselineKind {
    pub fn adam(lr: f64) -> Self {
        BaselineKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::Sgd { .. } => "sgd",
            BaselineKind::Momentum { .. } => "momentum",
            BaselineKind::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} must be positive")))
            }
        };
        let unit = |key: &str, v: f64, allow_zero: bool| {
            if (v > 0.0 || (allow_zero && v == 0.0)) && v < 1.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} is outside [0, 1)")))
            }
        };
        match *self {
            BaselineKind::Sgd { lr } => positive("lr", lr),
            BaselineKind::Momentum { lr, decay } => {
                positive("lr", lr)?;
                unit("decay", decay, true)
            }
            BaselineKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                positive("lr", lr)?;
                unit("beta1", beta1, true)?;
                unit("beta2", beta2, false)?;
                positive("eps", eps)
            }
        }
    }
}

/// SGD, momentum or ADAM.
#[derive(Clone, Debug)]
pub struct Baseline {
    name: String,
    kind: BaselineKind,
    theta: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    t: usize,
}

impl Baseline {
    pub fn new(kind: BaselineKind, theta0: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        let n = theta0.len();
        Ok(Self {
            name: kind.label().to_string(),
            kind,
            theta: theta0,
            first: vec![0.0; n],
            second: vec![0.0; n],
            t: 0,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }
}

impl Optimizer for Baseline {
    fn name(&self) -> &str {
        &self.name
    }

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn step(&mut self, oracle: &mut dyn GradientOracle) -> Result<StepReport> {
        let objective_before = oracle.objective(&self.theta);
        let g = oracle.gradient(&self.theta)?;
        check_len("gradient oracle", self.theta.len(), g.len())?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Oracle(format!(
                "non-finite gradient at step {}",
                self.t + 1
            )));
        }
        self.t += 1;
        let mut delta = vec![0.0; g.len()];
        match self.kind {
            BaselineKind::Sgd { lr } => {
                for (d, gi) in delta.iter_mut().zip(&g) {
                    *d = -lr * gi;
                }
            }
            BaselineKind::Momentum { lr, decay } => {
                for ((d, v), gi) in delta.iter_mut().zip(&mut self.first).zip(&g) {
                    *v = decay * *v + gi;
                    *d = -lr * *v;
                }
            }
            BaselineKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..g.len() {
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g[i];
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g[i] * g[i];
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    delta[i] = -lr * m / (v.sqrt() + eps);
                }
            }
        }
        linalg::axpy(1.0, &delta, &mut self.theta);
        Ok(StepReport {
            step: self.t,
            objective_before,
            objective_after: oracle.objective(&self.theta),
            grad_norm: norm(&g),
            step_norm: norm(&delta),
            ..StepReport::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn quadratic(h: Vec<f64>, p: Vec<f64>) -> impl FnMut(&[f64]) -> Vec<f64> {
        move |x: &[f64]| {
            x.iter()
                .zip(&h)
                .zip(&p)
                .map(|((x, h), p)| h * (x - p))
                .collect()
        }
    }

    #[test]
    fn defaults_are_valid() {
        let c = OgrConfig::default();
        c.validate().unwrap();
        assert_eq!(c.d, 10);
        assert_eq!(c.warmup_steps, 30);
        assert_eq!(c.beta, 0.9);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            OgrConfig {
                beta: 1.5,
                ..OgrConfig::default()
            },
            OgrConfig {
                alpha: 0.0,
                ..OgrConfig::default()
            },
            OgrConfig {
                warmup_steps: 1,
                ..OgrConfig::default()
            },
            OgrConfig {
                diag_period: 0,
                ..OgrConfig::default()
            },
            OgrConfig {
                epsilon: 0.0,
                ..OgrConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config { .. })), "{c:?}");
        }
        assert!(Ogr::new(OgrConfig::with_dim(3), vec![0.0; 2], 1).is_err());
    }

    #[test]
    fn init_state() {
        let ogr = Ogr::new(OgrConfig::with_dim(2), vec![0.0; 1000], 4).unwrap();
        assert_eq!(ogr.regression(), &RegressionState::new(2));
        assert_eq!(ogr.regression().s(), 0.0);
        let full = Ogr::new(OgrConfig::with_dim(5), vec![0.0; 5], 9).unwrap();
        let v = full.basis().matrix();
        assert!(
            v.matmul(&v.transpose())
                .unwrap()
                .sub(&Matrix::identity(5))
                .unwrap()
                .max_abs()
                <= 1e-10
        );
        let again = Ogr::new(OgrConfig::with_dim(5), vec![0.0; 5], 9).unwrap();
        assert_eq!(full.basis(), again.basis());
    }

    #[test]
    fn warmup_is_sgd() {
        let config = OgrConfig {
            eta: 0.1,
            ..OgrConfig::with_dim(2)
        };
        let mut ogr = Ogr::new(config, vec![0.0; 4], 1).unwrap();
        let basis = ogr.basis().clone();
        let mut oracle = |_: &[f64]| vec![1.0, 0.0, 0.0, 0.0];
        let report = ogr.warmup_step(&mut oracle).unwrap();
        assert!(report.warmup);
        assert!((ogr.theta()[0] + 0.1).abs() < 1e-15);
        let mut expected = RegressionState::new(2);
        expected
            .update(
                &basis.coords(&[0.0; 4]).unwrap(),
                &basis.coords(&[1.0, 0.0, 0.0, 0.0]).unwrap(),
                0.9,
            )
            .unwrap();
        assert_eq!(ogr.regression(), &expected);
    }

    fn converged_1d(lambda: f64) -> Ogr {
        let config = OgrConfig {
            alpha: 1.0,
            eta: 0.1,
            warmup_steps: 4,
            max_step_norm: StepCap::Fixed(f64::INFINITY),
            ..OgrConfig::with_dim(1)
        };
        let mut ogr = Ogr::new(config, vec![3.0], 2).unwrap();
        let mut oracle = quadratic(vec![lambda], vec![1.0]);
        while ogr.in_warmup() {
            ogr.warmup_step(&mut oracle).unwrap();
        }
        ogr.set_theta(vec![0.0]).unwrap();
        ogr
    }

    #[test]
    fn positive_curvature_jumps_to_center() {
        let mut ogr = converged_1d(2.0);
        let mut oracle = quadratic(vec![2.0], vec![1.0]);
        let report = ogr.ogr_step(&mut oracle).unwrap();
        assert!((ogr.theta()[0] - 1.0).abs() < 1e-10, "{:?}", ogr.theta());
        assert!((report.lambdas[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn negative_curvature_repels() {
        let mut ogr = converged_1d(-2.0);
        let mut oracle = quadratic(vec![-2.0], vec![1.0]);
        ogr.ogr_step(&mut oracle).unwrap();
        assert!((ogr.theta()[0] + 1.0).abs() < 1e-10, "{:?}", ogr.theta());
    }

    #[test]
    fn saddle_escape_and_newton_attraction() {
        let run = |saddle_free: bool| {
            let config = OgrConfig {
                saddle_free,
                warmup_steps: 6,
                eta: 0.1,
                ..OgrConfig::with_dim(2)
            };
            let mut ogr = Ogr::new(config, vec![1.0, 0.1], 3).unwrap();
            let mut oracle = quadratic(vec![1.0, -1.0], vec![0.0, 0.0]);
            // The escape is geometric, so stop once it is unambiguous rather
            // than let |y| grow until rounding swamps the x coordinate.
            for _ in 0..56 {
                ogr.step(&mut oracle).unwrap();
                if ogr.theta()[1].abs() > 10.0 {
                    break;
                }
            }
            ogr.theta().to_vec()
        };
        let free = run(true);
        assert!(free[1].abs() > 1.0 && free[0].abs() < 0.1, "{free:?}");
        let newton = run(false);
        assert!(norm(&newton) < norm(&[1.0, 0.1]), "{newton:?}");
    }

    #[test]
    fn entangled_mode_matches_exact_quadratic() {
        let config = OgrConfig {
            alpha: 1.0,
            mode: Mode::Entangled,
            eta: 0.05,
            warmup_steps: 12,
            max_step_norm: StepCap::Fixed(f64::INFINITY),
            ..OgrConfig::with_dim(3)
        };
        let h = [3.0, 1.0, 0.5];
        let p = [1.0, -2.0, 0.5];
        let mut ogr = Ogr::new(config, vec![0.3, 0.7, -0.4], 5).unwrap();
        let mut oracle = quadratic(h.to_vec(), p.to_vec());
        while ogr.in_warmup() {
            ogr.step(&mut oracle).unwrap();
        }
        ogr.step(&mut oracle).unwrap();
        for (x, p) in ogr.theta().iter().zip(&p) {
            assert!((x - p).abs() < 1e-6, "{:?}", ogr.theta());
        }
    }

    #[test]
    fn diagonalize_on_diagonal_estimate_is_identity() {
        let config = OgrConfig {
            warmup_steps: 9,
            eta: 0.1,
            ..OgrConfig::with_dim(3)
        };
        let mut ogr = Ogr::new(config, vec![1.0, -1.0, 0.5], 7).unwrap();
        let mut oracle = quadratic(vec![2.0, 1.0, 0.5], vec![0.0; 3]);
        while ogr.in_warmup() {
            ogr.step(&mut oracle).unwrap();
        }
        assert!(ogr.diagonalize_now().unwrap());
        let (basis, state) = (ogr.basis().clone(), ogr.regression().clone());
        assert!(ogr.diagonalize_now().unwrap());
        let diff = ogr.basis().matrix().sub(basis.matrix()).unwrap().max_abs();
        assert!(diff < 1e-8, "{diff:e}");
        assert_eq!(ogr.regression().s(), state.s());
    }

    #[test]
    fn baseline_steps() {
        let mut sgd = Baseline::new(BaselineKind::Sgd { lr: 0.1 }, vec![0.0]).unwrap();
        sgd.step(&mut |_: &[f64]| vec![2.0]).unwrap();
        assert!((sgd.theta()[0] + 0.2).abs() < 1e-15);

        let mut adam = Baseline::new(BaselineKind::adam(0.01), vec![0.0]).unwrap();
        adam.step(&mut |_: &[f64]| vec![1.0]).unwrap();
        assert!((adam.theta()[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);

        let grads = [1.0, -0.5, 2.0, 0.25];
        let mut momentum = Baseline::new(
            BaselineKind::Momentum {
                lr: 0.1,
                decay: 0.0,
            },
            vec![1.0],
        )
        .unwrap();
        let mut plain = Baseline::new(BaselineKind::Sgd { lr: 0.1 }, vec![1.0]).unwrap();
        for g in grads {
            momentum.step(&mut |_: &[f64]| vec![g]).unwrap();
            plain.step(&mut |_: &[f64]| vec![g]).unwrap();
        }
        assert_eq!(momentum.theta(), plain.theta());
        assert!(Baseline::new(BaselineKind::Sgd { lr: -1.0 }, vec![0.0]).is_err());
    }
}
