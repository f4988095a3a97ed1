//! Experiment configs, seeded runs and their CSV / JSON traces.
//!
//! Configs are TOML. A minimal one names a problem and an optimizer:
//!
//! ```toml
//! budget = 500
//! seeds = [1, 2, 3]
//!
//! [problem]
//! kind = "quadratic"
//! dim = 10
//! noise = 0.1
//!
//! [[optimizer]]
//! kind = "ogr"
//!
//! [[optimizer]]
//! kind = "adam"
//! lr = [1e-3, 1e-2, 1e-1]   # a list expands into one optimizer per value
//! ```
//!
//! Everything else is filled from defaults; [`emit_config`] writes the fully
//! explicit form back out. The budget counts gradient evaluations, and every
//! optimizer step (warmup included) costs exactly one.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::optimizer::{
    Baseline, BaselineKind, GradientOracle, Mode, Ogr, OgrConfig, Optimizer, StepCap, StepReport,
};
use crate::problems::{Problem, ProblemOracle, ProblemSpec};

/// Exact CSV header of every trace file.
pub const CSV_HEADER: [&str; 9] = [
    "step",
    "objective",
    "grad_norm",
    "residual_norm",
    "lambda_min",
    "lambda_max",
    "ortho_err",
    "step_norm",
    "event",
];

/// A fully validated experiment with every default made explicit.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSpec,
    pub optimizers: Vec<OptimizerSpec>,
    /// Gradient evaluations per run.
    pub budget: usize,
    pub seeds: Vec<u64>,
    /// Record every `stride`-th step.
    pub stride: usize,
    /// Give all optimizers the same noise-seed sequence for a given run seed.
    pub common_random_numbers: bool,
    /// Objective gap counted as "reached" in `steps_to_threshold`.
    pub threshold: f64,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizerSpec {
    pub name: String,
    pub method: Method,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Method {
    Ogr(OgrConfig),
    Baseline(BaselineKind),
}

impl OptimizerSpec {
    pub fn kind(&self) -> &'static str {
        match &self.method {
            Method::Ogr(_) => "ogr",
            Method::Baseline(b) => b.label(),
        }
    }

    pub fn build(&self, theta0: Vec<f64>, seed: u64) -> Result<Box<dyn Optimizer + Send>> {
        Ok(match &self.method {
            Method::Ogr(c) => Box::new(Ogr::new(c.clone(), theta0, seed)?.with_name(&self.name)),
            Method::Baseline(k) => Box::new(Baseline::new(*k, theta0)?.with_name(&self.name)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SectionId {
    Top,
    Problem,
    Optimizer(usize),
    Other,
}

/// Line (1-based) where `key` is assigned inside `section`, or the section header.
fn locate(text: &str, section: SectionId, key: &str) -> usize {
    let mut current = SectionId::Top;
    let mut optimizers = 0;
    let mut header = 1;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line
                .split('#')
                .next()
                .unwrap_or("")
                .trim()
                .trim_matches(|c| c == '[' || c == ']')
                .trim();
            current = match (line.starts_with("[["), name) {
                (true, "optimizer") => {
                    optimizers += 1;
                    SectionId::Optimizer(optimizers - 1)
                }
                (false, "problem") => SectionId::Problem,
                _ => SectionId::Other,
            };
            if current == section {
                header = n + 1;
            }
            continue;
        }
        if current != section {
            continue;
        }
        let lhs = line
            .split('=')
            .next()
            .unwrap_or("")
            .trim()
            .trim_matches('"');
        if line.contains('=') && lhs == key {
            return n + 1;
        }
    }
    header
}

/// Typed access to one TOML table that remembers which keys were read.
struct Section<'a> {
    text: &'a str,
    id: SectionId,
    table: &'a Table,
    used: BTreeSet<&'a str>,
}

impl<'a> Section<'a> {
    fn new(text: &'a str, id: SectionId, table: &'a Table) -> Self {
        Self {
            text,
            id,
            table,
            used: BTreeSet::new(),
        }
    }

    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            key: key.to_string(),
            line: locate(self.text, self.id, key),
            message: message.into(),
        }
    }

    /// Attaches a line number to a validation error raised downstream.
    fn lift(&self, e: Error) -> Error {
        match e {
            Error::Config { key, message } => self.err(&key, message),
            other => other,
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a Value> {
        let (k, v) = self.table.get_key_value(key)?;
        self.used.insert(k.as_str());
        Some(v)
    }

    fn float_of(&self, key: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            other => Err(self.err(
                key,
                format!("expected a number, found {}", other.type_str()),
            )),
        }
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| self.float_of(key, v)).transpose()
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    fn opt_u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(Value::Integer(i)) => Err(self.err(key, format!("{i} must be nonnegative"))),
            Some(other) => Err(self.err(
                key,
                format!("expected an integer, found {}", other.type_str()),
            )),
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        Ok(self.opt_u64(key)?.unwrap_or(default))
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        Ok(self.opt_u64(key)?.map_or(default, |v| v as usize))
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(other) => Err(self.err(
                key,
                format!("expected a boolean, found {}", other.type_str()),
            )),
        }
    }

    fn opt_str(&mut self, key: &str) -> Result<Option<&'a str>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(other) => Err(self.err(
                key,
                format!("expected a string, found {}", other.type_str()),
            )),
        }
    }

    /// A number or an array of numbers.
    fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| self.float_of(key, v))
                .collect::<Result<_>>()
                .map(Some),
            Some(v) => Ok(Some(vec![self.float_of(key, v)?])),
        }
    }

    fn matrix(&mut self, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(rows)) => rows
                .iter()
                .map(|row| match row {
                    Value::Array(items) => items.iter().map(|v| self.float_of(key, v)).collect(),
                    other => Err(self.err(
                        key,
                        format!("expected an array of rows, found {}", other.type_str()),
                    )),
                })
                .collect::<Result<_>>()
                .map(Some),
            Some(other) => Err(self.err(
                key,
                format!("expected an array of rows, found {}", other.type_str()),
            )),
        }
    }

    fn finish(&self) -> Result<()> {
        match self.table.keys().find(|k| !self.used.contains(k.as_str())) {
            Some(k) => Err(self.err(k, "unknown key")),
            None => Ok(()),
        }
    }
}

fn toml_error(text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(1, |span| {
        text[..span.start.min(text.len())].matches('\n').count() + 1
    });
    Error::Parse {
        key: String::new(),
        line,
        message: e.message().trim().to_string(),
    }
}

/// Parses and validates an experiment config, filling in every default.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: Table = text.parse().map_err(|e| toml_error(text, e))?;
    let mut top = Section::new(text, SectionId::Top, &root);

    let name = top.opt_str("name")?.unwrap_or("experiment").to_string();
    if name.is_empty() {
        return Err(top.err("name", "must not be empty"));
    }

    let problem = match top.get("problem") {
        Some(Value::Table(t)) => parse_problem(text, t)?,
        Some(other) => {
            return Err(top.err(
                "problem",
                format!("expected a table, found {}", other.type_str()),
            ))
        }
        None => return Err(top.err("problem", "missing [problem] section")),
    };
    let dim = Problem::new(problem.clone())?.dim();

    let budget = top.usize("budget", 1000)?;
    if budget == 0 {
        return Err(top.err("budget", "must be positive"));
    }
    let default_stride = if problem.kind() == "mlp" { 10 } else { 1 };
    let stride = top.usize("stride", default_stride)?;
    if stride == 0 {
        return Err(top.err("stride", "must be positive"));
    }
    let seeds = match top.get("seeds") {
        None => vec![1],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                _ => Err(top.err("seeds", "expected nonnegative integers")),
            })
            .collect::<Result<_>>()?,
        Some(other) => {
            return Err(top.err(
                "seeds",
                format!("expected an array, found {}", other.type_str()),
            ))
        }
    };
    validate_seeds(&seeds).map_err(|e| top.lift(e))?;
    let common_random_numbers = top.bool("common_random_numbers", true)?;
    let threshold = top.f64("threshold", 1e-6)?;
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(top.err(
            "threshold",
            format!("{threshold} must be a finite nonnegative number"),
        ));
    }
    let out = top.opt_str("out")?.map(PathBuf::from);

    let tables: Vec<&Table> = match top.get("optimizer") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::Table(t) => Ok(t),
                _ => Err(top.err("optimizer", "expected [[optimizer]] tables")),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(top.err("optimizer", "expected [[optimizer]] tables")),
        None => Vec::new(),
    };
    if tables.is_empty() {
        return Err(top.err("optimizer", "at least one [[optimizer]] is required"));
    }
    let mut optimizers = Vec::new();
    for (i, t) in tables.into_iter().enumerate() {
        optimizers.extend(parse_optimizer(text, i, t, dim)?);
    }
    let mut names = BTreeSet::new();
    for (i, o) in optimizers.iter().enumerate() {
        if !names.insert(o.name.as_str()) {
            let section = Section::new(text, SectionId::Optimizer(i), &root);
            return Err(section.err("name", format!("duplicate optimizer name `{}`", o.name)));
        }
    }
    top.finish()?;

    Ok(ExperimentConfig {
        name,
        problem,
        optimizers,
        budget,
        seeds,
        stride,
        common_random_numbers,
        threshold,
        out,
    })
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn validate_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    if seeds.iter().any(|&s| s > i64::MAX as u64) {
        return Err(Error::config(
            "seeds",
            "seeds must fit in a signed 64-bit integer",
        ));
    }
    let distinct: BTreeSet<_> = seeds.iter().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::config("seeds", "seeds must be distinct"));
    }
    Ok(())
}

fn parse_problem(text: &str, table: &Table) -> Result<ProblemSpec> {
    let mut s = Section::new(text, SectionId::Problem, table);
    let kind = s
        .opt_str("kind")?
        .ok_or_else(|| s.err("kind", "missing problem kind"))?;
    let spec = match ProblemSpec::default_for(kind).map_err(|e| s.lift(e))? {
        ProblemSpec::Quadratic {
            dim,
            condition,
            noise,
            seed,
            ..
        } => ProblemSpec::Quadratic {
            dim: s.usize("dim", dim)?,
            condition: s.f64("condition", condition)?,
            noise: s.f64("noise", noise)?,
            seed: s.u64("seed", seed)?,
            hessian: s.matrix("hessian")?,
            center: s.f64_list("center")?,
            start: s.f64_list("start")?,
        },
        ProblemSpec::Saddle {
            curvatures, noise, ..
        } => ProblemSpec::Saddle {
            curvatures: s.f64_list("curvatures")?.unwrap_or(curvatures),
            noise: s.f64("noise", noise)?,
            start: s.f64_list("start")?,
        },
        ProblemSpec::Rosenbrock { dim, a, b, noise } => ProblemSpec::Rosenbrock {
            dim: s.usize("dim", dim)?,
            a: s.f64("a", a)?,
            b: s.f64("b", b)?,
            noise: s.f64("noise", noise)?,
        },
        ProblemSpec::Plateau { dim, width, noise } => ProblemSpec::Plateau {
            dim: s.usize("dim", dim)?,
            width: s.f64("width", width)?,
            noise: s.f64("noise", noise)?,
        },
        ProblemSpec::Mlp {
            inputs,
            hidden,
            outputs,
            samples,
            batch,
            seed,
        } => ProblemSpec::Mlp {
            inputs: s.usize("inputs", inputs)?,
            hidden: s.usize("hidden", hidden)?,
            outputs: s.usize("outputs", outputs)?,
            samples: s.usize("samples", samples)?,
            batch: s.usize("batch", batch)?,
            seed: s.u64("seed", seed)?,
        },
    };
    if let ProblemSpec::Quadratic { seed, .. } | ProblemSpec::Mlp { seed, .. } = &spec {
        if *seed > i64::MAX as u64 {
            return Err(s.err("seed", "must fit in a signed 64-bit integer"));
        }
    }
    Problem::new(spec.clone()).map_err(|e| s.lift(e))?;
    s.finish()?;
    Ok(spec)
}

fn parse_optimizer(
    text: &str,
    index: usize,
    table: &Table,
    dim: usize,
) -> Result<Vec<OptimizerSpec>> {
    let mut s = Section::new(text, SectionId::Optimizer(index), table);
    let kind = s
        .opt_str("kind")?
        .ok_or_else(|| s.err("kind", "missing optimizer kind"))?;
    let name = s.opt_str("name")?.map(str::to_string);
    if name.as_deref() == Some("") {
        return Err(s.err("name", "must not be empty"));
    }

    if kind == "ogr" {
        let d = s.usize("d", dim.min(10))?;
        if d == 0 || d > dim {
            return Err(s.err(
                "d",
                format!("{d} must lie in [1, {dim}] (the problem dimension)"),
            ));
        }
        let base = OgrConfig::with_dim(d);
        let mode = match s.opt_str("mode")? {
            None => base.mode,
            Some("diagonal") => Mode::Diagonal,
            Some("entangled") => Mode::Entangled,
            Some(other) => {
                return Err(s.err(
                    "mode",
                    format!("unknown mode `{other}` (expected diagonal or entangled)"),
                ))
            }
        };
        let fixed = s.opt_f64("max_step_norm")?;
        let factor = s.opt_f64("step_cap_rms_factor")?;
        let max_step_norm = match (fixed, factor) {
            (Some(_), Some(_)) => {
                return Err(s.err(
                    "step_cap_rms_factor",
                    "conflicts with max_step_norm; set only one",
                ))
            }
            (Some(v), None) => StepCap::Fixed(v),
            (None, Some(v)) => StepCap::RelativeRms(v),
            (None, None) => base.max_step_norm,
        };
        let config = OgrConfig {
            d,
            alpha: s.f64("alpha", base.alpha)?,
            beta: s.f64("beta", base.beta)?,
            gamma: s.f64("gamma", base.gamma)?,
            epsilon: s.f64("epsilon", base.epsilon)?,
            eta: s.f64("eta", base.eta)?,
            warmup_steps: s.usize("warmup_steps", base.warmup_steps)?,
            warmup_probe: s.f64("warmup_probe", base.warmup_probe)?,
            diag_period: s.usize("diag_period", base.diag_period)?,
            ortho_period: s.usize("ortho_period", base.ortho_period)?,
            mode,
            explore_kappa: s.opt_f64("explore_kappa")?,
            max_step_norm,
            saddle_free: s.bool("saddle_free", base.saddle_free)?,
        };
        config.validate().map_err(|e| s.lift(e))?;
        s.finish()?;
        return Ok(vec![OptimizerSpec {
            name: name.unwrap_or_else(|| "ogr".into()),
            method: Method::Ogr(config),
        }]);
    }

    let default_lr = match kind {
        "sgd" | "momentum" => 0.01,
        "adam" => 1e-3,
        other => {
            return Err(s.err(
                "kind",
                format!("unknown optimizer `{other}` (expected ogr, sgd, momentum or adam)"),
            ))
        }
    };
    let lrs = s.f64_list("lr")?.unwrap_or_else(|| vec![default_lr]);
    if lrs.is_empty() {
        return Err(s.err("lr", "empty learning-rate list"));
    }
    let decay = if kind == "momentum" {
        Some(s.f64("decay", 0.9)?)
    } else {
        None
    };
    let adam = if kind == "adam" {
        Some((
            s.f64("beta1", 0.9)?,
            s.f64("beta2", 0.999)?,
            s.f64("eps", 1e-8)?,
        ))
    } else {
        None
    };
    s.finish()?;

    let label = name.unwrap_or_else(|| kind.to_string());
    lrs.iter()
        .map(|&lr| {
            let method = match (decay, adam) {
                (Some(decay), _) => BaselineKind::Momentum { lr, decay },
                (_, Some((beta1, beta2, eps))) => BaselineKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                },
                _ => BaselineKind::Sgd { lr },
            };
            method.validate().map_err(|e| s.lift(e))?;
            let name = if lrs.len() > 1 {
                format!("{label}-lr{lr}")
            } else {
                label.clone()
            };
            Ok(OptimizerSpec {
                name,
                method: Method::Baseline(method),
            })
        })
        .collect()
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

/// Canonical TOML for a config: every field explicit, sweeps expanded.
///
/// `parse_config(&emit_config(c)) == c` for every parsed `c`.
pub fn emit_config(config: &ExperimentConfig) -> String {
    let mut root = Table::new();
    root.insert("name".into(), Value::String(config.name.clone()));
    root.insert("budget".into(), Value::Integer(config.budget as i64));
    root.insert(
        "seeds".into(),
        Value::Array(
            config
                .seeds
                .iter()
                .map(|&s| Value::Integer(s as i64))
                .collect(),
        ),
    );
    root.insert("stride".into(), Value::Integer(config.stride as i64));
    root.insert(
        "common_random_numbers".into(),
        Value::Boolean(config.common_random_numbers),
    );
    root.insert("threshold".into(), Value::Float(config.threshold));
    if let Some(out) = &config.out {
        root.insert("out".into(), Value::String(out.display().to_string()));
    }

    let mut p = Table::new();
    p.insert("kind".into(), Value::String(config.problem.kind().into()));
    let mut put = |k: &str, v: Value| {
        p.insert(k.into(), v);
    };
    match &config.problem {
        ProblemSpec::Quadratic {
            dim,
            condition,
            noise,
            seed,
            hessian,
            center,
            start,
        } => {
            put("dim", Value::Integer(*dim as i64));
            put("condition", Value::Float(*condition));
            put("noise", Value::Float(*noise));
            put("seed", Value::Integer(*seed as i64));
            if let Some(h) = hessian {
                put(
                    "hessian",
                    Value::Array(h.iter().map(|r| floats(r)).collect()),
                );
            }
            if let Some(c) = center {
                put("center", floats(c));
            }
            if let Some(s) = start {
                put("start", floats(s));
            }
        }
        ProblemSpec::Saddle {
            curvatures,
            noise,
            start,
        } => {
            put("curvatures", floats(curvatures));
            put("noise", Value::Float(*noise));
            if let Some(s) = start {
                put("start", floats(s));
            }
        }
        ProblemSpec::Rosenbrock { dim, a, b, noise } => {
            put("dim", Value::Integer(*dim as i64));
            put("a", Value::Float(*a));
            put("b", Value::Float(*b));
            put("noise", Value::Float(*noise));
        }
        ProblemSpec::Plateau { dim, width, noise } => {
            put("dim", Value::Integer(*dim as i64));
            put("width", Value::Float(*width));
            put("noise", Value::Float(*noise));
        }
        ProblemSpec::Mlp {
            inputs,
            hidden,
            outputs,
            samples,
            batch,
            seed,
        } => {
            put("inputs", Value::Integer(*inputs as i64));
            put("hidden", Value::Integer(*hidden as i64));
            put("outputs", Value::Integer(*outputs as i64));
            put("samples", Value::Integer(*samples as i64));
            put("batch", Value::Integer(*batch as i64));
            put("seed", Value::Integer(*seed as i64));
        }
    }
    root.insert("problem".into(), Value::Table(p));

    let optimizers = config
        .optimizers
        .iter()
        .map(|o| Value::Table(emit_optimizer(o)))
        .collect();
    root.insert("optimizer".into(), Value::Array(optimizers));
    toml::to_string(&root).expect("config tables always serialize")
}

fn emit_optimizer(o: &OptimizerSpec) -> Table {
    let mut t = Table::new();
    t.insert("name".into(), Value::String(o.name.clone()));
    t.insert("kind".into(), Value::String(o.kind().into()));
    let mut put = |k: &str, v: Value| {
        t.insert(k.into(), v);
    };
    match &o.method {
        Method::Ogr(c) => {
            put("d", Value::Integer(c.d as i64));
            put("alpha", Value::Float(c.alpha));
            put("beta", Value::Float(c.beta));
            put("gamma", Value::Float(c.gamma));
            put("epsilon", Value::Float(c.epsilon));
            put("eta", Value::Float(c.eta));
            put("warmup_steps", Value::Integer(c.warmup_steps as i64));
            put("warmup_probe", Value::Float(c.warmup_probe));
            put("diag_period", Value::Integer(c.diag_period as i64));
            put("ortho_period", Value::Integer(c.ortho_period as i64));
            let mode = match c.mode {
                Mode::Diagonal => "diagonal",
                Mode::Entangled => "entangled",
            };
            put("mode", Value::String(mode.into()));
            if let Some(k) = c.explore_kappa {
                put("explore_kappa", Value::Float(k));
            }
            match c.max_step_norm {
                StepCap::Fixed(v) => put("max_step_norm", Value::Float(v)),
                StepCap::RelativeRms(v) => put("step_cap_rms_factor", Value::Float(v)),
            }
            put("saddle_free", Value::Boolean(c.saddle_free));
        }
        Method::Baseline(BaselineKind::Sgd { lr }) => put("lr", Value::Float(*lr)),
        Method::Baseline(BaselineKind::Momentum { lr, decay }) => {
            put("lr", Value::Float(*lr));
            put("decay", Value::Float(*decay));
        }
        Method::Baseline(BaselineKind::Adam {
            lr,
            beta1,
            beta2,
            eps,
        }) => {
            put("lr", Value::Float(*lr));
            put("beta1", Value::Float(*beta1));
            put("beta2", Value::Float(*beta2));
            put("eps", Value::Float(*eps));
        }
    }
    t
}

/// One recorded step. Empty CSV fields are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub objective: Option<f64>,
    pub grad_norm: f64,
    pub residual_norm: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub ortho_err: Option<f64>,
    pub step_norm: f64,
    pub event: String,
}

impl TraceRow {
    fn from_report(r: &StepReport) -> Self {
        let lambda_min = r.lambdas.iter().copied().reduce(f64::min);
        let lambda_max = r.lambdas.iter().copied().reduce(f64::max);
        Self {
            step: r.step,
            objective: r.objective_after,
            grad_norm: r.grad_norm,
            residual_norm: r.residual_norm,
            lambda_min,
            lambda_max,
            ortho_err: r.ortho_error,
            step_norm: r.step_norm,
            event: r.events(),
        }
    }

    fn is_finite(&self) -> bool {
        [
            self.objective,
            self.residual_norm,
            self.lambda_min,
            self.lambda_max,
            self.ortho_err,
        ]
        .iter()
        .flatten()
        .chain([&self.grad_norm, &self.step_norm])
        .all(|v| v.is_finite())
    }
}

/// Summary of one (optimizer, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub optimizer: String,
    pub kind: String,
    pub seed: u64,
    pub steps: usize,
    pub evaluations: u64,
    pub final_objective: Option<f64>,
    /// Minimum over the recorded rows.
    pub best_objective: Option<f64>,
    /// Objective minus the known minimum (the objective itself when unknown).
    pub final_gap: Option<f64>,
    pub best_gap: Option<f64>,
    /// First recorded step whose gap is at most the threshold.
    pub steps_to_threshold: Option<usize>,
    pub wall_time_s: f64,
    pub error: Option<String>,
    pub config: serde_json::Value,
}

/// Rows and summary of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
}

/// All summaries of one experiment; written as `<name>.summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub problem: String,
    pub budget: usize,
    pub stride: usize,
    pub threshold: f64,
    pub minimum: Option<f64>,
    /// Canonical config echo.
    pub config: String,
    pub runs: Vec<RunSummary>,
}

/// Passes objective queries through only on steps that will be recorded.
struct Recording<'a> {
    inner: ProblemOracle<'a>,
    enabled: bool,
}

impl GradientOracle for Recording<'_> {
    fn gradient(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        self.inner.gradient(theta)
    }

    fn objective(&mut self, theta: &[f64]) -> Option<f64> {
        if self.enabled {
            self.inner.objective(theta)
        } else {
            None
        }
    }
}

/// Runs one optimizer on one seed until the budget is spent.
///
/// Errors end the run and are stored in the summary.
pub fn run_single(
    config: &ExperimentConfig,
    problem: &Problem,
    index: usize,
    seed: u64,
) -> RunTrace {
    let spec = &config.optimizers[index];
    let stream = if config.common_random_numbers {
        0
    } else {
        index as u64 + 1
    };
    let started = Instant::now();
    let mut oracle = Recording {
        inner: problem.oracle(seed, stream),
        enabled: false,
    };
    let mut rows = Vec::new();
    let mut final_objective = None;
    let mut steps = 0;
    let mut error = None;

    match spec.build(problem.start().to_vec(), seed) {
        Err(e) => error = Some(e.to_string()),
        Ok(mut optimizer) => {
            for step in 1..=config.budget {
                let record = step % config.stride == 0;
                oracle.enabled = record || step == config.budget;
                match optimizer.step(&mut oracle) {
                    Ok(report) => {
                        steps = step;
                        let row = TraceRow::from_report(&report);
                        if !row.is_finite() {
                            error = Some(format!("non-finite values at step {step}"));
                            break;
                        }
                        if step == config.budget {
                            final_objective = report.objective_after;
                        }
                        if record {
                            rows.push(row);
                        }
                    }
                    Err(e) => {
                        error = Some(format!("step {step}: {e}"));
                        break;
                    }
                }
            }
        }
    }

    let minimum = problem.minimum();
    let gap = |f: f64| f - minimum.unwrap_or(0.0);
    let best_objective = rows.iter().filter_map(|r| r.objective).reduce(f64::min);
    let steps_to_threshold = rows
        .iter()
        .find(|r| r.objective.is_some_and(|f| gap(f) <= config.threshold))
        .map(|r| r.step);
    let summary = RunSummary {
        optimizer: spec.name.clone(),
        kind: spec.kind().into(),
        seed,
        steps,
        evaluations: oracle.inner.evaluations(),
        final_objective,
        best_objective,
        final_gap: final_objective.map(gap),
        best_gap: best_objective.map(gap),
        steps_to_threshold,
        wall_time_s: started.elapsed().as_secs_f64(),
        error,
        config: serde_json::to_value(spec).unwrap_or(serde_json::Value::Null),
    };
    RunTrace { rows, summary }
}

/// Runs every (optimizer, seed) pair, on `parallel` threads when given.
///
/// Results are ordered optimizer-major and do not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig, parallel: Option<usize>) -> Result<Vec<RunTrace>> {
    let problem = Problem::new(config.problem.clone())?;
    let jobs: Vec<(usize, u64)> = (0..config.optimizers.len())
        .flat_map(|i| config.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(i, s)| run_single(config, &problem, i, s))
            .collect()
    };
    match parallel {
        None => Ok(run()),
        Some(0) => Err(Error::config("parallel", "must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("parallel", e.to_string()))?;
            Ok(pool.install(run))
        }
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Trace file name for one run: `<experiment>__<optimizer>__seed<k>.csv`.
pub fn trace_file_name(experiment: &str, optimizer: &str, seed: u64) -> String {
    format!(
        "{}__{}__seed{seed}.csv",
        file_stem(experiment),
        file_stem(optimizer)
    )
}

/// Writes rows as CSV (header only when there are none).
pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let csv_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(String::from)
        .collect();
    if header != CSV_HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Writes one CSV per run and the experiment summary; returns the summary path.
pub fn write_outputs(
    config: &ExperimentConfig,
    traces: &[RunTrace],
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in traces {
        let path = dir.join(trace_file_name(
            &config.name,
            &t.summary.optimizer,
            t.summary.seed,
        ));
        write_trace(&t.rows, &path)?;
    }
    let summary = ExperimentSummary {
        name: config.name.clone(),
        problem: config.problem.kind().into(),
        budget: config.budget,
        stride: config.stride,
        threshold: config.threshold,
        minimum: Problem::new(config.problem.clone())?.minimum(),
        config: emit_config(config),
        runs: traces.iter().map(|t| t.summary.clone()).collect(),
    };
    let path = dir.join(format!("{}.summary.json", file_stem(&config.name)));
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Aggregate of one optimizer within one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerStats {
    pub optimizer: String,
    pub kind: String,
    pub runs: usize,
    pub failed: usize,
    pub median_final_gap: Option<f64>,
    pub median_best_gap: Option<f64>,
    pub median_steps_to_threshold: Option<f64>,
}

/// Per-experiment comparison, including the soft OGR-vs-ADAM check.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub experiment: String,
    pub problem: String,
    pub stats: Vec<OptimizerStats>,
    /// `Some(true)` when the best OGR median final gap is at most the best ADAM one.
    pub ogr_beats_adam: Option<bool>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Builds the comparison table from an experiment summary.
pub fn compare_summary(summary: &ExperimentSummary) -> Comparison {
    let mut groups: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    let mut order = Vec::new();
    for run in &summary.runs {
        if !groups.contains_key(run.optimizer.as_str()) {
            order.push(run.optimizer.as_str());
        }
        groups.entry(&run.optimizer).or_default().push(run);
    }
    let stats: Vec<OptimizerStats> = order
        .iter()
        .map(|name| {
            let runs = &groups[name];
            let ok: Vec<_> = runs.iter().filter(|r| r.error.is_none()).collect();
            let mut finals: Vec<f64> = ok.iter().filter_map(|r| r.final_gap).collect();
            let mut bests: Vec<f64> = ok.iter().filter_map(|r| r.best_gap).collect();
            let mut reached: Vec<f64> = ok
                .iter()
                .filter_map(|r| r.steps_to_threshold.map(|s| s as f64))
                .collect();
            OptimizerStats {
                optimizer: name.to_string(),
                kind: runs[0].kind.clone(),
                runs: runs.len(),
                failed: runs.len() - ok.len(),
                median_final_gap: median(&mut finals),
                median_best_gap: median(&mut bests),
                median_steps_to_threshold: median(&mut reached),
            }
        })
        .collect();
    let best_of = |kind: &str| {
        stats
            .iter()
            .filter(|s| s.kind == kind)
            .filter_map(|s| s.median_final_gap)
            .reduce(f64::min)
    };
    let ogr_beats_adam = match (best_of("ogr"), best_of("adam")) {
        (Some(o), Some(a)) => Some(o <= a),
        _ => None,
    };
    Comparison {
        experiment: summary.name.clone(),
        problem: summary.problem.clone(),
        stats,
        ogr_beats_adam,
    }
}

/// Reads every `*.summary.json` in `dir` (sorted by file name) and compares each.
pub fn compare(dir: &Path) -> Result<Vec<Comparison>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".summary.json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let summary: ExperimentSummary =
                serde_json::from_str(&text).map_err(|e| Error::Format {
                    path: p.clone(),
                    message: e.to_string(),
                })?;
            Ok(compare_summary(&summary))
        })
        .collect()
}

impl Comparison {
    /// Plain-text table, one line per optimizer, then the OGR-vs-ADAM verdict.
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
        let mut out = format!("{} ({})\n", self.experiment, self.problem);
        out += &format!(
            "  {:<24} {:>5} {:>6} {:>14} {:>14} {:>10}\n",
            "optimizer", "runs", "failed", "median_final", "median_best", "reach_step"
        );
        for s in &self.stats {
            out += &format!(
                "  {:<24} {:>5} {:>6} {:>14} {:>14} {:>10}\n",
                s.optimizer,
                s.runs,
                s.failed,
                fmt(s.median_final_gap),
                fmt(s.median_best_gap),
                s.median_steps_to_threshold
                    .map_or("-".into(), |v| format!("{v:.0}")),
            );
        }
        out += match self.ogr_beats_adam {
            Some(true) => "  ogr vs best adam: ok (median final gap not worse)\n",
            Some(false) => "  ogr vs best adam: FLAGGED (ogr median final gap is worse)\n",
            None => "",
        };
        out
    }
}
