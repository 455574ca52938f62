//! Run configuration: flat `key = value` text with `#` comments.
//!
//! ```text
//! dist = exp:1
//! dt = 0.001
//! t_max = 2
//! paths = 100000
//! report_times = 0.5, 1, 2
//! residuals = 0.25,0.75,one; 0.5,1,indicator_beta_above(0.2)
//! kh = 0.2, 0.1, 0.05
//! ```

use std::path::{Path, PathBuf};

use crate::distributions::DefaultDistribution;
use crate::ensemble::Functional;
use crate::error::{Error, Result};
use crate::laws::ModelContext;
use crate::local_time::Estimator;
use crate::quadrature::QuadratureSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonPolicy {
    SqrtDt,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizerPolicy {
    /// Band-averaged normalizer when the occupation estimator feeds K.
    Band,
    Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dist: String,
    pub dt: f64,
    pub t_max: f64,
    pub paths: usize,
    pub seed: u64,
    pub quad: QuadratureSpec,
    pub epsilon: EpsilonPolicy,
    pub estimator: Estimator,
    pub normalizer: NormalizerPolicy,
    pub kh: Vec<f64>,
    pub report_times: Vec<f64>,
    pub residuals: Vec<(f64, f64, Functional)>,
    pub gate_multiplier: f64,
    pub out: PathBuf,
    /// Paths written in full to `curves.csv`.
    pub curve_paths: usize,
    pub convergence_paths: usize,
    pub convergence_times: Vec<f64>,
    /// Fraction of paths whose gap must decrease strictly along `kh`.
    pub convergence_min_fraction: f64,
    pub survival_points: usize,
    /// Levels dumped to `local_time.csv` by `simulate`.
    pub lt_levels: Vec<f64>,
    pub zero_k: bool,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut residuals = Vec::new();
        for (s, t) in [(0.25, 0.75), (0.5, 1.0), (1.0, 2.0)] {
            for f in [Functional::One, Functional::IndicatorBetaAbove(0.2), Functional::AbsBeta] {
                residuals.push((s, t, f));
            }
        }
        Self {
            dist: "exp:1".into(),
            dt: 1e-3,
            t_max: 2.0,
            paths: 10_000,
            seed: 1,
            quad: QuadratureSpec::default(),
            epsilon: EpsilonPolicy::SqrtDt,
            estimator: Estimator::Occupation,
            normalizer: NormalizerPolicy::Band,
            kh: vec![0.2, 0.1, 0.05, 0.025],
            report_times: vec![0.5, 1.0, 2.0],
            residuals,
            gate_multiplier: 3.0,
            out: PathBuf::from("out"),
            curve_paths: 20,
            convergence_paths: 10,
            convergence_times: vec![1.0],
            convergence_min_fraction: 0.8,
            survival_points: 101,
            lt_levels: Vec::new(),
            zero_k: false,
            workers: None,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse::<T>().map_err(|_| cfg_err(format!("`{key}`: cannot parse `{}`", v.trim())))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| number::<f64>(key, x)).collect()
}

fn residual_matrix(v: &str) -> Result<Vec<(f64, f64, Functional)>> {
    v.split(';')
        .map(str::trim)
        .filter(|e| !e.is_empty())
        .map(|e| {
            let mut parts = e.splitn(3, ',');
            let (Some(s), Some(t), Some(f)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(cfg_err(format!("residual entry `{e}` is not `s,t,functional`")));
            };
            Ok((number("residuals", s)?, number("residuals", t)?, Functional::parse(f)?))
        })
        .collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses on top of the defaults and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dist" => self.dist = v.to_string(),
            "dt" => self.dt = number(key, v)?,
            "t_max" => self.t_max = number(key, v)?,
            "paths" => self.paths = number(key, v)?,
            "seed" => self.seed = number(key, v)?,
            "rel_tol" => self.quad.rel_tol = number(key, v)?,
            "abs_tol" => self.quad.abs_tol = number(key, v)?,
            "max_subdivisions" => self.quad.max_subdivisions = number(key, v)?,
            "tail_cutoff_mass" => self.quad.tail_cutoff_mass = number(key, v)?,
            "epsilon" => {
                self.epsilon = match v {
                    "sqrt_dt" => EpsilonPolicy::SqrtDt,
                    _ => EpsilonPolicy::Fixed(number(key, v)?),
                }
            }
            "estimator" => {
                self.estimator = match v {
                    "occupation" => Estimator::Occupation,
                    "tanaka" => Estimator::Tanaka,
                    _ => return Err(cfg_err(format!("unknown estimator `{v}`"))),
                }
            }
            "normalizer" => {
                self.normalizer = match v {
                    "band" => NormalizerPolicy::Band,
                    "point" => NormalizerPolicy::Point,
                    _ => return Err(cfg_err(format!("unknown normalizer `{v}`"))),
                }
            }
            "kh" => self.kh = list(key, v)?,
            "report_times" => self.report_times = list(key, v)?,
            "residuals" => self.residuals = residual_matrix(v)?,
            "gate_multiplier" => self.gate_multiplier = number(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "curve_paths" => self.curve_paths = number(key, v)?,
            "convergence_paths" => self.convergence_paths = number(key, v)?,
            "convergence_times" => self.convergence_times = list(key, v)?,
            "convergence_min_fraction" => self.convergence_min_fraction = number(key, v)?,
            "survival_points" => self.survival_points = number(key, v)?,
            "lt_levels" => self.lt_levels = list(key, v)?,
            "zero_k" => self.zero_k = number(key, v)?,
            "workers" => self.workers = Some(number(key, v)?),
            _ => return Err(cfg_err(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(cfg_err(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > self.dt && self.t_max.is_finite()) {
            return Err(cfg_err(format!("t_max must exceed dt, got {}", self.t_max)));
        }
        if self.paths < 1 {
            return Err(cfg_err("paths must be at least 1"));
        }
        if let EpsilonPolicy::Fixed(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(cfg_err(format!("epsilon must be positive, got {e}")));
            }
        }
        if self.kh.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(cfg_err("kh values must be positive"));
        }
        if !(self.gate_multiplier > 0.0) {
            return Err(cfg_err("gate_multiplier must be positive"));
        }
        if self.survival_points < 2 {
            return Err(cfg_err("survival_points must be at least 2"));
        }
        if self.workers == Some(0) {
            return Err(cfg_err("workers must be positive"));
        }
        self.quad.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }

    /// Report, residual and convergence times must lie in `(0, t_max]`.
    pub fn validate_times(&self) -> Result<()> {
        self.validate()?;
        let inside = |t: f64| t > 0.0 && t <= self.t_max;
        if let Some(t) = self.report_times.iter().chain(&self.convergence_times).find(|&&t| !inside(t)) {
            return Err(cfg_err(format!("time {t} outside (0, t_max]")));
        }
        if let Some((s, t, _)) = self.residuals.iter().find(|(s, t, _)| !(*s > 0.0 && t > s && inside(*t))) {
            return Err(cfg_err(format!("residual pair ({s}, {t}) needs 0 < s < t <= t_max")));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        match self.epsilon {
            EpsilonPolicy::SqrtDt => self.dt.sqrt(),
            EpsilonPolicy::Fixed(e) => e,
        }
    }

    pub fn context(&self) -> Result<ModelContext> {
        let dist = DefaultDistribution::parse(&self.dist)?;
        ModelContext::new(dist, self.quad).map_err(|e| cfg_err(e.to_string()))
    }

    /// Report times and residual times, sorted and deduplicated.
    pub fn probe_times(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.report_times.clone();
        for (s, t, _) in &self.residuals {
            p.push(*s);
            p.push(*t);
        }
        p.sort_by(|a, b| a.total_cmp(b));
        p.dedup();
        p
    }

    pub fn worker_count(&self) -> usize {
        self.workers.unwrap_or_else(crate::ensemble::worker_count)
    }
}
