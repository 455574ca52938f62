//! Monte Carlo ensembles of direct paths, reduced to per-path records at a
//! few probe times, and the statistics built on them.

use std::fmt;

use rayon::prelude::*;

use crate::compensator::ZeroLevelWeights;
use crate::error::{domain, Error, Result};
use crate::laws::ModelContext;
use crate::local_time::{occupation_estimate, tanaka_estimate, Estimator};
use crate::path::{recover_b_until, running_qv, sample_path_direct, Drift, InformationPath, RandomStream, TimeGrid};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "INFOBRIDGE_WORKERS";

/// Smallest ensemble accepted by [`martingale_residual`].
pub const MIN_RESIDUAL_PATHS: usize = 100;

pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub paths: usize,
    pub master_seed: u64,
    pub grid: TimeGrid,
    /// Increasing times at which records are kept.
    pub probes: Vec<f64>,
    pub epsilon: f64,
    pub estimator: Estimator,
    /// Recover `b` on probes up to this time when a drift is supplied.
    pub b_horizon: f64,
}

/// Values of one path at the probe times.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub tau: f64,
    pub h: Vec<f64>,
    pub k: Vec<f64>,
    pub beta: Vec<f64>,
    /// Empty unless a drift was supplied; `NaN` beyond the b horizon.
    pub b: Vec<f64>,
    pub qv_b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub probes: Vec<f64>,
    pub records: Vec<PathRecord>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn probe_index(&self, t: f64) -> Result<usize> {
        self.probes
            .iter()
            .position(|&p| (p - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or_else(|| Error::Domain(format!("time {t} is not a probe time")))
    }

    /// Replaces K by zero on every path (negative control).
    pub fn without_compensator(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.k.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }
}

/// Builds the records for one path.
pub fn path_record<D: Drift + ?Sized>(
    path: &InformationPath,
    spec: &EnsembleSpec,
    weights: &ZeroLevelWeights,
    drift: Option<&D>,
) -> Result<PathRecord> {
    let lt = match spec.estimator {
        Estimator::Occupation => occupation_estimate(path, 0.0, spec.epsilon)?,
        Estimator::Tanaka => tanaka_estimate(path, 0.0),
    };
    let k = weights.compensator(path, &lt)?;
    let grid = path.grid();
    let idx: Vec<usize> = spec.probes.iter().map(|&p| grid.index_at(p + 1e-9 * grid.dt())).collect();
    let (b, qv_b) = match drift {
        Some(d) => {
            let b = recover_b_until(path, d, spec.b_horizon + 1e-9 * grid.dt())?;
            let qv = running_qv(&b);
            let pick = |v: &[f64]| idx.iter().map(|&i| v.get(i).copied().unwrap_or(f64::NAN)).collect();
            (pick(&b), pick(&qv))
        }
        None => (Vec::new(), Vec::new()),
    };
    Ok(PathRecord {
        tau: path.tau(),
        h: spec.probes.iter().map(|&p| if path.tau() <= p { 1.0 } else { 0.0 }).collect(),
        k: idx.iter().map(|&i| k[i]).collect(),
        beta: idx.iter().map(|&i| path.beta()[i]).collect(),
        b,
        qv_b,
    })
}

/// Simulates `spec.paths` direct paths on `workers` threads. Records come
/// back ordered by path index, so the result does not depend on `workers`.
pub fn simulate_ensemble<D: Drift + ?Sized>(
    ctx: &ModelContext,
    spec: &EnsembleSpec,
    weights: &ZeroLevelWeights,
    drift: Option<&D>,
    workers: usize,
) -> Result<Ensemble> {
    if spec.probes.windows(2).any(|w| w[1] <= w[0]) || spec.probes.iter().any(|&p| !(p > 0.0 && p <= spec.grid.t_max())) {
        return domain("probe times must be increasing and inside (0, t_max]");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records = pool.install(|| {
        (0..spec.paths as u64)
            .into_par_iter()
            .map(|i| {
                let path = sample_path_direct(ctx, &spec.grid, RandomStream::new(spec.master_seed, i));
                path_record(&path, spec, weights, drift)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(Ensemble { probes: spec.probes.clone(), records })
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// `F_s`-measurable weights `Z_s = z(β_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    One,
    IndicatorBetaAbove(f64),
    AbsBeta,
}

impl Functional {
    pub fn eval(&self, beta: f64) -> f64 {
        match *self {
            Functional::One => 1.0,
            Functional::IndicatorBetaAbove(c) => {
                if beta > c {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::AbsBeta => beta.abs(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "one" => return Ok(Functional::One),
            "abs_beta" => return Ok(Functional::AbsBeta),
            _ => {}
        }
        if let Some(arg) = s.strip_prefix("indicator_beta_above(").and_then(|r| r.strip_suffix(')')) {
            let c = arg.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad threshold in `{s}`")))?;
            return Ok(Functional::IndicatorBetaAbove(c));
        }
        Err(Error::Config(format!("unknown functional `{s}`")))
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::One => write!(f, "one"),
            Functional::IndicatorBetaAbove(c) => write!(f, "indicator_beta_above({c})"),
            Functional::AbsBeta => write!(f, "abs_beta"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub s: f64,
    pub t: f64,
    pub functional: Functional,
    pub residual: f64,
    pub stderr: f64,
}

impl Residual {
    pub fn passes(&self, multiplier: f64) -> bool {
        self.residual.abs() <= multiplier * self.stderr
    }
}

/// Monte Carlo estimate of `E[((H_t - K_t) - (H_s - K_s)) Z_s]`.
pub fn martingale_residual(ens: &Ensemble, s: f64, t: f64, functional: Functional) -> Result<Residual> {
    if !(s > 0.0 && t > s) {
        return domain(format!("residual needs 0 < s < t, got ({s}, {t})"));
    }
    if ens.len() < MIN_RESIDUAL_PATHS {
        return Err(Error::InsufficientPaths { needed: MIN_RESIDUAL_PATHS, available: ens.len() });
    }
    let (i, j) = (ens.probe_index(s)?, ens.probe_index(t)?);
    let xs: Vec<f64> = ens
        .records
        .iter()
        .map(|r| ((r.h[j] - r.k[j]) - (r.h[i] - r.k[i])) * functional.eval(r.beta[i]))
        .collect();
    let (residual, stderr) = mean_stderr(&xs);
    Ok(Residual { s, t, functional, residual, stderr })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub t: f64,
    pub mean_h: f64,
    pub mean_k: f64,
    pub f_t: f64,
    pub stderr_h: f64,
    pub stderr_k: f64,
}

impl SummaryRow {
    /// `sqrt(se_H² + se_K²)`.
    pub fn combined_stderr(&self) -> f64 {
        self.stderr_h.hypot(self.stderr_k)
    }
}

#[derive(Debug)]
pub struct ResidualRow {
    pub s: f64,
    pub t: f64,
    pub functional: Functional,
    pub outcome: Result<Residual>,
}

#[derive(Debug)]
pub struct EnsembleReport {
    pub rows: Vec<SummaryRow>,
    pub residuals: Vec<ResidualRow>,
}

pub fn ensemble_summary(
    ens: &Ensemble,
    ctx: &ModelContext,
    times: &[f64],
    matrix: &[(f64, f64, Functional)],
) -> Result<EnsembleReport> {
    if ens.is_empty() {
        return Err(Error::InsufficientPaths { needed: 1, available: 0 });
    }
    let rows = times
        .iter()
        .map(|&t| {
            let i = ens.probe_index(t)?;
            let hs: Vec<f64> = ens.records.iter().map(|r| r.h[i]).collect();
            let ks: Vec<f64> = ens.records.iter().map(|r| r.k[i]).collect();
            let (mean_h, stderr_h) = mean_stderr(&hs);
            let (mean_k, stderr_k) = mean_stderr(&ks);
            Ok(SummaryRow { t, mean_h, mean_k, f_t: ctx.dist.cdf(t), stderr_h, stderr_k })
        })
        .collect::<Result<Vec<_>>>()?;
    let residuals = matrix
        .iter()
        .map(|&(s, t, functional)| ResidualRow { s, t, functional, outcome: martingale_residual(ens, s, t, functional) })
        .collect();
    Ok(EnsembleReport { rows, residuals })
}

/// One pass/fail check of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub name: String,
    pub statistic: f64,
    pub bound: f64,
    pub pass: bool,
    pub note: Option<String>,
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: statistic {:.6e}, bound {:.6e}", self.name, self.statistic, self.bound)?;
        if let Some(n) = &self.note {
            write!(f, " ({n})")?;
        }
        Ok(())
    }
}

/// Mean-identity and residual gates at `multiplier` standard errors.
pub fn report_gates(report: &EnsembleReport, multiplier: f64) -> Vec<Gate> {
    let mut gates = Vec::new();
    for r in &report.rows {
        let mut push = |name: String, stat: f64, se: f64| {
            let bound = multiplier * se;
            gates.push(Gate { name, statistic: stat, bound, pass: stat.abs() <= bound, note: None });
        };
        push(format!("mean_H - F at t={}", r.t), r.mean_h - r.f_t, r.stderr_h);
        push(format!("mean_K - F at t={}", r.t), r.mean_k - r.f_t, r.stderr_k);
        push(format!("mean_K - mean_H at t={}", r.t), r.mean_k - r.mean_h, r.combined_stderr());
    }
    for row in &report.residuals {
        let name = format!("residual s={} t={} {}", row.s, row.t, row.functional);
        gates.push(match &row.outcome {
            Ok(res) => Gate {
                name,
                statistic: res.residual,
                bound: multiplier * res.stderr,
                pass: res.passes(multiplier),
                note: None,
            },
            Err(e) => Gate { name, statistic: f64::NAN, bound: f64::NAN, pass: false, note: Some(e.to_string()) },
        });
    }
    gates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DefaultDistribution;
    use crate::laws::DriftTable;
    use proptest::prelude::*;

    fn setup(paths: usize, dt: f64) -> (ModelContext, EnsembleSpec, ZeroLevelWeights) {
        let ctx = ModelContext::with_default_quadrature(DefaultDistribution::exponential(1.0).unwrap());
        let grid = TimeGrid::uniform(dt, 2.0).unwrap();
        let spec = EnsembleSpec {
            paths,
            master_seed: 42,
            grid: grid.clone(),
            probes: vec![0.5, 1.0, 2.0],
            epsilon: dt.sqrt(),
            estimator: Estimator::Occupation,
            b_horizon: 1.0,
        };
        let w = ZeroLevelWeights::new(&ctx, &grid).unwrap();
        (ctx, spec, w)
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert!((pairwise_sum(&xs) - xs.iter().sum::<f64>()).abs() < 1e-12);
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn functional_round_trip() {
        for f in [Functional::One, Functional::AbsBeta, Functional::IndicatorBetaAbove(0.2)] {
            assert_eq!(Functional::parse(&f.to_string()).unwrap(), f);
        }
        assert!(Functional::parse("square").is_err());
        assert_eq!(Functional::IndicatorBetaAbove(0.2).eval(0.2), 0.0);
        assert_eq!(Functional::AbsBeta.eval(-0.3), 0.3);
    }

    #[test]
    fn worker_count_does_not_change_records() {
        let (ctx, spec, w) = setup(64, 0.01);
        let table = DriftTable::build(&ctx, 0.01, 1.0, 20, 3.0, 20).unwrap();
        let a = simulate_ensemble(&ctx, &spec, &w, Some(&table), 1).unwrap();
        let b = simulate_ensemble(&ctx, &spec, &w, Some(&table), 3).unwrap();
        assert_eq!(format!("{:?}", a.records), format!("{:?}", b.records));
        assert_eq!(a.records[0].b.len(), 3);
        assert!(a.records[0].b[2].is_nan());
    }

    #[test]
    fn small_ensembles_are_rejected() {
        let (ctx, spec, w) = setup(10, 0.02);
        let ens = simulate_ensemble::<ModelContext>(&ctx, &spec, &w, None, 1).unwrap();
        assert!(matches!(
            martingale_residual(&ens, 0.5, 1.0, Functional::One),
            Err(Error::InsufficientPaths { needed: 100, available: 10 })
        ));
        let empty = Ensemble { probes: ens.probes.clone(), records: Vec::new() };
        assert!(matches!(ensemble_summary(&empty, &ctx, &[1.0], &[]), Err(Error::InsufficientPaths { .. })));
        let report = ensemble_summary(&ens, &ctx, &[0.5, 1.0], &[(0.5, 1.0, Functional::One)]).unwrap();
        let gates = report_gates(&report, 3.0);
        assert!(!gates.last().unwrap().pass);
        assert!(martingale_residual(&ens, 1.0, 0.5, Functional::One).is_err());
    }

    #[test]
    fn ablation_has_power() {
        let (ctx, spec, w) = setup(2000, 0.01);
        let ens = simulate_ensemble::<ModelContext>(&ctx, &spec, &w, None, 1).unwrap();
        let zero = ens.without_compensator();
        let r = martingale_residual(&zero, 0.5, 1.0, Functional::One).unwrap();
        let expected = (-0.5f64).exp() - (-1.0f64).exp();
        assert!((r.residual - expected).abs() < 4.0 * r.stderr);
        assert!(!r.passes(3.0));
    }

    #[test]
    fn stderr_scales_like_inverse_root_paths() {
        let ratio_for = |n: usize| {
            let (ctx, mut spec, w) = setup(n, 0.01);
            spec.master_seed = 7;
            let ens = simulate_ensemble::<ModelContext>(&ctx, &spec, &w, None, 1).unwrap();
            let row = ensemble_summary(&ens, &ctx, &[1.0], &[]).unwrap().rows[0];
            (row.stderr_h, row.stderr_k)
        };
        let (h1, k1) = ratio_for(1000);
        let (h2, k2) = ratio_for(4000);
        for r in [h1 / h2, k1 / k2] {
            assert!((r / 2.0 - 1.0).abs() < 0.2, "stderr ratio {r}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn stderr_is_positive_and_mean_bounded(xs in proptest::collection::vec(-10.0f64..10.0, 2..200)) {
            let (m, se) = mean_stderr(&xs);
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
            prop_assert!(se >= 0.0);
        }
    }
}
