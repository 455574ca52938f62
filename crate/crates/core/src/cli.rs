//! Batch commands behind the `infobridge` binary. Each command writes its
//! CSV artifacts into the configured output directory from a single thread
//! after the parallel work has been reduced in path order.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::compensator::{compensator_kh_multi, Normalizer, ZeroLevelWeights};
use crate::config::{NormalizerPolicy, RunConfig};
use crate::ensemble::{ensemble_summary, report_gates, simulate_ensemble, EnsembleSpec, Gate};
use crate::error::{Error, Result};
use crate::laws::ModelContext;
use crate::local_time::{occupation_estimate, tanaka_estimate, Estimator, LocalTimeCurve};
use crate::path::{sample_path_direct, InformationPath, RandomStream, TimeGrid};

/// Exit statuses of the binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_GATE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub fn exit_code(outcome: &Result<bool>) -> i32 {
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_GATE,
        Err(Error::Config(_) | Error::Domain(_)) => EXIT_CONFIG,
        Err(Error::Io(_)) => EXIT_IO,
        Err(_) => EXIT_GATE,
    }
}

/// Seventeen significant digits, locale independent.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn local_time(cfg: &RunConfig, path: &InformationPath) -> Result<LocalTimeCurve> {
    match cfg.estimator {
        Estimator::Occupation => occupation_estimate(path, 0.0, cfg.epsilon()),
        Estimator::Tanaka => Ok(tanaka_estimate(path, 0.0)),
    }
}

/// Zero-level weights for a grid under the configured normalizer policy.
pub fn weights_for(cfg: &RunConfig, ctx: &ModelContext, grid: &TimeGrid, epsilon: f64) -> Result<ZeroLevelWeights> {
    let normalizer = match (cfg.normalizer, cfg.estimator) {
        (NormalizerPolicy::Band, Estimator::Occupation) => Normalizer::Band(epsilon),
        _ => Normalizer::Point,
    };
    ZeroLevelWeights::with_normalizer(ctx, grid, normalizer)
}

/// `paths.csv` and, when levels are configured, `local_time.csv`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<bool> {
    cfg.validate()?;
    let ctx = cfg.context()?;
    let grid = TimeGrid::uniform(cfg.dt, cfg.t_max)?;
    let paths: Vec<InformationPath> = pool(cfg)?.install(|| {
        (0..cfg.paths as u64)
            .into_par_iter()
            .map(|i| sample_path_direct(&ctx, &grid, RandomStream::new(cfg.seed, i)))
            .collect()
    });
    let mut w = create(&cfg.out, "paths.csv")?;
    writeln!(w, "path_id,t,beta,in_default")?;
    for (i, p) in paths.iter().enumerate() {
        for (k, (&t, &b)) in p.knots().iter().zip(p.beta()).enumerate() {
            writeln!(w, "{i},{},{},{}", num(t), num(b), u8::from(p.in_default(k)))?;
        }
    }
    w.flush()?;
    if !cfg.lt_levels.is_empty() {
        let mut w = create(&cfg.out, "local_time.csv")?;
        writeln!(w, "path_id,t,x,estimator,L")?;
        for (i, p) in paths.iter().enumerate() {
            for &x in &cfg.lt_levels {
                let curves = [("occupation", occupation_estimate(p, x, cfg.epsilon())?), ("tanaka", tanaka_estimate(p, x))];
                for (name, c) in &curves {
                    for (&t, &l) in p.knots().iter().zip(&c.values) {
                        writeln!(w, "{i},{},{},{name},{}", num(t), num(x), num(l))?;
                    }
                }
            }
        }
        w.flush()?;
    }
    Ok(true)
}

/// `survival.csv`: `P(τ > u | β_t = x)` for `u` from `t` to `t_max`.
pub fn cmd_survival(cfg: &RunConfig, t: f64, x: f64) -> Result<bool> {
    cfg.validate()?;
    let ctx = cfg.context()?;
    if !(t > 0.0 && t < cfg.t_max.min(ctx.t1())) {
        return Err(Error::Domain(format!("observation time {t} outside (0, min(t_max, t1)))")));
    }
    if x == 0.0 || !x.is_finite() {
        return Err(Error::Domain("observed level must be a nonzero number".into()));
    }
    let n = cfg.survival_points;
    let us: Vec<f64> = (0..n).map(|j| t + (cfg.t_max - t) * j as f64 / (n - 1) as f64).collect();
    let ps = pool(cfg)?.install(|| us.par_iter().map(|&u| ctx.survival_probability(t, u, x)).collect::<Result<Vec<f64>>>())?;
    let mut w = create(&cfg.out, "survival.csv")?;
    writeln!(w, "u,P_tau_gt_u")?;
    for (u, p) in us.iter().zip(&ps) {
        writeln!(w, "{},{}", num(*u), num(*p))?;
    }
    w.flush()?;
    Ok(true)
}

/// Ensemble run with `curves.csv`, `summary.csv`, `residuals.csv` and
/// `report.txt`. Returns whether every gate passed.
pub fn cmd_compensator(cfg: &RunConfig) -> Result<bool> {
    cfg.validate_times()?;
    let ctx = cfg.context()?;
    let grid = TimeGrid::uniform(cfg.dt, cfg.t_max)?;
    let eps = cfg.epsilon();
    let weights = weights_for(cfg, &ctx, &grid, eps)?;
    let spec = EnsembleSpec {
        paths: cfg.paths,
        master_seed: cfg.seed,
        grid: grid.clone(),
        probes: cfg.probe_times(),
        epsilon: eps,
        estimator: cfg.estimator,
        b_horizon: 0.0,
    };
    let mut ens = simulate_ensemble::<ModelContext>(&ctx, &spec, &weights, None, cfg.worker_count())?;
    if cfg.zero_k {
        ens = ens.without_compensator();
    }
    let report = ensemble_summary(&ens, &ctx, &cfg.report_times, &cfg.residuals)?;
    let gates = report_gates(&report, cfg.gate_multiplier);

    write_curves(cfg, &ctx, &grid, &weights)?;

    let mut w = create(&cfg.out, "summary.csv")?;
    writeln!(w, "t,mean_H,mean_K,F_t,stderr_H,stderr_K")?;
    for r in &report.rows {
        writeln!(w, "{},{},{},{},{},{}", num(r.t), num(r.mean_h), num(r.mean_k), num(r.f_t), num(r.stderr_h), num(r.stderr_k))?;
    }
    w.flush()?;

    let mut w = create(&cfg.out, "residuals.csv")?;
    writeln!(w, "s,t,functional,residual,stderr,pass")?;
    for row in &report.residuals {
        let (r, se, pass) = match &row.outcome {
            Ok(res) => (res.residual, res.stderr, res.passes(cfg.gate_multiplier)),
            Err(_) => (f64::NAN, f64::NAN, false),
        };
        writeln!(w, "{},{},{},{},{},{}", num(row.s), num(row.t), row.functional, num(r), num(se), pass)?;
    }
    w.flush()?;

    let pass = gates.iter().all(|g| g.pass);
    let mut text = String::new();
    writeln!(text, "compensator run: dist={} paths={} dt={} t_max={} seed={}", cfg.dist, cfg.paths, cfg.dt, cfg.t_max, cfg.seed).ok();
    writeln!(text, "estimator={:?} epsilon={} normalizer={:?} zero_k={}", cfg.estimator, eps, weights.normalizer(), cfg.zero_k).ok();
    write_report(&cfg.out, text, &gates, pass)?;
    Ok(pass)
}

fn write_curves(cfg: &RunConfig, ctx: &ModelContext, grid: &TimeGrid, weights: &ZeroLevelWeights) -> Result<()> {
    let n = cfg.curve_paths.min(cfg.paths);
    let rows = pool(cfg)?.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let path = sample_path_direct(ctx, grid, RandomStream::new(cfg.seed, i));
                let lt = local_time(cfg, &path)?;
                let mut k = weights.compensator(&path, &lt)?;
                if cfg.zero_k {
                    k.iter_mut().for_each(|v| *v = 0.0);
                }
                let kh = if cfg.kh.is_empty() { Vec::new() } else { compensator_kh_multi(&path, &cfg.kh, ctx, f64::INFINITY)? };
                Ok((path, k, kh))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut w = create(&cfg.out, "curves.csv")?;
    write!(w, "path_id,t,H,K")?;
    for h in &cfg.kh {
        write!(w, ",Kh_{h}")?;
    }
    writeln!(w)?;
    for (i, (path, k, kh)) in rows.iter().enumerate() {
        for (j, &t) in path.knots().iter().enumerate() {
            write!(w, "{i},{},{},{}", num(t), u8::from(path.in_default(j)), num(k[j]))?;
            for col in kh {
                write!(w, ",{}", num(col[j]))?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_report(dir: &Path, mut text: String, gates: &[Gate], pass: bool) -> Result<()> {
    for g in gates {
        writeln!(text, "{g}").ok();
    }
    writeln!(text, "overall: {}", if pass { "PASS" } else { "FAIL" }).ok();
    let mut w = create(dir, "report.txt")?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Gaps `|K^h_t - K_t|` of one path along the configured lags, with the
/// grid-refinement floor `|K_t(dt) - K_t(dt/2)| + |K^{h_min}_t(dt) - K^{h_min}_t(dt/2)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub path_id: usize,
    pub t: f64,
    pub gaps: Vec<f64>,
    pub floor: f64,
}

impl ConvergenceRow {
    pub fn strictly_decreasing(&self) -> Option<bool> {
        (self.gaps.len() >= 2).then(|| self.gaps.windows(2).all(|w| w[1] < w[0]))
    }

    pub fn below_floor(&self) -> bool {
        self.gaps.last().is_some_and(|&g| g <= self.floor)
    }
}

/// Per-path self-convergence of `K^h` toward `K`. Paths are simulated at
/// `dt/2` and coarsened, so both resolutions see the same Brownian motion.
pub fn convergence_study(cfg: &RunConfig) -> Result<Vec<ConvergenceRow>> {
    cfg.validate_times()?;
    if cfg.kh.is_empty() {
        return Err(Error::Config("kh list is empty".into()));
    }
    if cfg.kh.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("kh list must be strictly decreasing".into()));
    }
    let ctx = cfg.context()?;
    let coarse_grid = TimeGrid::uniform(cfg.dt, cfg.t_max)?;
    let fine_grid = TimeGrid::uniform(cfg.dt / 2.0, cfg.t_max)?;
    let (eps_c, eps_f) = match cfg.epsilon {
        crate::config::EpsilonPolicy::SqrtDt => (cfg.dt.sqrt(), (cfg.dt / 2.0).sqrt()),
        crate::config::EpsilonPolicy::Fixed(e) => (e, e),
    };
    let w_c = weights_for(cfg, &ctx, &coarse_grid, eps_c)?;
    let w_f = weights_for(cfg, &ctx, &fine_grid, eps_f)?;
    let lt = |p: &InformationPath, e: f64| match cfg.estimator {
        Estimator::Occupation => occupation_estimate(p, 0.0, e),
        Estimator::Tanaka => Ok(tanaka_estimate(p, 0.0)),
    };
    let h_min = *cfg.kh.last().unwrap();
    let t_stop = cfg.convergence_times.iter().cloned().fold(0.0, f64::max) + 1e-9 * cfg.dt;
    let per_path = pool(cfg)?.install(|| {
        (0..cfg.convergence_paths)
            .into_par_iter()
            .map(|i| {
                let fine = sample_path_direct(&ctx, &fine_grid, RandomStream::new(cfg.seed, i as u64));
                let coarse = fine.coarsen(2)?;
                let k_c = w_c.compensator(&coarse, &lt(&coarse, eps_c)?)?;
                let k_f = w_f.compensator(&fine, &lt(&fine, eps_f)?)?;
                let kh_c = compensator_kh_multi(&coarse, &cfg.kh, &ctx, t_stop)?;
                let kh_f = compensator_kh_multi(&fine, &[h_min], &ctx, t_stop)?.remove(0);
                let rows = cfg
                    .convergence_times
                    .iter()
                    .map(|&t| {
                        let ic = coarse.grid().index_at(t + 1e-9 * cfg.dt);
                        let jf = fine.grid().index_at(t + 1e-9 * cfg.dt);
                        let gaps: Vec<f64> = kh_c.iter().map(|col| (col[ic] - k_c[ic]).abs()).collect();
                        let floor = (k_c[ic] - k_f[jf]).abs() + (kh_c[kh_c.len() - 1][ic] - kh_f[jf]).abs();
                        ConvergenceRow { path_id: i, t, gaps, floor }
                    })
                    .collect::<Vec<_>>();
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_path.into_iter().flatten().collect())
}

/// `convergence.csv` and a trend verdict per path and time in `report.txt`.
pub fn cmd_convergence(cfg: &RunConfig) -> Result<bool> {
    let rows = convergence_study(cfg)?;
    let mut w = create(&cfg.out, "convergence.csv")?;
    writeln!(w, "path_id,h,t,abs_gap_Kh_K")?;
    for r in &rows {
        for (h, g) in cfg.kh.iter().zip(&r.gaps) {
            writeln!(w, "{},{},{},{}", r.path_id, num(*h), num(r.t), num(*g))?;
        }
    }
    w.flush()?;

    let mut text = String::new();
    writeln!(text, "convergence run: dist={} dt={} seed={} kh={:?}", cfg.dist, cfg.dt, cfg.seed, cfg.kh).ok();
    for r in &rows {
        let trend = match r.strictly_decreasing() {
            None => "insufficient points",
            Some(true) => "decreasing",
            Some(false) => "not decreasing",
        };
        writeln!(
            text,
            "path {} t={}: {trend}; final gap {:.6e}, dt/2 floor {:.6e}{}",
            r.path_id,
            r.t,
            r.gaps.last().copied().unwrap_or(f64::NAN),
            r.floor,
            if r.below_floor() { " (below floor)" } else { "" }
        )
        .ok();
    }
    let mut gates = Vec::new();
    for &t in &cfg.convergence_times {
        let at: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.t == t).collect();
        let decided = at.iter().filter_map(|r| r.strictly_decreasing()).collect::<Vec<_>>();
        let name = format!("K^h trend at t={t}");
        gates.push(if decided.is_empty() {
            Gate { name, statistic: f64::NAN, bound: f64::NAN, pass: false, note: Some("insufficient points".into()) }
        } else {
            let frac = decided.iter().filter(|&&d| d).count() as f64 / at.len() as f64;
            Gate {
                name,
                statistic: frac,
                bound: cfg.convergence_min_fraction,
                pass: frac >= cfg.convergence_min_fraction,
                note: Some("fraction of paths with strictly decreasing gaps".into()),
            }
        });
    }
    let pass = gates.iter().all(|g| g.pass);
    write_report(&cfg.out, text, &gates, pass)?;
    Ok(pass)
}
