//! Acceptance suite: one PASS/FAIL line per criterion, details indented
//! below it. Exits 0 after reporting unless `INFOBRIDGE_ACCEPTANCE_STRICT`
//! is set, in which case any failing criterion gives exit status 1.

use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use infobridge::cli::{cmd_compensator, convergence_study, weights_for};
use infobridge::compensator::laplacian_kernel_q_with;
use infobridge::config::RunConfig;
use infobridge::ensemble::{
    ensemble_summary, mean_stderr, report_gates, simulate_ensemble, EnsembleSpec, Functional,
};
use infobridge::laws::DriftTable;
use infobridge::local_time::{
    level_grid, occupation_estimate, occupation_formula_sides, tanaka_estimate, Estimator,
};
use infobridge::path::{
    quadratic_variation, running_max_abs, sample_path_direct, sample_path_given_tau, RandomStream, TimeGrid,
};
use infobridge::quadrature::{integrate_semi_infinite, Envelope, LowerEndpoint, QuadratureSpec};
use infobridge::{DefaultDistribution, ModelContext, Result};

type Check = (usize, fn() -> Result<Outcome>);

struct Outcome {
    pass: bool,
    summary: String,
    details: String,
}

fn outcome(pass: bool, summary: impl Into<String>, details: String) -> Result<Outcome> {
    Ok(Outcome { pass, summary: summary.into(), details })
}

fn exp1() -> ModelContext {
    ModelContext::with_default_quadrature(DefaultDistribution::exponential(1.0).unwrap())
}

fn headline_config() -> RunConfig {
    RunConfig { paths: 100_000, dt: 1e-3, t_max: 2.0, seed: 1, kh: Vec::new(), ..RunConfig::default() }
}

// Sample variance and its standard error from the fourth central moment.
fn variance_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (m2 * n / (n - 1.0), ((m4 - m2 * m2) / n).sqrt())
}

fn bridge_marginal() -> Result<Outcome> {
    let (r, t, n) = (2.0, 1.0, 100_000u64);
    let grid = TimeGrid::uniform(1e-2, 1.0)?;
    let mut xs = Vec::with_capacity(n as usize);
    for i in 0..n {
        let p = sample_path_given_tau(r, &grid, RandomStream::new(1001, i))?;
        xs.push(p.beta_at(t));
    }
    let (m, se) = mean_stderr(&xs);
    let (v, se_v) = variance_stderr(&xs);
    let target = t * (r - t) / r;
    let pass = m.abs() <= 3.0 * se && (v - target).abs() <= 3.0 * se_v;
    let details = format!("mean {m:.5} (3 SE {:.5}); variance {v:.5} vs {target} (3 SE {:.5})", 3.0 * se, 3.0 * se_v);
    outcome(pass, "bridge marginal at t=1 given tau=2", details)
}

fn stopping_identity() -> Result<Outcome> {
    let ctx = exp1();
    let grid = TimeGrid::uniform(1e-3, 2.0)?;
    let mut violations = 0usize;
    let mut defaulted = 0usize;
    for i in 0..10_000u64 {
        let p = sample_path_direct(&ctx, &grid, RandomStream::new(1002, i));
        defaulted += usize::from(p.tau() <= 2.0);
        violations += p
            .knots()
            .iter()
            .zip(p.beta())
            .skip(1)
            .filter(|(&t, &b)| (b == 0.0) != (t >= p.tau()))
            .count();
    }
    let details = format!("10000 paths, {defaulted} defaulted by t_max, {violations} violating knots with t > 0");
    outcome(violations == 0, "stopping identity beta_t = 0 iff t >= tau for t > 0", details)
}

fn quadratic_variation_check() -> Result<Outcome> {
    let ctx = ModelContext::with_default_quadrature(DefaultDistribution::uniform(6.0, 14.0)?);
    let t_max = 10.0;
    let grid = TimeGrid::uniform(1e-3, t_max)?;
    let n = 1000u64;
    let mut ok = 0usize;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let p = sample_path_direct(&ctx, &grid, RandomStream::new(1003, i));
        let horizon = p.tau().min(t_max);
        let qv = *quadratic_variation(&p).last().unwrap();
        let rel = (qv - horizon).abs() / horizon;
        worst = worst.max(rel);
        ok += usize::from(rel <= 0.05);
    }
    let frac = ok as f64 / n as f64;
    let details = format!("uniform(6,14), t_max=10: {ok}/{n} within 5% (worst {worst:.4})");
    outcome(frac >= 0.99, "quadratic variation equals t_max ^ tau", details)
}

fn occupation_formula() -> Result<Outcome> {
    let ctx = exp1();
    let dt: f64 = 1e-3;
    let eps = dt.sqrt();
    let grid = TimeGrid::uniform(dt, 2.0)?;
    let mut rel_one = Vec::new();
    let mut rel_ind = Vec::new();
    for i in 0..1000u64 {
        let p = sample_path_direct(&ctx, &grid, RandomStream::new(1004, i));
        let m = *running_max_abs(&p).last().unwrap();
        let levels = level_grid(m, eps, eps);
        let curves = levels.iter().map(|&x| occupation_estimate(&p, x, eps)).collect::<Result<Vec<_>>>()?;
        let (l, r) = occupation_formula_sides(&p, |_, _| 1.0, 2.0, &levels, &curves)?;
        rel_one.push((l - r).abs() / l);
        let ind = |_: f64, x: f64| if x.abs() <= 0.5 { 1.0 } else { 0.0 };
        let (l, r) = occupation_formula_sides(&p, ind, 2.0, &levels, &curves)?;
        rel_ind.push((l - r).abs() / l);
    }
    let (a, _) = mean_stderr(&rel_one);
    let (b, _) = mean_stderr(&rel_ind);
    let details = format!("mean relative residual: h=1 {a:.5}, h=1(|x|<=0.5) {b:.5}; bound 0.05");
    outcome(a <= 0.05 && b <= 0.05, "occupation-time formula", details)
}

fn estimator_agreement() -> Result<Outcome> {
    let ctx = exp1();
    let mut gaps = Vec::new();
    let mut details = String::new();
    let mut mean_lt = 0.0;
    for dt in [4e-3, 2e-3, 1e-3] {
        let grid = TimeGrid::uniform(dt, 1.0)?;
        let (mut gap, mut lt) = (Vec::new(), Vec::new());
        for i in 0..10_000u64 {
            let p = sample_path_direct(&ctx, &grid, RandomStream::new(1005, i));
            let a = occupation_estimate(&p, 0.0, dt.sqrt())?.at(1.0);
            let b = tanaka_estimate(&p, 0.0).at(1.0);
            gap.push((a - b).abs());
            lt.push(0.5 * (a + b));
        }
        let g = mean_stderr(&gap).0;
        mean_lt = mean_stderr(&lt).0;
        writeln!(details, "dt={dt:e}: mean |occ - tanaka| {g:.5}, mean L {mean_lt:.5}, ratio {:.4}", g / mean_lt).ok();
        gaps.push(g);
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let last = gaps[gaps.len() - 1] / mean_lt;
    write!(details, "monotone {monotone}; final ratio {last:.4} vs bound 0.1").ok();
    outcome(monotone && last < 0.1, "local-time estimators agree at x=0, t=1", details)
}

fn compensator_gates() -> Result<(Outcome, Outcome)> {
    let cfg = headline_config();
    let ctx = cfg.context()?;
    let grid = TimeGrid::uniform(cfg.dt, cfg.t_max)?;
    let eps = cfg.epsilon();
    let weights = weights_for(&cfg, &ctx, &grid, eps)?;
    let spec = EnsembleSpec {
        paths: cfg.paths,
        master_seed: cfg.seed,
        grid,
        probes: cfg.probe_times(),
        epsilon: eps,
        estimator: Estimator::Occupation,
        b_horizon: 0.0,
    };
    let ens = simulate_ensemble::<ModelContext>(&ctx, &spec, &weights, None, cfg.worker_count())?;
    let report = ensemble_summary(&ens, &ctx, &cfg.report_times, &cfg.residuals)?;
    let gates = report_gates(&report, cfg.gate_multiplier);

    let mut d6 = String::new();
    let mut pass6 = true;
    for (r, anchor) in report.rows.iter().zip([0.39347, 0.63212, 0.86466]) {
        let ok = (r.f_t - anchor).abs() <= 5e-6;
        pass6 &= ok;
        writeln!(d6, "F({}) = {:.6} vs anchor {anchor} ({})", r.t, r.f_t, if ok { "ok" } else { "mismatch" }).ok();
    }
    for g in gates.iter().filter(|g| g.name.starts_with("mean_K")) {
        pass6 &= g.pass;
        writeln!(d6, "{g}").ok();
    }

    let mut d7 = String::new();
    let mut pass7 = true;
    for g in gates.iter().filter(|g| g.name.starts_with("residual")) {
        pass7 &= g.pass;
        writeln!(d7, "{g}").ok();
    }
    let ablated = ensemble_summary(&ens.without_compensator(), &ctx, &cfg.report_times, &cfg.residuals)?;
    for row in ablated.residuals.iter().filter(|r| r.functional == Functional::One) {
        let res = row.outcome.as_ref().map_err(|e| infobridge::Error::Domain(e.to_string()))?;
        let caught = !res.passes(cfg.gate_multiplier);
        pass7 &= caught;
        let expected = ctx.dist.cdf(row.t) - ctx.dist.cdf(row.s);
        writeln!(
            d7,
            "zero-K s={} t={}: residual {:.5} (expected {expected:.5}), {}",
            row.s,
            row.t,
            res.residual,
            if caught { "rejected" } else { "NOT rejected" }
        )
        .ok();
    }
    Ok((
        Outcome { pass: pass6, summary: "compensator mean identity, Exp(1), 1e5 paths".into(), details: d6 },
        Outcome { pass: pass7, summary: "martingale residual matrix and zero-K ablation".into(), details: d7 },
    ))
}

fn kh_convergence() -> Result<Outcome> {
    let cfg = RunConfig {
        dt: 1e-3,
        t_max: 2.0,
        seed: 1008,
        kh: vec![0.2, 0.1, 0.05, 0.025],
        convergence_paths: 10,
        convergence_times: vec![1.0],
        ..RunConfig::default()
    };
    let rows = convergence_study(&cfg)?;
    let mut details = String::new();
    let (mut decreasing, mut below) = (0, 0);
    for r in &rows {
        let dec = r.strictly_decreasing() == Some(true);
        decreasing += usize::from(dec);
        below += usize::from(r.below_floor());
        let gaps: Vec<String> = r.gaps.iter().map(|g| format!("{g:.4}")).collect();
        writeln!(details, "stream {}: gaps [{}] floor {:.4} decreasing {dec}", r.path_id, gaps.join(", "), r.floor).ok();
    }
    write!(details, "{decreasing}/10 strictly decreasing, {below}/10 final gap below floor; need 8 of each").ok();
    outcome(decreasing >= 8 && below >= 8, "K^h converges to K at t=1", details)
}

fn bound_chain() -> Result<Outcome> {
    let ctx = exp1();
    let (t0, t) = (0.25, 2.0);
    let mut worst: f64 = 0.0;
    for x in [0.0, 0.5, -0.5, 1.0, -1.0] {
        let c = ctx.c_tilde_bound(t0, t, x)?;
        for j in 0..100 {
            let s = t0 + (t - t0) * j as f64 / 99.0;
            worst = worst.max(ctx.g_fun(s, x)? * c);
        }
    }
    outcome(worst <= 1.0 + 1e-9, "g(s,x) bounded by 1/C(t0,t,x)", format!("max g*C = {worst:.12}"))
}

fn q_kernel() -> Result<Outcome> {
    let spec = QuadratureSpec { rel_tol: 1e-11, abs_tol: 1e-14, ..QuadratureSpec::default() };
    let mut details = String::new();
    let mut pass = true;
    let mut gaps = Vec::new();
    for h in [1.0f64, 0.1, 0.01] {
        let cut = Envelope::Cutoff(40.0 * h.sqrt());
        let q = |x: f64| laplacian_kernel_q_with(h, x, &spec).unwrap_or(f64::NAN);
        let mass = 2.0 * integrate_semi_infinite(q, 0.0, LowerEndpoint::Regular, &spec, cut)?.value;
        let cosq = 2.0 * integrate_semi_infinite(|x| x.cos() * q(x), 0.0, LowerEndpoint::Regular, &spec, cut)?.value;
        let oracle = 2.0 * (1.0 - (-h / 2.0).exp()) / h;
        let ok = (mass - 1.0).abs() <= 1e-6 && (cosq - oracle).abs() <= 1e-6;
        pass &= ok;
        writeln!(details, "h={h}: mass {mass:.9}, cos moment {cosq:.9} vs {oracle:.9}").ok();
        gaps.push(1.0 - cosq);
    }
    let shrinking = gaps.windows(2).all(|w| 0.0 < w[1] && w[1] < w[0]);
    pass &= shrinking;
    write!(details, "gaps to 1 strictly shrinking: {shrinking}").ok();
    outcome(pass, "q kernel is a density concentrating at 0", details)
}

fn drift_decomposition() -> Result<Outcome> {
    let ctx = exp1();
    let dt: f64 = 1e-3;
    let grid = TimeGrid::uniform(dt, 1.0)?;
    let table = DriftTable::build(&ctx, dt, 1.0, 100, 5.0, 100)?;
    let weights = weights_for(&RunConfig::default(), &ctx, &grid, dt.sqrt())?;
    let spec = EnsembleSpec {
        paths: 100_000,
        master_seed: 1011,
        grid,
        probes: vec![0.5, 1.0],
        epsilon: dt.sqrt(),
        estimator: Estimator::Occupation,
        b_horizon: 1.0,
    };
    let ens = simulate_ensemble(&ctx, &spec, &weights, Some(&table), infobridge::ensemble::worker_count())?;
    let inc: Vec<f64> = ens.records.iter().map(|r| r.b[1] - r.b[0]).collect();
    let (m, se) = mean_stderr(&inc);
    let qv: Vec<f64> = ens.records.iter().map(|r| r.qv_b[1]).collect();
    let (q, se_q) = mean_stderr(&qv);
    let target = 1.0 - (-1.0f64).exp();
    let pass = m.abs() <= 3.0 * se && (q - target).abs() <= 3.0 * se_q;
    let details = format!(
        "E[b_1 - b_0.5] = {m:.5} (3 SE {:.5}); mean QV_b(1) = {q:.5} vs {target:.5} (3 SE {:.5})",
        3.0 * se,
        3.0 * se_q
    );
    outcome(pass, "recovered b is a Brownian motion stopped at tau", details)
}

fn reproducibility() -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("infobridge-acceptance-{}", std::process::id()));
    let mut summaries = Vec::new();
    for workers in [1usize, 4] {
        let mut cfg = headline_config();
        cfg.workers = Some(workers);
        cfg.out = dir.join(format!("w{workers}"));
        cmd_compensator(&cfg)?;
        summaries.push(fs::read(cfg.out.join("summary.csv"))?);
    }
    fs::remove_dir_all(&dir).ok();
    let same = summaries[0] == summaries[1];
    outcome(same, "summary.csv identical for 1 and 4 workers", format!("{} bytes, identical {same}", summaries[0].len()))
}

fn report(n: usize, res: Result<Outcome>, started: Instant) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match res {
        Ok(o) => {
            println!("{} [{n:>2}] {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.summary);
            for line in o.details.lines() {
                println!("         {line}");
            }
            o.pass
        }
        Err(e) => {
            println!("FAIL [{n:>2}] error: {e} ({secs:.1} s)");
            false
        }
    }
}

fn main() {
    let mut passed = Vec::new();
    let checks: [Check; 5] =
        [(1, bridge_marginal), (2, stopping_identity), (3, quadratic_variation_check), (4, occupation_formula), (5, estimator_agreement)];
    for (n, f) in checks {
        let t = Instant::now();
        passed.push(report(n, f(), t));
    }
    let t = Instant::now();
    match compensator_gates() {
        Ok((six, seven)) => {
            passed.push(report(6, Ok(six), t));
            passed.push(report(7, Ok(seven), t));
        }
        Err(e) => {
            let msg = e.to_string();
            passed.push(report(6, Err(e), t));
            passed.push(report(7, Err(infobridge::Error::Domain(msg)), t));
        }
    }
    let rest: [Check; 5] =
        [(8, kh_convergence), (9, bound_chain), (10, q_kernel), (11, drift_decomposition), (12, reproducibility)];
    for (n, f) in rest {
        let t = Instant::now();
        passed.push(report(n, f(), t));
    }
    let ok = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {ok}/{} criteria passed", passed.len());
    if ok < passed.len() && std::env::var_os("INFOBRIDGE_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
