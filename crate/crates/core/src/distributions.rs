//! Laws of the default time.
//!
//! Every law is strictly positive with a density that is continuous on
//! `(0, ∞)`. Bounded-support laws carry a finite effective horizon `t1`;
//! all model quantities downstream are evaluated only below it.

use std::fs;
use std::path::Path;

use rand::distr::Open01;
use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Gamma, LogNormal};
use statrs::function::erf::erfc_inv;

use crate::error::{domain, Error, Result};
use crate::quadrature::{integrate_finite_with_breaks, LowerEndpoint, QuadratureSpec};

/// Kind-specific parameters.
#[derive(Debug, Clone)]
pub enum DistKind {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Uniform { lo: f64, hi: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Tabulated(Table),
}

/// Piecewise-linear density through `(t[i], f[i])`, renormalized to unit mass.
#[derive(Debug, Clone)]
pub struct Table {
    t: Vec<f64>,
    f: Vec<f64>,
    // CDF at each knot.
    cum: Vec<f64>,
}

impl Table {
    pub fn new(t: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        if t.len() != f.len() || t.len() < 2 {
            return domain("table needs at least two (t, f) rows");
        }
        if t[0] < 0.0 || t.iter().any(|x| !x.is_finite()) {
            return domain("table times must be finite and non-negative");
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return domain("table times must be strictly increasing");
        }
        if f.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
            return domain("table densities must be finite and non-negative");
        }
        let mut cum = vec![0.0; t.len()];
        for i in 1..t.len() {
            cum[i] = cum[i - 1] + 0.5 * (f[i] + f[i - 1]) * (t[i] - t[i - 1]);
        }
        let mass = cum[t.len() - 1];
        if !(mass > 0.0) {
            return domain("table density has zero mass");
        }
        let f = f.into_iter().map(|y| y / mass).collect();
        let cum = cum.into_iter().map(|c| c / mass).collect();
        Ok(Self { t, f, cum })
    }

    /// Reads a CSV with header `t,f`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Config("empty table file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["t", "f"] {
            return Err(Error::Config(format!("table header must be `t,f`, got `{header}`")));
        }
        let (mut t, mut f) = (Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let mut it = line.split(',').map(str::trim);
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("bad table row {}: `{line}`", n + 2)))
            };
            t.push(parse(it.next())?);
            f.push(parse(it.next())?);
        }
        Self::new(t, f)
    }

    fn segment(&self, x: f64) -> Option<usize> {
        if x < self.t[0] || x > self.t[self.t.len() - 1] {
            return None;
        }
        let i = self.t.partition_point(|&k| k <= x);
        Some(i.saturating_sub(1).min(self.t.len() - 2))
    }

    fn density(&self, x: f64) -> f64 {
        match self.segment(x) {
            None => 0.0,
            Some(i) => {
                let w = (x - self.t[i]) / (self.t[i + 1] - self.t[i]);
                self.f[i] + w * (self.f[i + 1] - self.f[i])
            }
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= self.t[0] {
            return 0.0;
        }
        match self.segment(x) {
            None => 1.0,
            Some(i) => {
                let d = x - self.t[i];
                let slope = (self.f[i + 1] - self.f[i]) / (self.t[i + 1] - self.t[i]);
                (self.cum[i] + self.f[i] * d + 0.5 * slope * d * d).min(1.0)
            }
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        let n = self.t.len();
        if p <= 0.0 {
            return self.t[0];
        }
        if p >= 1.0 {
            return self.horizon();
        }
        let i = self.cum.partition_point(|&c| c <= p).clamp(1, n - 1) - 1;
        let slope = (self.f[i + 1] - self.f[i]) / (self.t[i + 1] - self.t[i]);
        let r = p - self.cum[i];
        let disc = (self.f[i] * self.f[i] + 2.0 * slope * r).max(0.0);
        let denom = self.f[i] + disc.sqrt();
        let d = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
        (self.t[i] + d).min(self.t[i + 1])
    }

    fn horizon(&self) -> f64 {
        // Right end of the last segment carrying mass.
        let n = self.t.len();
        let last_pos = (0..n).rev().find(|&i| self.f[i] > 0.0).unwrap_or(0);
        self.t[(last_pos + 1).min(n - 1)]
    }

    fn knots(&self) -> &[f64] {
        &self.t
    }
}

/// Law of the default time τ.
#[derive(Debug, Clone)]
pub struct DefaultDistribution {
    kind: DistKind,
    t1: f64,
}

impl DefaultDistribution {
    pub fn new(kind: DistKind) -> Result<Self> {
        let t1 = match &kind {
            DistKind::Exponential { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return domain(format!("exponential rate must be positive, got {rate}"));
                }
                f64::INFINITY
            }
            DistKind::Gamma { shape, rate } => {
                // Shapes below one have an unbounded density at the origin.
                if !(*shape >= 1.0 && shape.is_finite() && *rate > 0.0 && rate.is_finite()) {
                    return domain(format!("gamma needs shape >= 1 and rate > 0, got ({shape}, {rate})"));
                }
                f64::INFINITY
            }
            DistKind::Uniform { lo, hi } => {
                if !(*lo >= 0.0 && hi > lo && hi.is_finite()) {
                    return domain(format!("uniform needs 0 <= a < b, got ({lo}, {hi})"));
                }
                *hi
            }
            DistKind::LogNormal { mu, sigma } => {
                if !(mu.is_finite() && *sigma > 0.0 && sigma.is_finite()) {
                    return domain(format!("lognormal needs sigma > 0, got ({mu}, {sigma})"));
                }
                f64::INFINITY
            }
            DistKind::Tabulated(table) => table.horizon(),
        };
        let dist = Self { kind, t1 };
        dist.check_normalization()?;
        Ok(dist)
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(DistKind::Exponential { rate })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::new(DistKind::Gamma { shape, rate })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(DistKind::Uniform { lo, hi })
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(DistKind::LogNormal { mu, sigma })
    }

    pub fn tabulated(t: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        Self::new(DistKind::Tabulated(Table::new(t, f)?))
    }

    /// Parses `exp:<rate>`, `gamma:<shape>,<rate>`, `uniform:<a>,<b>`,
    /// `lognormal:<mu>,<sigma>` or `table:<path>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, args) = spec
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("distribution spec `{spec}` lacks `kind:`")))?;
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad number `{s}` in `{spec}`")))
                })
                .collect()
        };
        let want = |v: Vec<f64>, n: usize| -> Result<Vec<f64>> {
            if v.len() == n {
                Ok(v)
            } else {
                Err(Error::Config(format!("`{name}` takes {n} parameter(s), got {}", v.len())))
            }
        };
        let built = match name.trim() {
            "exp" => {
                let v = want(nums()?, 1)?;
                Self::exponential(v[0])
            }
            "gamma" => {
                let v = want(nums()?, 2)?;
                Self::gamma(v[0], v[1])
            }
            "uniform" => {
                let v = want(nums()?, 2)?;
                Self::uniform(v[0], v[1])
            }
            "lognormal" => {
                let v = want(nums()?, 2)?;
                Self::lognormal(v[0], v[1])
            }
            "table" => Self::new(DistKind::Tabulated(Table::from_csv(Path::new(args.trim()))?)),
            other => return Err(Error::Config(format!("unknown distribution kind `{other}`"))),
        };
        built.map_err(|e| match e {
            Error::Domain(m) => Error::Config(m),
            other => other,
        })
    }

    pub fn kind(&self) -> &DistKind {
        &self.kind
    }

    /// `t1 = sup{t : F(t) < 1}`.
    pub fn effective_horizon(&self) -> f64 {
        self.t1
    }

    pub fn density(&self, t: f64) -> f64 {
        if !(t > 0.0) || t > self.t1 {
            return 0.0;
        }
        match &self.kind {
            DistKind::Exponential { rate } => rate * (-rate * t).exp(),
            DistKind::Gamma { shape, rate } => gamma_law(*shape, *rate).pdf(t),
            DistKind::Uniform { lo, hi } => {
                if t >= *lo {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            DistKind::LogNormal { mu, sigma } => lognormal_law(*mu, *sigma).pdf(t),
            DistKind::Tabulated(table) => table.density(t),
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        if t >= self.t1 {
            return 1.0;
        }
        match &self.kind {
            DistKind::Exponential { rate } => -(-rate * t).exp_m1(),
            DistKind::Gamma { shape, rate } => gamma_law(*shape, *rate).cdf(t),
            DistKind::Uniform { lo, hi } => ((t - lo) / (hi - lo)).clamp(0.0, 1.0),
            DistKind::LogNormal { mu, sigma } => lognormal_law(*mu, *sigma).cdf(t),
            DistKind::Tabulated(table) => table.cdf(t),
        }
    }

    /// `1 - F(t)`, computed without cancellation where the law allows.
    pub fn survival(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 1.0;
        }
        if t >= self.t1 {
            return 0.0;
        }
        match &self.kind {
            DistKind::Exponential { rate } => (-rate * t).exp(),
            DistKind::Gamma { shape, rate } => gamma_law(*shape, *rate).sf(t),
            DistKind::LogNormal { mu, sigma } => lognormal_law(*mu, *sigma).sf(t),
            _ => 1.0 - self.cdf(t),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match &self.kind {
            DistKind::Exponential { rate } => -(-p).ln_1p() / rate,
            DistKind::Uniform { lo, hi } => lo + p * (hi - lo),
            DistKind::Tabulated(table) => table.quantile(p),
            _ => {
                if p == 0.0 {
                    0.0
                } else if p == 1.0 {
                    self.t1
                } else if p > 0.5 {
                    self.inverse_survival(1.0 - p)
                } else {
                    self.bisect(|t| self.cdf(t) - p)
                }
            }
        }
    }

    /// Smallest `t` with `1 - F(t) <= q`.
    pub fn inverse_survival(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        if q == 0.0 {
            return self.t1;
        }
        match &self.kind {
            DistKind::Exponential { rate } => -q.ln() / rate,
            DistKind::LogNormal { mu, sigma } => {
                (mu + sigma * std::f64::consts::SQRT_2 * erfc_inv(2.0 * q)).exp()
            }
            DistKind::Gamma { .. } => {
                if q >= 0.5 {
                    self.quantile(1.0 - q)
                } else {
                    // survival is decreasing; bisect on log scale for tiny q
                    self.bisect(|t| q.ln() - self.survival(t).max(f64::MIN_POSITIVE).ln())
                }
            }
            _ => self.quantile(1.0 - q),
        }
    }

    // Root of an increasing function on (0, ∞).
    fn bisect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while g(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Draw of τ by inversion of one uniform variate.
    pub fn sample_tau<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        let t = match &self.kind {
            DistKind::Exponential { .. } | DistKind::LogNormal { .. } | DistKind::Gamma { .. } => {
                self.inverse_survival(u)
            }
            _ => self.quantile(u),
        };
        // τ is strictly positive.
        t.max(f64::MIN_POSITIVE)
    }

    /// Truncation point `T > a` leaving `cutoff` of the mass beyond `a`
    /// past `T`, capped at `t1`; also returns the discarded mass.
    pub fn truncation_point(&self, a: f64, cutoff: f64) -> Result<(f64, f64)> {
        let beyond = self.survival(a);
        if !(beyond > 0.0) {
            return Err(Error::Envelope(format!("no mass beyond {a} (t1 = {})", self.t1)));
        }
        let t = self.inverse_survival(beyond * cutoff).min(self.t1);
        if !(t > a) {
            return Err(Error::Envelope(format!("truncation point {t} not above {a}")));
        }
        Ok((t, self.survival(t)))
    }

    /// Knots where the density may fail to be smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match &self.kind {
            DistKind::Uniform { lo, hi } => vec![*lo, *hi],
            DistKind::Tabulated(table) => table.knots().to_vec(),
            _ => Vec::new(),
        }
    }

    fn check_normalization(&self) -> Result<()> {
        let spec = QuadratureSpec::default();
        let upper = if self.t1.is_finite() { self.t1 } else { self.inverse_survival(1e-16) };
        let lower = match &self.kind {
            DistKind::Uniform { lo, .. } => *lo,
            _ => 0.0,
        };
        let est = integrate_finite_with_breaks(
            |t| self.density(t),
            lower,
            upper,
            LowerEndpoint::Regular,
            &self.kinks(),
            &spec,
        )?;
        let tail = self.survival(upper);
        let mass = est.value + tail;
        if (mass - 1.0).abs() > 1e-9 {
            return domain(format!("density integrates to {mass}, not 1"));
        }
        Ok(())
    }
}

fn gamma_law(shape: f64, rate: f64) -> Gamma {
    Gamma::new(shape, rate).expect("parameters validated at construction")
}

fn lognormal_law(mu: f64, sigma: f64) -> LogNormal {
    LogNormal::new(mu, sigma).expect("parameters validated at construction")
}
