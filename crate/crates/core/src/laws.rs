//! Analytic functions of the model: Gaussian and bridge densities, the
//! normalizer `D` and its reciprocal `g`, the lower bound `C̃`, the
//! a posteriori density of τ, conditional expectations, survival
//! probabilities and the drift `u` of the semimartingale decomposition.
//!
//! All Gaussian exponents are assembled in log space and exponentiated once.

use std::f64::consts::PI;

use statrs::function::erf::erf;

use crate::distributions::DefaultDistribution;
use crate::error::{domain, Error, Result};
use crate::quadrature::{adaptive, integrate_semi_infinite_with_breaks, Envelope, Estimate, LowerEndpoint, QuadratureSpec};

/// Densities below this are flushed to zero.
pub const DENSITY_FLOOR: f64 = 1e-300;

// Geometric breakpoints in the square-root variable, starting below |x|
// where integrands of the form exp(-x^2 / 2w) switch on.
fn step_scales(x: f64) -> impl Iterator<Item = f64> {
    let ax = x.abs();
    (-2..64).map(move |k| ax * 2f64.powi(k)).take_while(move |&z| ax > 0.0 && z < 8.0)
}

/// `p(t, x, y)`: Gaussian density with mean `y` and variance `t`.
pub fn gaussian_density(t: f64, x: f64, y: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("variance must be positive, got {t}"));
    }
    Ok(log_gaussian(t, x - y).exp())
}

fn log_gaussian(var: f64, d: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - d * d / (2.0 * var)
}

/// `φ_t(r, x)`: density at `x` of a bridge of length `r` observed at `t`.
pub fn bridge_density_phi(t: f64, r: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("bridge time must be positive, got {t}"));
    }
    Ok(log_phi(t, r, x).map_or(0.0, f64::exp))
}

// ln φ_t(r, x); None when r <= t.
#[inline]
fn log_phi(t: f64, r: f64, x: f64) -> Option<f64> {
    if r <= t {
        return None;
    }
    let gap = r - t;
    // variance t (r - t) / r, exponent r x^2 / (2 t (r - t))
    Some(-0.5 * (2.0 * PI * t * gap / r).ln() - r * x * x / (2.0 * t * gap))
}

/// Law of τ plus the quadrature policy used for every model integral.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub dist: DefaultDistribution,
    pub quad: QuadratureSpec,
}

impl ModelContext {
    pub fn new(dist: DefaultDistribution, quad: QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        Ok(Self { dist, quad })
    }

    pub fn with_default_quadrature(dist: DefaultDistribution) -> Self {
        Self { dist, quad: QuadratureSpec::default() }
    }

    pub fn t1(&self) -> f64 {
        self.dist.effective_horizon()
    }

    fn check_time(&self, s: f64) -> Result<()> {
        if !(s > 0.0) || s >= self.t1() {
            return domain(format!("time {s} outside (0, t1 = {})", self.t1()));
        }
        Ok(())
    }

    fn breaks(&self, s: f64, x: f64, extra: &[f64]) -> Vec<f64> {
        let mut b: Vec<f64> = step_scales(x).map(|z| s + z * z).collect();
        b.extend(self.dist.kinks().into_iter().filter(|&k| k > s));
        b.extend_from_slice(extra);
        b
    }

    // e^{x²/2s} ∫_s^∞ weight(v, v - s) φ_s(v, x) f(v) dv, integrated in
    // z = sqrt(v - s) so that the gap v - s is exact near the lower endpoint.
    // The factor e^{-x²/2s} common to every φ_s(·, x) is left out.
    fn phi_integral<W: Fn(f64, f64) -> f64>(&self, s: f64, x: f64, weight: W, extra: &[f64]) -> Result<Estimate> {
        let f = &self.dist;
        let (cut, tail_mass) = f.truncation_point(s, self.quad.tail_cutoff_mass)?;
        let integrand_v = |z: f64| -> f64 {
            let gap = z * z;
            let v = s + gap;
            let fv = f.density(v);
            if gap <= 0.0 || fv <= 0.0 {
                return 0.0;
            }
            let lp = -0.5 * (2.0 * PI * s * gap / v).ln() - x * x / (2.0 * gap);
            weight(v, gap) * (lp + fv.ln()).exp()
        };
        let integrand = |z: f64| 2.0 * z * integrand_v(z);
        let zb: Vec<f64> = self.breaks(s, x, extra).into_iter().filter(|&v| v > s && v < cut).map(|v| (v - s).sqrt()).collect();
        let zmax = (cut - s).sqrt();
        let mut est = adaptive(&integrand, 0.0, zmax, &zb, &self.quad)?;
        let dens = f.density(cut);
        if tail_mass > 0.0 && dens > 0.0 {
            let ratio = (integrand_v(zmax) / dens).abs();
            if ratio.is_finite() {
                est.err += ratio * tail_mass;
            }
        }
        Ok(est)
    }

    /// `D(s, x) = ∫_s^∞ φ_s(v, x) f(v) dv`, the density of β_s at `x` on
    /// `{s < τ}`.
    pub fn normalizer_d(&self, s: f64, x: f64) -> Result<f64> {
        let scaled = self.scaled_normalizer(s, x)?;
        let d = scaled * (-x * x / (2.0 * s)).exp();
        if !(d > 0.0) {
            return Err(Error::NonConvergence { subdivisions: 0, value: d, err: 0.0 });
        }
        Ok(d)
    }

    // D(s, x) e^{x²/2s}
    fn scaled_normalizer(&self, s: f64, x: f64) -> Result<f64> {
        self.check_time(s)?;
        let est = self.phi_integral(s, x, |_, _| 1.0, &[])?;
        if !(est.value > 0.0 && est.value.is_finite()) {
            return Err(Error::NonConvergence { subdivisions: 0, value: est.value, err: est.err });
        }
        Ok(est.value)
    }

    /// `g(s, x) = 1 / D(s, x)`.
    pub fn g_fun(&self, s: f64, x: f64) -> Result<f64> {
        Ok(1.0 / self.normalizer_d(s, x)?)
    }

    /// `(2ε)^{-1} ∫_{-ε}^{ε} D(s, x) dx = (2ε)^{-1} ∫_s^∞ erf(ε / sqrt(2 s (v - s) / v)) f(v) dv`,
    /// the normalizer matched to a box kernel of half-width `ε` at level zero.
    pub fn band_normalizer(&self, s: f64, eps: f64) -> Result<f64> {
        self.check_time(s)?;
        if !(eps > 0.0 && eps.is_finite()) {
            return domain(format!("band half-width must be positive, got {eps}"));
        }
        let f = &self.dist;
        let (cut, _) = f.truncation_point(s, self.quad.tail_cutoff_mass)?;
        let integrand = |z: f64| {
            let v = s + z * z;
            let fv = f.density(v);
            if fv <= 0.0 {
                return 0.0;
            }
            let arg = if z > 0.0 { eps * (v / (2.0 * s)).sqrt() / z } else { f64::INFINITY };
            2.0 * z * erf(arg) * fv
        };
        let mut zb: Vec<f64> = step_scales(eps).collect();
        zb.extend(f.kinks().into_iter().filter(|&k| k > s && k < cut).map(|k| (k - s).sqrt()));
        let zmax = (cut - s).sqrt();
        zb.retain(|&z| z > 0.0 && z < zmax);
        let est = adaptive(&integrand, 0.0, zmax, &zb, &self.quad)?;
        if !(est.value > 0.0) {
            return Err(Error::NonConvergence { subdivisions: 0, value: est.value, err: est.err });
        }
        Ok(est.value / (2.0 * eps))
    }

    /// Lower bound of `D(s, x)` over `s ∈ [t0, t]`.
    pub fn c_tilde_bound(&self, t0: f64, t: f64, x: f64) -> Result<f64> {
        if !(t0 > 0.0 && t > t0 && t < self.t1()) {
            return domain(format!("C̃ needs 0 < t0 < t < t1, got t0 = {t0}, t = {t}"));
        }
        let f = &self.dist;
        let pre = -0.5 * (2.0 * PI * t).ln();
        let integrand = |v: f64| {
            let fv = f.density(v);
            if v <= t || fv <= 0.0 {
                return 0.0;
            }
            (pre - v * x * x / (2.0 * t0 * (v - t)) + fv.ln()).exp()
        };
        let mut breaks: Vec<f64> = step_scales(x).map(|z| t + z * z * t / t0).collect();
        breaks.extend(f.kinks().into_iter().filter(|&k| k > t));
        let est = integrate_semi_infinite_with_breaks(
            integrand,
            t,
            LowerEndpoint::Regular,
            &breaks,
            &self.quad,
            Envelope::Distribution(f),
        )?;
        Ok(est.value)
    }

    /// A posteriori density of τ at `r`, given `β_t = x` on `{τ > t}`.
    pub fn posterior_density(&self, t: f64, r: f64, x: f64) -> Result<f64> {
        self.check_time(t)?;
        if !(r > 0.0) {
            return domain(format!("r must be positive, got {r}"));
        }
        let Some(lp) = log_phi(t, r, x) else {
            return Ok(0.0);
        };
        let fr = self.dist.density(r);
        if fr <= 0.0 {
            return Ok(0.0);
        }
        let log_d = self.scaled_normalizer(t, x)?.ln() - x * x / (2.0 * t);
        let value = (lp + fr.ln() - log_d).exp();
        Ok(if value < DENSITY_FLOOR { 0.0 } else { value })
    }

    fn posterior_expectation<H: Fn(f64) -> f64>(&self, h: H, t: f64, x: f64, extra: &[f64]) -> Result<f64> {
        self.check_time(t)?;
        if x == 0.0 {
            return domain("conditional expectation on {t < τ} needs x != 0");
        }
        let d = self.scaled_normalizer(t, x)?;
        let est = self.phi_integral(t, x, |v, _| h(v), extra).map_err(|e| match e {
            Error::NonConvergence { .. } | Error::Envelope(_) => {
                Error::Integrability(format!("quadrature failed for the weighted posterior: {e}"))
            }
            other => other,
        })?;
        // The envelope bound on the discarded tail must be negligible.
        if !(est.err <= 1e-6 * est.value.abs().max(d)) {
            return Err(Error::Integrability(format!(
                "tail of |h| f not controlled by the envelope (err {:e})",
                est.err
            )));
        }
        Ok(est.value / d)
    }

    /// `E[h(τ) | β_t = x]` on `{t < τ}`.
    pub fn conditional_expectation<H: Fn(f64) -> f64>(&self, h: H, t: f64, x: f64) -> Result<f64> {
        self.posterior_expectation(h, t, x, &[])
    }

    /// `P(τ > u | β_t = x)` on `{t < τ}`.
    pub fn survival_probability(&self, t: f64, u: f64, x: f64) -> Result<f64> {
        if !(u >= t) {
            return domain(format!("survival horizon {u} below observation time {t}"));
        }
        if u >= self.t1() {
            self.check_time(t)?;
            return Ok(0.0);
        }
        let p = self.posterior_expectation(|r| if r > u { 1.0 } else { 0.0 }, t, x, &[u])?;
        Ok(p.clamp(0.0, 1.0))
    }

    /// `P(τ ≤ s + h | β_s = x)` on `{s < τ}` for each `h`, sharing one
    /// normalizer. `x = 0` is allowed here.
    pub fn window_masses(&self, s: f64, x: f64, hs: &[f64]) -> Result<Vec<f64>> {
        let d = self.scaled_normalizer(s, x)?;
        hs.iter()
            .map(|&h| {
                if !(h > 0.0) {
                    return domain(format!("window length must be positive, got {h}"));
                }
                let end = s + h;
                let est = self.phi_integral(s, x, |v, _| if v <= end { 1.0 } else { 0.0 }, &[end])?;
                Ok((est.value / d).clamp(0.0, 1.0))
            })
            .collect()
    }

    /// `u(s, x) = E[β_s / (τ - s) 1{s < τ} | β_s = x]`, with `u(s, 0) = 0`.
    pub fn drift_u(&self, s: f64, x: f64) -> Result<f64> {
        self.check_time(s)?;
        if x == 0.0 {
            return Ok(0.0);
        }
        let d = self.scaled_normalizer(s, x)?;
        let est = self.phi_integral(s, x, |_, gap| 1.0 / gap, &[])?;
        Ok(x * est.value / d)
    }
}

/// Bilinear interpolant of `u` on a rectangle of `(s, |x|)` nodes, odd in
/// `x`. Points outside the tabulated `|x|` range fall back to quadrature.
#[derive(Debug, Clone)]
pub struct DriftTable {
    s_nodes: Vec<f64>,
    x_nodes: Vec<f64>,
    // row-major: values[i * nx + j] = u(s_i, x_j)
    values: Vec<f64>,
    ctx: ModelContext,
}

impl DriftTable {
    /// Tabulates `u` for `s ∈ [s_min, s_max]` with `n_s` nodes and
    /// `|x| ≤ x_max` with `n_x` quadratically spaced nodes.
    pub fn build(ctx: &ModelContext, s_min: f64, s_max: f64, n_s: usize, x_max: f64, n_x: usize) -> Result<Self> {
        use rayon::prelude::*;
        if !(s_min > 0.0 && s_max >= s_min && s_max < ctx.t1() && n_s >= 1 && n_x >= 2 && x_max > 0.0) {
            return domain("invalid drift table bounds");
        }
        let s_nodes: Vec<f64> = if n_s == 1 {
            vec![s_min]
        } else {
            (0..n_s).map(|i| s_min + (s_max - s_min) * i as f64 / (n_s - 1) as f64).collect()
        };
        let x_nodes: Vec<f64> = (1..=n_x).map(|j| x_max * (j as f64 / n_x as f64).powi(2)).collect();
        let cells: Vec<(f64, f64)> = s_nodes
            .iter()
            .flat_map(|&s| x_nodes.iter().map(move |&x| (s, x)))
            .collect();
        let values = cells
            .par_iter()
            .map(|&(s, x)| ctx.drift_u(s, x))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { s_nodes, x_nodes, values, ctx: ctx.clone() })
    }

    pub fn eval(&self, s: f64, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let ax = x.abs();
        let nx = self.x_nodes.len();
        if ax > self.x_nodes[nx - 1] {
            return self.ctx.drift_u(s, x);
        }
        let (i0, i1, ws) = bracket(&self.s_nodes, s);
        let (j0, j1, wx) = if ax <= self.x_nodes[0] { (0, 0, 0.0) } else { bracket(&self.x_nodes, ax) };
        let v = |i: usize, j: usize| self.values[i * nx + j];
        let lo = v(i0, j0) + wx * (v(i0, j1) - v(i0, j0));
        let hi = v(i1, j0) + wx * (v(i1, j1) - v(i1, j0));
        Ok(x.signum() * (lo + ws * (hi - lo)))
    }
}

// Neighbouring node indices and interpolation weight, clamped at the ends.
fn bracket(nodes: &[f64], t: f64) -> (usize, usize, f64) {
    let n = nodes.len();
    if n == 1 || t <= nodes[0] {
        return (0, 0, 0.0);
    }
    if t >= nodes[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let k = nodes.partition_point(|&v| v <= t) - 1;
    let w = (t - nodes[k]) / (nodes[k + 1] - nodes[k]);
    (k, k + 1, w)
}
