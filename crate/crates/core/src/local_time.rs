//! Local time of a simulated path at a level, by occupation density and by
//! the discrete Tanaka sum, plus the occupation-time-formula residual.

use crate::error::{domain, Result};
use crate::path::{InformationPath, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Occupation,
    Tanaka,
}

/// Nondecreasing estimate of `t ↦ L(t, x)` on a path's grid.
#[derive(Debug, Clone)]
pub struct LocalTimeCurve {
    pub x: f64,
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub estimator: Estimator,
    pub epsilon: Option<f64>,
}

impl LocalTimeCurve {
    /// Value at the last knot `≤ t`.
    pub fn at(&self, t: f64) -> f64 {
        self.values[self.grid.index_at(t)]
    }

    /// Knot increments `L(t_{k+1}) - L(t_k)`.
    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.windows(2).map(|w| w[1] - w[0])
    }

    /// Left-endpoint Stieltjes sum `∫_0^t h(s) dL(s)` over knots `≤ t`.
    pub fn stieltjes<H: Fn(f64) -> f64>(&self, h: H, t: f64) -> f64 {
        let knots = self.grid.knots();
        let last = self.grid.index_at(t);
        (0..last).map(|k| h(knots[k]) * (self.values[k + 1] - self.values[k])).sum()
    }
}

// Fraction of the segment a -> b (linear in between) lying in [-eps, eps].
fn band_fraction(a: f64, b: f64, eps: f64) -> f64 {
    if a == b {
        return if a.abs() <= eps { 1.0 } else { 0.0 };
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let inter = hi.min(eps) - lo.max(-eps);
    if inter <= 0.0 {
        0.0
    } else {
        inter / (hi - lo)
    }
}

/// Occupation per step as the `(2ε)^{-1}` scaled time the piecewise-linear
/// interpolant spends in `[x - ε, x + ε]`, counted on steps ending by τ.
pub fn occupation_increments(path: &InformationPath, x: f64, epsilon: f64) -> Vec<f64> {
    let knots = path.knots();
    let beta = path.beta();
    let steps = path.tau_index().unwrap_or(knots.len() - 1);
    let scale = 0.5 / epsilon;
    (0..knots.len() - 1)
        .map(|k| {
            if k >= steps {
                0.0
            } else {
                (knots[k + 1] - knots[k]) * scale * band_fraction(beta[k] - x, beta[k + 1] - x, epsilon)
            }
        })
        .collect()
}

pub fn occupation_estimate(path: &InformationPath, x: f64, epsilon: f64) -> Result<LocalTimeCurve> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return domain(format!("occupation band half-width must be positive, got {epsilon}"));
    }
    let values = cumulate(occupation_increments(path, x, epsilon));
    Ok(LocalTimeCurve { x, grid: path.grid().clone(), values, estimator: Estimator::Occupation, epsilon: Some(epsilon) })
}

/// `|b - x| - |a - x| - sgn(a - x)(b - a)` with `sgn(0) = -1`, written so
/// that steps without a crossing give an exact zero.
fn tanaka_step(a: f64, b: f64, x: f64) -> f64 {
    let (a, b) = (a - x, b - x);
    if a > 0.0 {
        if b < 0.0 {
            -2.0 * b
        } else {
            0.0
        }
    } else if b > 0.0 {
        2.0 * b
    } else {
        0.0
    }
}

pub fn tanaka_increments(path: &InformationPath, x: f64) -> Vec<f64> {
    path.beta().windows(2).map(|w| tanaka_step(w[0], w[1], x)).collect()
}

/// Discrete Tanaka sum projected onto its running maximum.
pub fn tanaka_estimate(path: &InformationPath, x: f64) -> LocalTimeCurve {
    let mut values = cumulate(tanaka_increments(path, x));
    let mut m = f64::NEG_INFINITY;
    for v in values.iter_mut() {
        m = m.max(*v);
        *v = m;
    }
    LocalTimeCurve { x, grid: path.grid().clone(), values, estimator: Estimator::Tanaka, epsilon: None }
}

fn cumulate(incs: Vec<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(incs.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for d in incs {
        acc += d;
        out.push(acc);
    }
    out
}

/// Levels `j·δx` covering `[-(M + ε), M + ε]`.
pub fn level_grid(m: f64, epsilon: f64, spacing: f64) -> Vec<f64> {
    let n = ((m + epsilon) / spacing).ceil() as i64 + 1;
    (-n..=n).map(|j| j as f64 * spacing).collect()
}

/// `|∫_0^{t∧τ} h(s, β_s) ds - Σ_x δx ∫_0^t h(s, x) dL(s, x)|` with
/// left-endpoint sums in time and the spacing of `levels` as `δx`.
pub fn occupation_formula_residual<H: Fn(f64, f64) -> f64>(
    path: &InformationPath,
    h: H,
    t: f64,
    levels: &[f64],
    curves: &[LocalTimeCurve],
) -> Result<f64> {
    let (lhs, rhs) = occupation_formula_sides(path, h, t, levels, curves)?;
    Ok((lhs - rhs).abs())
}

/// Both sides of the occupation-time formula, as used by
/// [`occupation_formula_residual`].
pub fn occupation_formula_sides<H: Fn(f64, f64) -> f64>(
    path: &InformationPath,
    h: H,
    t: f64,
    levels: &[f64],
    curves: &[LocalTimeCurve],
) -> Result<(f64, f64)> {
    if levels.len() != curves.len() || levels.len() < 2 {
        return domain("need one curve per level and at least two levels");
    }
    let dx = levels[1] - levels[0];
    if !(dx > 0.0) {
        return domain("levels must be increasing");
    }
    let knots = path.knots();
    let beta = path.beta();
    let stop = t.min(path.tau());
    let mut lhs = 0.0;
    for k in 0..knots.len() - 1 {
        if knots[k] >= stop {
            break;
        }
        lhs += h(knots[k], beta[k]) * (knots[k + 1].min(stop) - knots[k]);
    }
    let rhs: f64 = levels.iter().zip(curves).map(|(&x, c)| dx * c.stieltjes(|s| h(s, x), t)).sum();
    Ok((lhs, rhs))
}
