//! Compensator of the default indicator along a path, its Laplacian
//! approximation `K^h`, and the smoothing kernel `q`.
//!
//! ```text
//! K_t   = Σ_{s_k ≤ t∧τ} f(s_k) g(s_k, 0) ΔL(s_k, 0)
//! K^h_t = Σ_{s_k ≤ t, s_k < τ} Δ_k h^{-1} P(τ ≤ s_k + h | β_{s_k})
//! ```

use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::laws::{gaussian_density, ModelContext};
use crate::local_time::LocalTimeCurve;
use crate::path::{InformationPath, TimeGrid};
use crate::quadrature::{integrate_finite_with_breaks, LowerEndpoint, QuadratureSpec};

/// Per-path processes `H`, `G = 1 - H`, `K` and optionally `K^h`.
#[derive(Debug, Clone)]
pub struct CompensatorCurve {
    pub grid: TimeGrid,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub k: Vec<f64>,
    pub kh: Vec<(f64, Vec<f64>)>,
}

impl CompensatorCurve {
    pub fn new(path: &InformationPath, k: Vec<f64>, kh: Vec<(f64, Vec<f64>)>) -> Self {
        let h: Vec<f64> = (0..path.knots().len()).map(|i| if path.in_default(i) { 1.0 } else { 0.0 }).collect();
        let g = h.iter().map(|v| 1.0 - v).collect();
        Self { grid: path.grid().clone(), h, g, k, kh }
    }
}

/// Normalizer used in the zero-level weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalizer {
    /// `D(s, 0)`.
    Point,
    /// `D(s, ·)` averaged over `[-ε, ε]`, matched to the occupation kernel.
    Band(f64),
}

/// Weights `f(s_k) / D(s_k, 0)` on the knots of a uniform base grid, with
/// the first knot evaluated at `s = dt` and zero weight from `t1` on.
#[derive(Debug, Clone)]
pub struct ZeroLevelWeights {
    grid: TimeGrid,
    normalizer: Normalizer,
    values: Vec<f64>,
}

impl ZeroLevelWeights {
    pub fn new(ctx: &ModelContext, grid: &TimeGrid) -> Result<Self> {
        Self::with_normalizer(ctx, grid, Normalizer::Point)
    }

    pub fn with_normalizer(ctx: &ModelContext, grid: &TimeGrid, normalizer: Normalizer) -> Result<Self> {
        let knots = grid.knots();
        let t1 = ctx.t1();
        let values = (0..knots.len())
            .into_par_iter()
            .map(|k| {
                let s = if k == 0 { knots[1] } else { knots[k] };
                if s >= t1 {
                    return Ok(0.0);
                }
                let d = match normalizer {
                    Normalizer::Point => ctx.normalizer_d(s, 0.0)?,
                    Normalizer::Band(eps) => ctx.band_normalizer(s, eps)?,
                };
                Ok(ctx.dist.density(s) / d)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { grid: grid.clone(), normalizer, values })
    }

    pub fn normalizer(&self) -> Normalizer {
        self.normalizer
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `K` on the path's knots from the increments of a level-zero local time.
    pub fn compensator(&self, path: &InformationPath, lt: &LocalTimeCurve) -> Result<Vec<f64>> {
        if lt.x != 0.0 || lt.values.len() != path.knots().len() {
            return domain("compensator needs a level-zero local time on the path grid");
        }
        if path.grid().dt() != self.grid.dt() || path.grid().t_max() != self.grid.t_max() {
            return domain("weight table built for a different grid");
        }
        let steps = path.alive_len().min(path.knots().len() - 1);
        let mut out = Vec::with_capacity(lt.values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for k in 0..lt.values.len() - 1 {
            if k < steps {
                // knots before τ coincide with base knots
                acc += self.values[k] * (lt.values[k + 1] - lt.values[k]);
            }
            out.push(acc);
        }
        Ok(out)
    }
}

/// `K` for a single path; builds the weight table for its grid.
pub fn compensator_k(path: &InformationPath, lt: &LocalTimeCurve, ctx: &ModelContext) -> Result<Vec<f64>> {
    let base = TimeGrid::uniform(path.grid().dt(), path.grid().t_max())?;
    ZeroLevelWeights::new(ctx, &base)?.compensator(path, lt)
}

/// `K^h` on the path's knots.
pub fn compensator_kh(path: &InformationPath, h: f64, ctx: &ModelContext) -> Result<Vec<f64>> {
    Ok(compensator_kh_multi(path, &[h], ctx, f64::INFINITY)?.remove(0))
}

/// `K^h` for several lags at once, on knots `≤ t_stop`.
pub fn compensator_kh_multi(path: &InformationPath, hs: &[f64], ctx: &ModelContext, t_stop: f64) -> Result<Vec<Vec<f64>>> {
    if hs.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return domain("lags must be positive");
    }
    let knots = path.knots();
    let beta = path.beta();
    let last = path.grid().index_at(t_stop);
    let t1 = ctx.t1();
    let mut out: Vec<Vec<f64>> = hs.iter().map(|_| vec![0.0; last + 1]).collect();
    let mut acc = vec![0.0; hs.len()];
    for k in 0..last {
        let s = knots[k];
        let dk = knots[k + 1] - s;
        if s < path.tau() && s < t1 {
            let masses = if k == 0 {
                // the posterior at time zero is the prior
                hs.iter().map(|&h| ctx.dist.cdf(h)).collect()
            } else {
                ctx.window_masses(s, beta[k], hs)?
            };
            for (a, (m, &h)) in acc.iter_mut().zip(masses.iter().zip(hs)) {
                *a += dk * m / h;
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            o[k + 1] = *a;
        }
    }
    Ok(out)
}

/// `q(h, x) = h^{-1} ∫_0^h p(u, x, 0) du`, a probability density in `x`.
pub fn laplacian_kernel_q(h: f64, x: f64) -> Result<f64> {
    laplacian_kernel_q_with(h, x, &QuadratureSpec::default())
}

pub fn laplacian_kernel_q_with(h: f64, x: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(h > 0.0 && h <= 1.0) {
        return domain(format!("kernel lag must lie in (0, 1], got {h}"));
    }
    if !x.is_finite() {
        return domain("kernel argument must be finite");
    }
    let breaks: Vec<f64> = [x * x, 0.25 * x * x].into_iter().filter(|&b| b > 0.0 && b < h).collect();
    let est = integrate_finite_with_breaks(
        |u| if u > 0.0 { gaussian_density(u, x, 0.0).unwrap_or(0.0) } else { 0.0 },
        0.0,
        h,
        LowerEndpoint::InvSqrt,
        &breaks,
        spec,
    )?;
    Ok(est.value / h)
}
