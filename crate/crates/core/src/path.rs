//! Discretized realizations of `(τ, β)` and per-path derived processes.
//!
//! Two constructions are provided. The direct one draws τ, simulates a
//! Brownian motion on a grid refined by τ and applies
//! `β_t = W_t - t / (τ ∨ t) W_{τ ∨ t}`. The bridge-conditional one fixes the
//! length `r` and steps through the Gaussian bridge transitions. Both encode
//! the default state as a literal zero at every knot `t ≥ τ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain, Result};
use crate::laws::{DriftTable, ModelContext};

/// Knots `0 = t_0 < t_1 < ... < t_n = t_max` with gaps at most `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_max: f64,
    dt: f64,
    knots: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid `k·dt`, closed by `t_max` when it is not a multiple of `dt`.
    pub fn uniform(dt: f64, t_max: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return domain(format!("grid step must be positive, got {dt}"));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return domain(format!("grid horizon must be positive, got {t_max}"));
        }
        let n = ((t_max / dt) - 1e-9).ceil().max(1.0) as usize;
        let mut knots: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        knots.push(t_max);
        Ok(Self { t_max, dt, knots })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Index of the last knot `≤ t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.knots.partition_point(|&k| k <= t).saturating_sub(1)
    }

    /// Inserts `tau` as a knot. Returns the refined grid and the index of the
    /// knot equal to `tau`, or `None` when `tau > t_max`.
    pub fn refined(&self, tau: f64) -> (TimeGrid, Option<usize>) {
        if !(tau <= self.t_max) {
            return (self.clone(), None);
        }
        let pos = self.knots.partition_point(|&k| k < tau);
        if self.knots[pos] == tau {
            return (self.clone(), Some(pos));
        }
        let mut knots = Vec::with_capacity(self.knots.len() + 1);
        knots.extend_from_slice(&self.knots[..pos]);
        knots.push(tau);
        knots.extend_from_slice(&self.knots[pos..]);
        (TimeGrid { t_max: self.t_max, dt: self.dt, knots }, Some(pos))
    }
}

/// Which sampler produced a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Construction {
    Direct,
    BridgeConditional,
}

/// Counter-based stream: one independent ChaCha8 stream per path index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStream {
    pub master_seed: u64,
    pub path_index: u64,
}

impl RandomStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self { master_seed, path_index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.path_index);
        rng
    }
}

/// One realization of `(τ, β)` on a grid that contains τ when `τ ≤ t_max`.
#[derive(Debug, Clone)]
pub struct InformationPath {
    tau: f64,
    grid: TimeGrid,
    beta: Vec<f64>,
    tau_index: Option<usize>,
    construction: Construction,
}

impl InformationPath {
    /// Wraps given values without sampling. `beta` must have one entry per
    /// knot of `grid`; the knot equal to `tau`, if any, is located.
    pub fn from_values(tau: f64, grid: TimeGrid, beta: Vec<f64>, construction: Construction) -> Result<Self> {
        if beta.len() != grid.len() {
            return domain(format!("{} values for {} knots", beta.len(), grid.len()));
        }
        let tau_index = grid.knots().iter().position(|&t| t == tau);
        if tau <= grid.t_max() && tau_index.is_none() {
            return domain("tau inside the horizon must be a grid knot");
        }
        Ok(Self { tau, grid, beta, tau_index, construction })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn knots(&self) -> &[f64] {
        self.grid.knots()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn construction(&self) -> Construction {
        self.construction
    }

    /// Index of the knot equal to τ, `None` if τ lies beyond the grid.
    pub fn tau_index(&self) -> Option<usize> {
        self.tau_index
    }

    /// Number of leading knots strictly before τ.
    pub fn alive_len(&self) -> usize {
        self.tau_index.unwrap_or(self.grid.len())
    }

    pub fn in_default(&self, k: usize) -> bool {
        self.grid.knots()[k] >= self.tau
    }

    /// Value at the last knot `≤ t`.
    pub fn beta_at(&self, t: f64) -> f64 {
        self.beta[self.grid.index_at(t)]
    }

    /// Keeps every `factor`-th knot of the underlying uniform grid plus τ.
    /// For a direct path this is the same Brownian motion seen on a grid of
    /// step `factor·dt`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return domain("coarsening factor must be positive");
        }
        let coarse = TimeGrid::uniform(self.grid.dt() * factor as f64, self.grid.t_max())?;
        let (grid, tau_index) = coarse.refined(self.tau);
        let beta = grid
            .knots()
            .iter()
            .map(|&t| {
                if t >= self.tau {
                    return 0.0;
                }
                self.beta[self.grid.index_at(t + 1e-9 * self.grid.dt())]
            })
            .collect();
        Ok(Self { tau: self.tau, grid, beta, tau_index, construction: self.construction })
    }
}

/// Draws τ from the model law and builds β from a Brownian motion on the
/// τ-refined grid.
pub fn sample_path_direct(ctx: &ModelContext, grid: &TimeGrid, stream: RandomStream) -> InformationPath {
    let mut rng = stream.rng();
    let tau = ctx.dist.sample_tau(&mut rng);
    let (grid, tau_index) = grid.refined(tau);
    let knots = grid.knots();
    let mut w = Vec::with_capacity(knots.len());
    w.push(0.0);
    for k in 1..knots.len() {
        let z: f64 = StandardNormal.sample(&mut rng);
        w.push(w[k - 1] + (knots[k] - knots[k - 1]).sqrt() * z);
    }
    let w_tau = match tau_index {
        Some(i) => w[i],
        None => {
            let z: f64 = StandardNormal.sample(&mut rng);
            w[knots.len() - 1] + (tau - grid.t_max()).sqrt() * z
        }
    };
    let alive = tau_index.unwrap_or(knots.len());
    let beta = (0..knots.len())
        .map(|k| if k < alive { w[k] - knots[k] / tau * w_tau } else { 0.0 })
        .collect();
    InformationPath { tau, grid, beta, tau_index, construction: Construction::Direct }
}

/// Samples a bridge of fixed length `r` by sequential Gaussian transitions.
pub fn sample_path_given_tau(r: f64, grid: &TimeGrid, stream: RandomStream) -> Result<InformationPath> {
    if !(r > 0.0 && r.is_finite()) {
        return domain(format!("bridge length must be positive, got {r}"));
    }
    let mut rng = stream.rng();
    let (grid, tau_index) = grid.refined(r);
    let knots = grid.knots();
    let mut beta = vec![0.0; knots.len()];
    for k in 0..knots.len() - 1 {
        let (t0, t1) = (knots[k], knots[k + 1]);
        if t1 >= r {
            break;
        }
        let mean = beta[k] * (r - t1) / (r - t0);
        let var = (t1 - t0) * (r - t1) / (r - t0);
        let z: f64 = StandardNormal.sample(&mut rng);
        beta[k + 1] = mean + var.sqrt() * z;
    }
    Ok(InformationPath { tau: r, grid, beta, tau_index, construction: Construction::BridgeConditional })
}

/// Running sum of squared increments of β.
pub fn quadratic_variation(path: &InformationPath) -> Vec<f64> {
    running_qv(path.beta())
}

pub(crate) fn running_qv(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in x.windows(2) {
        let d = w[1] - w[0];
        acc += d * d;
        out.push(acc);
    }
    out
}

/// `M_t = max_{t_k ≤ t} |β_{t_k}|`.
pub fn running_max_abs(path: &InformationPath) -> Vec<f64> {
    let mut m: f64 = 0.0;
    path.beta()
        .iter()
        .map(|b| {
            m = m.max(b.abs());
            m
        })
        .collect()
}

/// Source of the drift `u(s, x)`.
pub trait Drift: Sync {
    fn drift(&self, s: f64, x: f64) -> Result<f64>;
}

impl Drift for ModelContext {
    fn drift(&self, s: f64, x: f64) -> Result<f64> {
        self.drift_u(s, x)
    }
}

impl Drift for DriftTable {
    fn drift(&self, s: f64, x: f64) -> Result<f64> {
        self.eval(s, x)
    }
}

/// `b_t = β_t + ∫_0^{t∧τ} u(s, β_s) ds` by a left-endpoint sum that starts
/// at the first positive knot and stops one step short of τ.
pub fn recover_b<D: Drift + ?Sized>(path: &InformationPath, drift: &D) -> Result<Vec<f64>> {
    recover_b_until(path, drift, f64::INFINITY)
}

/// As [`recover_b`], evaluated only on knots `≤ t_stop`.
pub fn recover_b_until<D: Drift + ?Sized>(path: &InformationPath, drift: &D, t_stop: f64) -> Result<Vec<f64>> {
    let knots = path.knots();
    let beta = path.beta();
    let last = path.grid.index_at(t_stop);
    // drift steps j with t_{j+1} strictly before τ
    let drift_end = path.tau_index.map(|i| i.saturating_sub(1)).unwrap_or(knots.len() - 1);
    let mut out = Vec::with_capacity(last + 1);
    let mut integral = 0.0;
    out.push(beta[0]);
    for k in 1..=last {
        let j = k - 1;
        if j >= 1 && j < drift_end {
            integral += drift.drift(knots[j], beta[j])? * (knots[k] - knots[j]);
        }
        out.push(beta[k] + integral);
    }
    Ok(out)
}
