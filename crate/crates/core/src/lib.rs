//! Simulation and verification engine for a default time whose market
//! information is a Brownian bridge of random length.
//!
//! The information process is `β_t = W_t - t / (τ ∨ t) W_{τ ∨ t}`. The
//! default indicator `H_t = 1{τ ≤ t}` has the continuous compensator
//!
//! ```text
//! K_t = ∫_0^{t∧τ} f(s) / D(s, 0) dL(s, 0),   D(s, x) = ∫_s^∞ φ_s(v, x) f(v) dv
//! ```
//!
//! where `L(·, 0)` is the local time of β at zero. The crate simulates β,
//! estimates its local time two ways, evaluates `K` and its approximation
//! `K^h`, and checks by Monte Carlo that `H - K` is a martingale.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod compensator;
pub mod config;
pub mod distributions;
pub mod ensemble;
pub mod error;
pub mod laws;
pub mod local_time;
pub mod path;
pub mod quadrature;

pub use distributions::DefaultDistribution;
pub use error::{Error, Result};
pub use laws::ModelContext;
pub use quadrature::QuadratureSpec;
