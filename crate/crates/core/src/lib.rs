//! Particle methods for two-time-scale McKean-Vlasov systems.
//!
//! The slow component `X` lives in `R^n`, the fast component `Y` in `R^m`,
//! and both coefficients may depend on the time-marginal laws of `X` and `Y`.
//! Laws are replaced by the empirical measures of `N` paired particles.
//!
//! The crate is organised bottom-up:
//!
//! * [`ensemble`], [`rng`]: particle storage, time-scale parameters, per-particle noise streams.
//! * [`model`], [`sde`]: coefficient trait and the (optionally tamed) Euler-Maruyama engine.
//! * [`measures`]: moments, Wasserstein-2, Gibbs-weighted means, covariance and PSD roots.
//! * [`zoo`]: linear benchmark, bi-level consensus-based optimisation, ensemble Kalman sampler.
//! * [`frozen`]: frozen fast dynamics, invariant measures, lifted pairs, averaged drift.
//! * [`averaging`]: averaged ODE and the averaging-error / convergence-rate experiment.
//! * [`ldp`]: effective diffusion `Q2`, the explicit rate functional, controlled runs, occupation measures.
//! * [`experiment`]: JSON-configured batch runs backing the `mvscale` binary.

pub mod averaging;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod frozen;
pub mod ldp;
pub mod measures;
pub mod model;
pub mod path;
pub mod rng;
pub mod sde;
pub mod zoo;

pub use ensemble::{EmpiricalMeasure, Ensemble, TimeScales};
pub use error::{Error, Result};
pub use model::{AssumptionParams, Dims, FnModel, MeanFieldModel};
pub use path::PathGrid;
pub use sde::{SimConfig, Taming};
