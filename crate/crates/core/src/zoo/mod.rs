//! Ready-made models and a numerical assumption probe.

mod cbo;
mod eks;
mod linear;
mod probe;

pub use cbo::{
    cbo_bilevel_model, cubic_confinement, CboLaw, CboModel, CboParams, Gradient, LowerCost,
    LowerCostSpec, UpperCost, UpperCostSpec,
};
pub use eks::{eks_model, EksLaw, EksModel};
pub use linear::{linear_benchmark_model, LinearModel};
pub use probe::{assumption_probe, FittedConstants, ProbeReport, ProbeSampler};
