//! Dynamic user equilibrium on time-dependent networks.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`):
//!
//! * [`function_space`]: time grids, sampled functions, `L²` and weighted norms.
//! * [`state_operator`]: Picard iteration for `ẋ = f(x, u, t)` with a-posteriori bounds.
//! * [`sensitivity`]: Gateaux derivatives of the state operator.
//! * [`network`]: network files and validation.
//! * [`delay`]: path delays and effective delays.
//! * [`equilibrium`]: projection solver and equilibrium certificate.
//!
//! Network files hold `f64` data and are converted at the boundary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod delay;
pub mod equilibrium;
pub mod error;
pub mod function_space;
mod linalg;
pub mod network;
pub mod scalar;
pub mod sensitivity;
pub mod state_operator;
pub mod systems;

pub use delay::{
    effective_delay, effective_delays, ArrivalPenalty, DelayField, DelayModel, DelayModelKind,
    InstantaneousModel, PathFlowProfile, WholeLinkModel,
};
pub use equilibrium::{
    certify, cumulative_state, project, solve_due, vi_gap, EquilibriumReport, FeasibleSet,
    SolverConfig, StepRule, Termination,
};
pub use error::{Error, Result};
pub use function_space::{
    inner_product, l2_norm, sup_norm, weighted_norm, Interpolation, SampledFunction, TimeGrid,
};
pub use network::NetworkSpec;
pub use scalar::Scalar;
pub use sensitivity::{solve_variational, SensitivityResult};
pub use state_operator::{picard_solve, PicardOptions, PicardReport};
pub use systems::{Bounds, OdeSystem};

pub type TimeGrid64 = TimeGrid<f64>;
pub type TimeGrid32 = TimeGrid<f32>;
pub type SampledFunction64 = SampledFunction<f64>;
pub type SampledFunction32 = SampledFunction<f32>;
pub type PathFlowProfile64 = PathFlowProfile<f64>;
pub type PathFlowProfile32 = PathFlowProfile<f32>;
pub type DelayField64 = DelayField<f64>;
pub type FeasibleSet64 = FeasibleSet<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type EquilibriumReport64 = EquilibriumReport<f64>;
pub type PicardReport64 = PicardReport<f64>;
