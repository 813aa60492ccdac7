//! Simulation of tendon-driven catheters as coupled Cosserat rods.
//!
//! The numerical core is generic over the scalar type; the aliases below fix
//! it to `f64`, which is what the scenario runner uses.

pub mod banded;
pub mod cantilever;
pub mod coupling;
pub mod error;
pub mod frame;
pub mod implicit;
pub mod metrics;
pub mod plot;
pub mod rod;
pub mod scalar;
pub mod scenario;
pub mod sparsity;

pub use error::{Error, Result};
pub use scalar::{Real, Vec3, Vec4};

pub type Quat = frame::Quaternion<f64>;
pub type RodParams = rod::RodParameters<f64>;
pub type Rod = rod::RodState<f64>;
pub type Pose = rod::BasePose<f64>;
pub type Boundary = rod::BoundaryConditions<f64>;
pub type Integrator = implicit::IntegratorConfig<f64>;
pub type SingleRod = implicit::RodSystem<f64>;
pub type Coupling = coupling::CouplingConfig<f64>;
pub type Coupled = coupling::CoupledSystem<f64>;
pub type Point = Vec3<f64>;
