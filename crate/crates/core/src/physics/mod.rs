//! Rigid-body settling simulator for primitive shapes and the placement
//! stability checker.

pub mod body;
pub mod collision;
pub mod shape;
pub mod stability;
pub mod world;

pub use body::{BodyState, RigidBody};
pub use shape::{Shape, ShapeKind};
pub use stability::{
    accelerations, check_stability, settle, SettleOptions, StabilityMonitor, StabilityReport, StabilityThresholds,
    Trajectory, TrajectorySample,
};
pub use world::{BodyId, SolverParams, World, CONTACT_TOLERANCE, DEFAULT_DT, GRAVITY};
