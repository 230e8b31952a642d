//! Constrained minimum-variance state estimation via estimation/control
//! duality.
//!
//! Full-information and moving-horizon estimators are posed as optimal
//! control problems over gain sequences; polyhedral state constraints become
//! linear constraints on those gains and the resulting QPs are solved with a
//! dual active-set method.

pub mod dual;
pub mod error;
pub mod estimators;
pub mod kalman;
pub mod linalg;
pub mod memhe;
pub mod model;
pub mod qp;
pub mod stability;

pub use error::{Error, ModelMatrix, Result};
pub use model::{PolyhedralSet, SystemModel, ToleranceConfig, ValidatedModel};
