//! Simulation, tuning and sizing analysis of a ball-screw feed axis.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod error;
pub mod freq;
pub mod metrics;
pub mod motion;
pub mod optim;
pub mod plant;
pub mod sim;
pub mod sweep;

mod serde_inf;

pub use controller::{ControlGains, ControllerState};
pub use error::{Error, Result};
pub use metrics::PerformanceReport;
pub use motion::{CommandTrajectory, MotionProfile};
pub use plant::{MechanicalParams, PlantState};
pub use sim::{SimConfig, Trace};
