//! Learning-based quadrotor landing control: rigid-body simulation with a
//! synthetic ground-effect field, a spectrally normalized disturbance network,
//! a composite-variable tracking controller with fixed-point allocation, and a
//! closed-loop experiment harness.

// `!(x > 0.0)` is the NaN-rejecting form of validation checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aero;
pub mod config;
pub mod control;
pub mod error;
pub mod learn;
pub mod sim;
pub mod vehicle;

pub use config::RunConfig;
pub use control::{Controller, ControllerGains, ForceModel, OracleModel, SharedModel, ZeroModel};
pub use error::{Error, Result};
pub use learn::{SpecNormNet, TrainConfig, TrainingSet};
pub use sim::{evaluate, run_scenario, FlightLog, Metrics, Scenario};
pub use vehicle::{RotorCommand, Vec3, VehicleParams, VehicleState};
