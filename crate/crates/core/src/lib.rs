//! Receding-horizon nullspace control allocation for an omnidirectional multirotor
//! with eight fixed, tilted rotors and asymmetric motor dynamics.
//!
//! The crate is split along the closed loop:
//! - [`dynamics`]: rigid body on SO(3) and its integrator.
//! - [`allocation`]: allocation matrix, nullspace and the motor-bounds nullspace QP (MBNO).
//! - [`motors`]: asymmetric first-order motor lag.
//! - [`controller`]: septic reference and the wrench controller.
//! - [`cilqr`]: the closed-loop step map and the constrained iLQR over nullspace inputs.
//! - [`harness`]: configuration, experiment runner, metrics and outputs.

use nalgebra::SVector;

pub mod allocation;
pub mod cilqr;
pub mod controller;
pub mod dynamics;
mod error;
pub mod harness;
pub mod motors;

pub use error::{Error, Result};

pub const N_ROTORS: usize = 8;

/// One value per rotor, N.
pub type Thrusts = SVector<f64, N_ROTORS>;
