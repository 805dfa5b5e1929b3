//! Simulation and control library for a six-axis maglev vibration isolation
//! platform.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: domain types, the 6x8 actuation mixing matrix and rigid-body
//!   kinematics.
//! - [`field`]: position-dependent Lorentz actuator gain, calibration grids
//!   and polynomial surface fitting.
//! - [`design`]: actuator sizing objectives, constraints and a seeded global
//!   search.
//! - [`allocation`]: minimum-energy and minimax distribution of a wrench over
//!   eight actuators, plus failure reconfiguration.
//! - [`plant`]: cable wrench, Newton-Euler equations of motion, base
//!   excitation and a fixed-step RK4 integrator.
//! - [`sensing`]: PSD geometry, accelerometers and converter quantization.
//! - [`control`]: discrete I-PD loops with band-pass acceleration feedback,
//!   feedback linearization and analytic loop metrics.
//! - [`ident`]: recursive least squares estimation of the cross-coupling
//!   matrix and its rectifier.
//! - [`harness`]: configuration, closed-loop simulation, spectral analysis
//!   and the scenario runner used by the `mvip` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod control;
pub mod design;
pub mod field;
pub mod harness;
pub mod ident;
mod lp;
pub mod model;
pub mod plant;
pub mod sensing;

mod error;

pub use error::{Error, Result};
