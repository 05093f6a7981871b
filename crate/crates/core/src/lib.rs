//! Modelling, wrench-feasibility analysis, control and simulation of
//! variable-length aerial cable towed systems: teams of quadrotors that carry a
//! payload through cables wound on on-board winches.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: parameters, states, frames and the system-description format
//! - [`kinematics`]: loop closure and first/second-order kinematic models
//! - [`dynamics`]: tensions, winch and quadrotor balances, inverse dynamics, mixing
//! - [`wrench`]: propeller/thrust/tension/wrench spaces, capacity margin, manipulability, sweeps
//! - [`control`]: feedback-linearising thrust law, winch loop, attitude law
//! - [`sim`]: quintic trajectories, constrained plant, closed-loop scenarios
//! - [`report`]: CSV/JSON emission of sweep and scenario results
//! - [`check`]: randomized model consistency suite

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN.

pub mod check;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod kinematics;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod report;
pub mod sim;
pub mod wrench;

pub use error::{Error, Result};
pub use model::{
    CableCoord, Composite, JointState, PayloadParams, PayloadState, Pose, QuadrotorParams, QuadrotorState, SystemDescription,
    SystemSpec, TaskState, WinchParams, WinchState,
};
