//! Battery-pack simulation and optimal charging.
//!
//! A reduced electrochemical-thermal cell model, a series/parallel pack
//! DAE, forward sensitivities along nominal trajectories, an ADMM quadratic
//! programming solver and three charging controllers (sensitivity-based
//! linear MPC, nonlinear MPC by sequential quadratic programming, CC-CV).

pub mod cell_model;
pub mod controllers;
pub mod dae;
pub mod error;
pub mod harness;
pub mod pack_model;
pub mod qp;
pub mod sensitivity;
pub mod toy_systems;

pub use error::{DaeError, Error, ModelError, QpError, Result};
