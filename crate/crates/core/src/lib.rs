//! Solver and diagnostics for the doubly nonlinear parabolic system
//! `D psi(v_t) = div DF(Dv)` on a box with zero boundary values.

pub mod commands;
pub mod energy;
pub mod error;
pub mod fit;
pub mod grid;
pub mod io;
pub mod potentials;
pub mod regularity;
pub mod stepper;
pub mod validation;

pub use error::{Error, Result};
