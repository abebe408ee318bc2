//! Strict-feedback forms of exactly controllable heterodirectional
//! hyperbolic systems and of PDE-ODE cascades.
//!
//! The crate computes the Volterra, Fredholm and ODE-state transformations
//! that bring a linear hyperbolic system into a cascade ordered from the
//! input towards the unactuated boundary, simulates every form with a common
//! upwind scheme and checks the results numerically.

pub mod artstein;
pub mod cli;
pub mod config;
pub mod ctrl_algebra;
pub mod error;
pub mod export;
pub mod fredholm;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod verify;
pub mod volterra;

pub use error::{Error, Result};
