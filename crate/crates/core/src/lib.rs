//! Nonlinear model reduction of swing-equation power grid models.
//!
//! The oscillator network is lifted to an exactly quadratic system in
//! `[delta; omega; sin(delta); cos(delta)]`, shifted to a zero initial state,
//! and reduced by balanced truncation with Gramians approximated by a
//! truncated, low-rank series of Lyapunov solves.

pub mod error;
pub mod gramians;
pub mod lift;
pub mod lyap;
pub mod netparams;
pub mod pipeline;
pub mod reduce;
pub mod sim;
pub mod swing;

pub use error::{Error, Result};
