//! Learning bilinear Koopman surrogates of control-affine plants and controlling them with
//! constraint-tightened model predictive control.

pub mod baseline;
pub mod dictionary;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mpc;
pub mod safedmd;
pub mod sets;
pub mod terminal;

pub use error::{Error, Result};
