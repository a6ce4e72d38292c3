//! Two-dimensional diffuse optical tomography: diffusion forward model,
//! adjoint Jacobians, Gauss-Newton/TV reconstruction, resolution and depth
//! sweeps, and a TCSPC acquisition simulator.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod inverse;
pub mod jacobian;
pub mod linalg;
pub mod medium;
pub mod mesh;
pub mod provenance;
pub mod tcspc;

pub use error::{Error, Result};
