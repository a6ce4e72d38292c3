//! Steady-state (continuous-wave) solves.

use super::fem::FemSystem;
use super::layout::OptodeVector;
use crate::error::{Error, Result};
use crate::linalg::norm2;

/// Largest accepted relative residual `‖Aφ − q‖ / ‖q‖`.
pub const CW_RESIDUAL_TOL: f64 = 1e-8;

/// Solves `(K + M_a + B) φ = q` for the nodal fluence.
pub fn solve_cw(system: &FemSystem, source: &OptodeVector) -> Result<Vec<f64>> {
    let q = source.dense(system.mesh().node_count());
    solve_cw_dense(system, &q)
}

/// Same as [`solve_cw`] with an arbitrary dense right-hand side.
pub fn solve_cw_dense(system: &FemSystem, q: &[f64]) -> Result<Vec<f64>> {
    let factor = system.steady_factor()?;
    let phi = factor.solve(q);
    let mut r = system.system().mul_vec(&phi);
    for (ri, qi) in r.iter_mut().zip(q) {
        *ri -= qi;
    }
    let residual = norm2(&r) / norm2(q).max(f64::MIN_POSITIVE);
    if !(residual <= CW_RESIDUAL_TOL) {
        return Err(Error::SolverFailure {
            reason: "steady-state residual above tolerance".into(),
            residual,
        });
    }
    Ok(phi)
}

/// Detector exitance `w·φ / (2A)` for each detector.
pub fn cw_readout(system: &FemSystem, phi: &[f64], detectors: &[OptodeVector]) -> Vec<f64> {
    let scale = 1.0 / (2.0 * system.boundary_factor());
    detectors.iter().map(|d| scale * d.dot(phi)).collect()
}
