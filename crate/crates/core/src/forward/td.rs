//! Time-domain diffusion: θ-scheme time stepping of
//! `(1/v) M φ' + (K + M_a + B) φ = q δ(t)`.
//!
//! The time term uses the lumped mass matrix. The impulse enters as the
//! initial condition `φ⁰ = v M⁻¹ q`; the first `startup_steps` steps are
//! backward Euler to damp the stiff modes of that impulse, the rest are
//! Crank–Nicolson. Detector readouts are trapezoidal time integrals of the
//! exitance over each bin.

use serde::{Deserialize, Serialize};

use super::fem::FemSystem;
use super::layout::OptodeVector;
use crate::error::{Error, Result};
use crate::linalg::{norm2, LdlFactor};

fn default_startup() -> usize {
    2
}

/// Time discretization and detector gating, in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
    pub bin_width: f64,
    pub n_bins: usize,
    /// Backward-Euler steps before switching to Crank–Nicolson.
    #[serde(default = "default_startup")]
    pub startup_steps: usize,
}

impl Default for TimeGrid {
    /// Seven 640 ps gates covering 4.48 ns at a 20 ps step.
    fn default() -> Self {
        Self {
            dt: 20.0,
            n_steps: 224,
            bin_width: 640.0,
            n_bins: 7,
            startup_steps: default_startup(),
        }
    }
}

impl TimeGrid {
    /// Same step and gates as `self`, simulated over at least `window` ps.
    pub fn with_window(&self, window: f64) -> Self {
        let n_steps = (window / self.dt).ceil() as usize;
        Self {
            n_steps: n_steps.max(self.n_steps),
            ..*self
        }
    }

    /// A single gate spanning the whole window (for moment checks).
    pub fn single_gate(dt: f64, window: f64) -> Self {
        let n = (window / dt).round() as usize;
        Self {
            dt,
            n_steps: n,
            bin_width: n as f64 * dt,
            n_bins: 1,
            startup_steps: default_startup(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.bin_width > 0.0 && self.n_bins > 0 && self.n_steps > 0) {
            return Err(Error::InvalidTimeGrid(format!("non-positive entry in {self:?}")));
        }
        let ratio = self.bin_width / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(Error::InvalidTimeGrid(format!(
                "step {} ps does not divide bin width {} ps",
                self.dt, self.bin_width
            )));
        }
        if self.n_bins * self.steps_per_bin() > self.n_steps {
            return Err(Error::InvalidTimeGrid(format!(
                "{} bins of {} ps exceed the {} ps window",
                self.n_bins,
                self.bin_width,
                self.n_steps as f64 * self.dt
            )));
        }
        Ok(())
    }

    pub fn steps_per_bin(&self) -> usize {
        (self.bin_width / self.dt).round() as usize
    }

    /// Last step index that contributes to any bin.
    pub fn last_gated_step(&self) -> usize {
        self.n_bins * self.steps_per_bin()
    }

    /// Implicitness of the step that produces `φⁿ` (n ≥ 1).
    pub fn theta(&self, n: usize) -> f64 {
        if n <= self.startup_steps {
            1.0
        } else {
            0.5
        }
    }

    /// Trapezoid weights `(step, weight)` for bin `b`.
    pub fn bin_weights(&self, b: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.steps_per_bin();
        let (start, end) = (b * s, (b + 1) * s);
        (start..=end).map(move |n| {
            let w = if n == start || n == end { 0.5 } else { 1.0 };
            (n, w * self.dt)
        })
    }

    pub fn bin_start(&self, b: usize) -> f64 {
        b as f64 * self.bin_width
    }
}

/// Factored time-stepping operators for one system and grid.
pub struct TdStepper<'a> {
    system: &'a FemSystem,
    grid: TimeGrid,
    /// Lumped mass over `v·dt`.
    shift: Vec<f64>,
    crank_nicolson: LdlFactor,
    backward_euler: Option<LdlFactor>,
}

impl<'a> TdStepper<'a> {
    pub fn new(system: &'a FemSystem, grid: &TimeGrid) -> Result<Self> {
        grid.validate()?;
        let scale = 1.0 / (system.speed() * grid.dt);
        let shift: Vec<f64> = system.lumped_mass().iter().map(|m| m * scale).collect();
        let crank_nicolson = system.factor_shifted(&shift, 0.5)?;
        let backward_euler = if grid.startup_steps > 0 {
            Some(system.factor_shifted(&shift, 1.0)?)
        } else {
            None
        };
        Ok(Self {
            system,
            grid: *grid,
            shift,
            crank_nicolson,
            backward_euler,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn system(&self) -> &FemSystem {
        self.system
    }

    pub fn n(&self) -> usize {
        self.shift.len()
    }

    /// `M_L / (v dt)` as a diagonal.
    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    /// `φ⁰ = v M_L⁻¹ q`.
    pub fn initial(&self, q: &OptodeVector) -> Vec<f64> {
        let mut phi = vec![0.0; self.n()];
        let v = self.system.speed();
        for k in 0..3 {
            let i = q.nodes[k];
            phi[i] += v * q.weights[k] / self.system.lumped_mass()[i];
        }
        phi
    }

    /// `out = (S − (1 − θ) A) x` with `S = M_L / (v dt)`.
    pub fn apply_explicit(&self, theta: f64, x: &[f64], out: &mut [f64]) {
        if theta == 1.0 {
            for i in 0..x.len() {
                out[i] = self.shift[i] * x[i];
            }
            return;
        }
        self.system.system().mul_vec_into(x, out);
        let c = 1.0 - theta;
        for i in 0..x.len() {
            out[i] = self.shift[i] * x[i] - c * out[i];
        }
    }

    /// Solves `(S + θ A) x = b` in place.
    pub fn solve_implicit(&self, theta: f64, b: &mut [f64], work: &mut [f64]) {
        let f = if theta == 1.0 {
            self.backward_euler.as_ref().expect("no backward-Euler factor")
        } else {
            &self.crank_nicolson
        };
        f.solve_in_place(b, work);
    }

    /// Runs `n_steps` steps from the impulse of `q`, calling
    /// `visit(n, φⁿ, φⁿ⁻¹)` for every step n ≥ 1.
    pub fn propagate(
        &self,
        q: &OptodeVector,
        n_steps: usize,
        mut visit: impl FnMut(usize, &[f64], &[f64]),
    ) -> Result<Vec<f64>> {
        let n = self.n();
        let mut prev = self.initial(q);
        let mut next = vec![0.0; n];
        let mut work = vec![0.0; n];
        let mut prev_norm = norm2(&prev);
        for step in 1..=n_steps {
            let theta = self.grid.theta(step);
            self.apply_explicit(theta, &prev, &mut next);
            self.solve_implicit(theta, &mut next, &mut work);
            let norm = norm2(&next);
            if !norm.is_finite() || norm > 10.0 * prev_norm {
                return Err(Error::Unstable {
                    step,
                    growth: norm / prev_norm,
                });
            }
            prev_norm = norm;
            visit(step, &next, &prev);
            std::mem::swap(&mut prev, &mut next);
        }
        Ok(prev)
    }
}

/// Detector signals for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSolution {
    /// Gated intensity, `[detector][bin]`.
    pub bins: Vec<Vec<f64>>,
    /// Exitance at every step 0..=n_steps, `[detector][step]`.
    pub trace: Vec<Vec<f64>>,
}

impl TdSolution {
    /// Mean arrival time (ps) of the exitance trace for detector `d`.
    pub fn mean_time(&self, d: usize, dt: f64) -> f64 {
        let trace = &self.trace[d];
        let last = trace.len() - 1;
        let (mut m0, mut m1) = (0.0, 0.0);
        for (n, &e) in trace.iter().enumerate() {
            let w = if n == 0 || n == last { 0.5 } else { 1.0 };
            m0 += w * e;
            m1 += w * e * n as f64 * dt;
        }
        m1 / m0
    }
}

/// Time-resolved forward solve for one source, read out at every detector.
pub fn solve_td(
    stepper: &TdStepper<'_>,
    source: &OptodeVector,
    detectors: &[OptodeVector],
) -> Result<TdSolution> {
    let grid = *stepper.grid();
    let scale = 1.0 / (2.0 * stepper.system().boundary_factor());
    let mut trace: Vec<Vec<f64>> = detectors
        .iter()
        .map(|_| Vec::with_capacity(grid.n_steps + 1))
        .collect();
    let phi0 = stepper.initial(source);
    for (d, det) in detectors.iter().enumerate() {
        trace[d].push(scale * det.dot(&phi0));
    }
    stepper.propagate(source, grid.n_steps, |_, phi, _| {
        for (d, det) in detectors.iter().enumerate() {
            trace[d].push(scale * det.dot(phi));
        }
    })?;
    let bins = trace
        .iter()
        .map(|tr| {
            (0..grid.n_bins)
                .map(|b| grid.bin_weights(b).map(|(n, w)| w * tr[n]).sum())
                .collect()
        })
        .collect();
    Ok(TdSolution { bins, trace })
}
