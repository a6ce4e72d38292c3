//! Gauss-Newton reconstruction of μa (and optionally μs′) from log-intensity
//! data with smoothed total-variation regularization.
//!
//! The Newton step works on images scaled by a reference field,
//! `x = μ / μ_ref`; the TV penalty is evaluated on the physical images in
//! mm⁻¹.

pub mod io;
pub mod tv;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use tv::{TotalVariation, TvHessian};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, Measurement, Mode};
use crate::jacobian::{jacobian, Jacobian, JacobianSettings};
use crate::linalg::dot;
use crate::medium::OpticalField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unknowns {
    MuaOnly,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSettings {
    pub outer_iterations: usize,
    pub cg_max_inner: usize,
    pub cg_tolerance: f64,
    pub tv_tau: f64,
    pub tv_beta: f64,
    pub mode: Mode,
    pub unknowns: Unknowns,
    pub line_search_shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Lower clamp on both coefficients, mm⁻¹.
    pub min_coefficient: f64,
    /// Stop when the gradient norm (scaled unknowns) falls to this value.
    pub gradient_tolerance: f64,
    pub jacobian: JacobianSettings,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            outer_iterations: 20,
            cg_max_inner: 100,
            cg_tolerance: 1e-4,
            tv_tau: 0.01,
            tv_beta: 0.01,
            mode: Mode::Td,
            unknowns: Unknowns::Joint,
            line_search_shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 10,
            min_coefficient: 1e-5,
            gradient_tolerance: 1e-12,
            jacobian: JacobianSettings::default(),
        }
    }
}

impl ReconSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.outer_iterations > 0
            && self.cg_max_inner > 0
            && self.cg_tolerance > 0.0
            && self.tv_tau >= 0.0
            && self.tv_beta > 0.0
            && self.line_search_shrink > 0.0
            && self.line_search_shrink < 1.0
            && self.armijo > 0.0
            && self.armijo < 1.0
            && self.min_coefficient > 0.0
            && self.gradient_tolerance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSettings(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub misfit: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    Converged,
    LineSearchFailed,
    CgStagnated,
}

/// One accepted iteration (iteration 0 is the initial guess).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: ObjectiveValue,
    pub step: f64,
    pub cg_iterations: usize,
    pub backtracks: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub field: OpticalField,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
}

impl ReconResult {
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn objective(&self) -> ObjectiveValue {
        self.trace.last().unwrap().objective
    }
}

/// Maps a field to scaled unknowns and back.
struct Scaling<'a> {
    reference: &'a OpticalField,
    unknowns: Unknowns,
    min_coefficient: f64,
}

impl Scaling<'_> {
    fn n(&self) -> usize {
        self.reference.node_count()
    }

    fn dim(&self) -> usize {
        match self.unknowns {
            Unknowns::MuaOnly => self.n(),
            Unknowns::Joint => 2 * self.n(),
        }
    }

    fn to_x(&self, f: &OpticalField) -> Vec<f64> {
        let mut x: Vec<f64> = f.mua.iter().zip(&self.reference.mua).map(|(a, r)| a / r).collect();
        if self.unknowns == Unknowns::Joint {
            x.extend(f.musp.iter().zip(&self.reference.musp).map(|(a, r)| a / r));
        }
        x
    }

    /// Field for `x`, clamping coefficients from below.
    fn to_field(&self, x: &[f64], template: &OpticalField) -> OpticalField {
        let n = self.n();
        let lo = self.min_coefficient;
        let mut f = template.clone();
        for i in 0..n {
            f.mua[i] = (x[i] * self.reference.mua[i]).max(lo);
        }
        if self.unknowns == Unknowns::Joint {
            for i in 0..n {
                f.musp[i] = (x[n + i] * self.reference.musp[i]).max(lo);
            }
        }
        f
    }

    /// Unknowns whose coefficient sits at the lower clamp.
    fn at_floor(&self, x: &[f64]) -> Vec<bool> {
        let refs: [&[f64]; 2] = [&self.reference.mua, &self.reference.musp];
        x.chunks(self.n())
            .zip(refs)
            .flat_map(|(img, r)| {
                img.iter()
                    .zip(r)
                    .map(|(a, b)| a * b <= self.min_coefficient * (1.0 + 1e-9))
            })
            .collect()
    }

    /// Jacobian columns for the scaled unknowns, row-major `rows × dim`.
    fn scaled_jacobian(&self, j: &Jacobian) -> Vec<f64> {
        let (n, dim) = (self.n(), self.dim());
        let mut out = vec![0.0; j.n_rows() * dim];
        for r in 0..j.n_rows() {
            let row = &mut out[r * dim..(r + 1) * dim];
            for (k, v) in j.mua_row(r).iter().enumerate() {
                row[k] = v * self.reference.mua[k];
            }
            if self.unknowns == Unknowns::Joint {
                for (k, v) in j.musp_row(r).iter().enumerate() {
                    row[n + k] = v * self.reference.musp[k];
                }
            }
        }
        out
    }

    /// Physical images for `x` (unclamped) with the per-node scale of each.
    fn tv_images<'s>(&'s self, x: &[f64]) -> Vec<(Vec<f64>, &'s [f64])> {
        let refs: [&[f64]; 2] = [&self.reference.mua, &self.reference.musp];
        x.chunks(self.n())
            .zip(refs)
            .map(|(img, r)| (img.iter().zip(r).map(|(a, b)| a * b).collect(), r))
            .collect()
    }
}

fn regularization(tv: &TotalVariation, scaling: &Scaling<'_>, x: &[f64], tau: f64) -> f64 {
    tau * scaling.tv_images(x).iter().map(|(img, _)| tv.value(img)).sum::<f64>()
}

fn misfit(model: &Measurement, data: &Measurement) -> f64 {
    model.values.iter().zip(&data.values).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Data misfit, TV penalty and their sum for `field`, with images scaled by
/// `reference`.
pub fn objective(
    model: &ForwardModel,
    field: &OpticalField,
    data: &Measurement,
    reference: &OpticalField,
    settings: &ReconSettings,
) -> Result<ObjectiveValue> {
    let y = model.simulate(field)?;
    y.check_compatible(data)?;
    let scaling = Scaling {
        reference,
        unknowns: settings.unknowns,
        min_coefficient: settings.min_coefficient,
    };
    let tv = TotalVariation::new(model.mesh(), settings.tv_beta);
    let m = misfit(&y, data);
    let reg = regularization(&tv, &scaling, &scaling.to_x(field), settings.tv_tau);
    Ok(ObjectiveValue {
        misfit: m,
        reg,
        total: m + reg,
    })
}

/// TV gradient in scaled unknowns plus the Hessian block of each image with
/// its node scale.
fn tv_terms<'s>(
    tv: &TotalVariation,
    scaling: &'s Scaling<'s>,
    x: &[f64],
) -> (Vec<f64>, Vec<(TvHessian, &'s [f64])>) {
    let mut grad = Vec::with_capacity(x.len());
    let mut hess = Vec::new();
    for (img, r) in scaling.tv_images(x) {
        let (_, g, h) = tv.gradient_hessian(&img);
        grad.extend(g.iter().zip(r).map(|(a, b)| a * b));
        hess.push((h, r));
    }
    (grad, hess)
}

/// `P (2 JᵀJ + τ D H_TV D) P v` with `D` the node scale of each image and
/// `P` the projection onto unknowns not held at the lower clamp.
struct NormalOperator<'a> {
    free: &'a [bool],
    jac: &'a [f64],
    rows: usize,
    dim: usize,
    n: usize,
    tau: f64,
    hess: &'a [(TvHessian, &'a [f64])],
}

impl NormalOperator<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let v: Vec<f64> = v.iter().zip(self.free).map(|(a, &f)| if f { *a } else { 0.0 }).collect();
        let v = &v[..];
        out.iter_mut().for_each(|o| *o = 0.0);
        for r in 0..self.rows {
            let row = &self.jac[r * self.dim..(r + 1) * self.dim];
            let t = 2.0 * dot(row, v);
            for (o, j) in out.iter_mut().zip(row) {
                *o += t * j;
            }
        }
        let mut hv = vec![0.0; self.n];
        for (b, (h, r)) in self.hess.iter().enumerate() {
            let range = b * self.n..(b + 1) * self.n;
            let dv: Vec<f64> = v[range.clone()].iter().zip(*r).map(|(a, s)| a * s).collect();
            hv.iter_mut().for_each(|o| *o = 0.0);
            h.apply_add(&dv, self.tau, &mut hv);
            for ((o, t), s) in out[range].iter_mut().zip(&hv).zip(*r) {
                *o += t * s;
            }
        }
        for (o, &f) in out.iter_mut().zip(self.free) {
            if !f {
                *o = 0.0;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for r in 0..self.rows {
            for (dk, j) in d.iter_mut().zip(&self.jac[r * self.dim..(r + 1) * self.dim]) {
                *dk += 2.0 * j * j;
            }
        }
        for (b, (h, r)) in self.hess.iter().enumerate() {
            for (k, v) in h.diagonal().into_iter().enumerate() {
                d[b * self.n + k] += self.tau * v * r[k] * r[k];
            }
        }
        for (dk, &f) in d.iter_mut().zip(self.free) {
            if !f {
                *dk = 1.0;
            }
        }
        d
    }
}

/// Jacobi-preconditioned CG from zero. Returns the solution, the iteration
/// count and whether the relative residual reached `tol`.
fn pcg(op: &NormalOperator<'_>, b: &[f64], max_iter: usize, tol: f64) -> (Vec<f64>, usize, bool) {
    let n = b.len();
    let diag = op.diagonal();
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .zip(&diag)
            .map(|(ri, d)| if *d > 0.0 { ri / d } else { *ri })
            .collect()
    };
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return (x, 0, true);
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return (x, it - 1, false);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            return (x, it, true);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, max_iter, false)
}

/// Gauss-Newton with inner CG, Armijo backtracking and a lower clamp.
///
/// Images are scaled by `init`, which is also the starting point.
pub fn gauss_newton(
    model: &ForwardModel,
    data: &Measurement,
    init: &OpticalField,
    settings: &ReconSettings,
) -> Result<ReconResult> {
    settings.validate()?;
    init.validate(model.mesh())?;
    if model.mode() != settings.mode {
        return Err(Error::InvalidSettings(format!(
            "model mode {} differs from settings mode {}",
            model.mode(),
            settings.mode
        )));
    }
    let reference = init.clone();
    let scaling = Scaling {
        reference: &reference,
        unknowns: settings.unknowns,
        min_coefficient: settings.min_coefficient,
    };
    let tv = TotalVariation::new(model.mesh(), settings.tv_beta);
    let tau = settings.tv_tau;

    let mut field = init.clone();
    let mut x = scaling.to_x(&field);
    let clock = Instant::now();
    let mut system = model.assemble(&field)?;
    let mut jac = jacobian(model, &system, &settings.jacobian)?;
    let y = jac.measurement()?;
    y.check_compatible(data)?;
    let mut current = {
        let m = misfit(&y, data);
        let reg = regularization(&tv, &scaling, &x, tau);
        ObjectiveValue { misfit: m, reg, total: m + reg }
    };
    let mut trace = vec![IterationRecord {
        iteration: 0,
        objective: current,
        step: 0.0,
        cg_iterations: 0,
        backtracks: 0,
        wall_seconds: clock.elapsed().as_secs_f64(),
    }];
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=settings.outer_iterations {
        let t0 = Instant::now();
        let y = jac.measurement()?;
        let r: Vec<f64> = y.values.iter().zip(&data.values).map(|(a, b)| a - b).collect();
        let js = scaling.scaled_jacobian(&jac);
        let dim = scaling.dim();
        let (tv_grad, hess) = tv_terms(&tv, &scaling, &x);
        let mut grad = vec![0.0; dim];
        for (row, rr) in js.chunks(dim).zip(&r) {
            for (g, j) in grad.iter_mut().zip(row) {
                *g += 2.0 * rr * j;
            }
        }
        for (g, t) in grad.iter_mut().zip(&tv_grad) {
            *g += tau * t;
        }
        // Unknowns pinned at the clamp and pushed further down stay fixed.
        let at_floor = scaling.at_floor(&x);
        let free: Vec<bool> = at_floor.iter().zip(&grad).map(|(&lo, &g)| !(lo && g > 0.0)).collect();
        let projected: Vec<f64> = grad.iter().zip(&free).map(|(g, &f)| if f { *g } else { 0.0 }).collect();
        if dot(&projected, &projected).sqrt() <= settings.gradient_tolerance {
            termination = Termination::Converged;
            break;
        }
        let op = NormalOperator {
            free: &free,
            jac: &js,
            rows: r.len(),
            dim,
            n: scaling.n(),
            tau,
            hess: &hess,
        };
        let neg_grad: Vec<f64> = projected.iter().map(|g| -g).collect();
        let (delta, cg_iterations, _) = pcg(&op, &neg_grad, settings.cg_max_inner, settings.cg_tolerance);
        let slope = dot(&grad, &delta);
        if !(slope < 0.0) {
            termination = Termination::CgStagnated;
            break;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for backtrack in 0..=settings.max_backtracks {
            let trial_x: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let trial_field = scaling.to_field(&trial_x, &field);
            let trial_x = scaling.to_x(&trial_field);
            if let Ok(y_trial) = model.simulate(&trial_field) {
                let m = misfit(&y_trial, data);
                let reg = regularization(&tv, &scaling, &trial_x, tau);
                let total = m + reg;
                // Armijo along the projected path.
                let moved: Vec<f64> = trial_x.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&grad, &moved).min(0.0);
                if total.is_finite() && total <= current.total + settings.armijo * decrease && total < current.total {
                    accepted = Some((trial_x, trial_field, ObjectiveValue { misfit: m, reg, total }, backtrack));
                    break;
                }
            }
            step *= settings.line_search_shrink;
        }
        let Some((new_x, new_field, value, backtracks)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        x = new_x;
        field = new_field;
        current = value;
        trace.push(IterationRecord {
            iteration,
            objective: current,
            step,
            cg_iterations,
            backtracks,
            wall_seconds: 0.0,
        });
        if iteration < settings.outer_iterations {
            system = model.assemble(&field)?;
            jac = jacobian(model, &system, &settings.jacobian)?;
        }
        trace.last_mut().unwrap().wall_seconds = t0.elapsed().as_secs_f64();
    }

    Ok(ReconResult {
        field,
        trace,
        termination,
    })
}

/// Reference calibration: `data − data_reference + model_reference`.
///
/// `data_reference` is the same instrument measuring a homogeneous medium and
/// `model_reference` the model's prediction for it, so errors common to both
/// measurements (gain, model discretization) cancel to first order.
pub fn reference_calibrated(
    data: &Measurement,
    data_reference: &Measurement,
    model_reference: &Measurement,
) -> Result<Measurement> {
    data.check_compatible(data_reference)?;
    data.check_compatible(model_reference)?;
    let mut out = data.clone();
    for ((v, r), m) in out
        .values
        .iter_mut()
        .zip(&data_reference.values)
        .zip(&model_reference.values)
    {
        *v += m - r;
    }
    Ok(out)
}
