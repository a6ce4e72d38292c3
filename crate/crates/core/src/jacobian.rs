//! Adjoint sensitivities of log-intensity data with respect to nodal μa and
//! μs′.
//!
//! The TD Jacobian is the exact derivative of the discrete θ-scheme. With
//! `L_n = S + θ_n A`, `R_n = S − (1 − θ_n) A` and the detector functional
//! `c w_{b,n} d`, the adjoint recursion runs backwards from the bin's last step:
//!
//! ```text
//! L_n λⁿ = c w_{b,n} d + R_{n+1} λⁿ⁺¹,      dI = −Σ_n λⁿ · dA φ̄ⁿ,
//! ```
//!
//! where `φ̄ⁿ = θ_n φⁿ + (1 − θ_n) φⁿ⁻¹`. Contracting the correlation
//! `Σ_n λⁿ φ̄ⁿᵀ` with the element matrices gives the element gradients, which
//! are spread to nodes through the element-mean parameterization.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::cw::{cw_readout, solve_cw, solve_cw_dense};
use crate::forward::{FemSystem, ForwardModel, Measurement, Mode, OptodeVector, TdStepper};
use crate::provenance::fmt_f64;

/// Bytes allowed for stored forward fields before checkpointing kicks in.
pub const DEFAULT_MEMORY_LIMIT: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacobianSettings {
    pub memory_limit_bytes: usize,
}

impl Default for JacobianSettings {
    fn default() -> Self {
        Self {
            memory_limit_bytes: DEFAULT_MEMORY_LIMIT,
        }
    }
}

/// Dense sensitivities of `y = ln I`, rows in measurement order and one
/// column per mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub mode: Mode,
    pub n_sources: usize,
    pub n_detectors: usize,
    pub n_bins: usize,
    pub n_nodes: usize,
    /// Intensities `I` at the linearization point.
    pub intensities: Vec<f64>,
    /// `∂y/∂μa`, row-major.
    pub mua: Vec<f64>,
    /// `∂y/∂μs′`, row-major.
    pub musp: Vec<f64>,
    /// Storage stride used for the forward fields (1 = exact).
    pub checkpoint_stride: usize,
}

impl Jacobian {
    pub fn n_rows(&self) -> usize {
        self.intensities.len()
    }

    pub fn mua_row(&self, r: usize) -> &[f64] {
        &self.mua[r * self.n_nodes..(r + 1) * self.n_nodes]
    }

    pub fn musp_row(&self, r: usize) -> &[f64] {
        &self.musp[r * self.n_nodes..(r + 1) * self.n_nodes]
    }

    pub fn row_index(&self, s: usize, d: usize, b: usize) -> usize {
        (s * self.n_detectors + d) * self.n_bins + b
    }

    /// The log-intensity measurement at the linearization point.
    pub fn measurement(&self) -> Result<Measurement> {
        Measurement::from_intensities(
            self.mode,
            self.n_sources,
            self.n_detectors,
            self.n_bins,
            &self.intensities,
        )
    }

    /// Long-format CSV `source_id,detector_id,bin_id,node_id,d_mua,d_musp`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source_id,detector_id,bin_id,node_id,d_mua,d_musp\n");
        for s in 0..self.n_sources {
            for d in 0..self.n_detectors {
                for b in 0..self.n_bins {
                    let r = self.row_index(s, d, b);
                    let (ja, js) = (self.mua_row(r), self.musp_row(r));
                    for k in 0..self.n_nodes {
                        let _ = writeln!(out, "{s},{d},{b},{k},{},{}", fmt_f64(ja[k]), fmt_f64(js[k]));
                    }
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Adjoint fields `A⁻¹ d`, one per detector: the fluence a unit source
/// acting through the detector's functional would produce.
pub fn adjoint_fields(system: &FemSystem, detectors: &[OptodeVector]) -> Result<Vec<Vec<f64>>> {
    detectors.par_iter().map(|d| solve_cw(system, d)).collect()
}

/// Spreads element correlations to nodal `(∂I/∂μa, ∂I/∂μs′)`.
///
/// `corr(e, a, b)` is the correlation between adjoint node `a` and forward
/// node `b` of element `e`.
fn contract(
    system: &FemSystem,
    corr: impl Fn(usize, usize, usize) -> f64,
    d_mua: &mut [f64],
    d_musp: &mut [f64],
) {
    let geometry = system.geometry();
    let ks = geometry.unit_stiffness();
    let kappa = system.kappa();
    for (e, tri) in system.mesh().elements().iter().enumerate() {
        let (mut a_e, mut k_e) = (0.0, 0.0);
        for a in 0..3 {
            for b in 0..3 {
                let c = corr(e, a, b);
                a_e += geometry.absorption_entry(e, a, b) * c;
                k_e += ks[e][a][b] * c;
            }
        }
        let k2 = kappa[e] * kappa[e];
        let g_mua = -(a_e - 3.0 * k2 * k_e) / 3.0;
        let g_musp = k2 * k_e;
        for &i in tri {
            d_mua[i] += g_mua;
            d_musp[i] += g_musp;
        }
    }
}

pub fn jacobian_cw(model: &ForwardModel, system: &FemSystem) -> Result<Jacobian> {
    let n = system.mesh().node_count();
    let (ns, nd) = (model.sources().len(), model.detectors().len());
    let scale = 1.0 / (2.0 * system.boundary_factor());
    let forward: Vec<Vec<f64>> = model
        .sources()
        .par_iter()
        .map(|q| solve_cw(system, q))
        .collect::<Result<_>>()?;
    let adjoint: Vec<Vec<f64>> = model
        .detectors()
        .par_iter()
        .map(|d| solve_cw_dense(system, &d.scaled(scale).dense(n)))
        .collect::<Result<_>>()?;
    let mut intensities = Vec::with_capacity(ns * nd);
    for phi in &forward {
        intensities.extend(cw_readout(system, phi, model.detectors()));
    }
    let elements = system.mesh().elements();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..ns * nd)
        .into_par_iter()
        .map(|r| {
            let (phi, lam) = (&forward[r / nd], &adjoint[r % nd]);
            let mut ja = vec![0.0; n];
            let mut js = vec![0.0; n];
            contract(
                system,
                |e, a, b| lam[elements[e][a]] * phi[elements[e][b]],
                &mut ja,
                &mut js,
            );
            (ja, js)
        })
        .collect();
    finish(model, Mode::Cw, 1, n, intensities, rows, 1)
}

fn finish(
    model: &ForwardModel,
    mode: Mode,
    n_bins: usize,
    n_nodes: usize,
    intensities: Vec<f64>,
    rows: Vec<(Vec<f64>, Vec<f64>)>,
    checkpoint_stride: usize,
) -> Result<Jacobian> {
    let mut mua = Vec::with_capacity(rows.len() * n_nodes);
    let mut musp = Vec::with_capacity(rows.len() * n_nodes);
    for (r, (ja, js)) in rows.into_iter().enumerate() {
        let i = intensities[r];
        if !(i > 0.0) || !i.is_finite() {
            let nd = model.detectors().len();
            return Err(Error::NonPositiveIntensity {
                source_id: r / (nd * n_bins),
                detector_id: (r / n_bins) % nd,
                bin_id: r % n_bins,
                value: i,
            });
        }
        mua.extend(ja.iter().map(|v| v / i));
        musp.extend(js.iter().map(|v| v / i));
    }
    Ok(Jacobian {
        mode,
        n_sources: model.sources().len(),
        n_detectors: model.detectors().len(),
        n_bins,
        n_nodes,
        intensities,
        mua,
        musp,
        checkpoint_stride,
    })
}

/// Forward fields `φ̄ⁿ` for one source, exact or strided.
struct FieldStore {
    stride: usize,
    last: usize,
    /// Stride 1: `φ̄ⁿ` at index n − 1. Otherwise `φ` at steps `0, k, 2k, …, last`.
    fields: Vec<Vec<f64>>,
}

impl FieldStore {
    fn stored_steps(stride: usize, last: usize) -> Vec<usize> {
        let mut steps: Vec<usize> = (0..=last).step_by(stride).collect();
        if *steps.last().unwrap() != last {
            steps.push(last);
        }
        steps
    }

    /// Linear interpolation of `φⁿ` between checkpoints.
    fn phi_at(&self, n: usize, out: &mut [f64]) {
        let m = n / self.stride;
        let lo = m * self.stride;
        if lo == n {
            out.copy_from_slice(&self.fields[m]);
            return;
        }
        let hi = ((m + 1) * self.stride).min(self.last);
        let t = (n - lo) as f64 / (hi - lo) as f64;
        let (a, b) = (&self.fields[m], &self.fields[m + 1]);
        for i in 0..out.len() {
            out[i] = (1.0 - t) * a[i] + t * b[i];
        }
    }

    fn phibar(&self, n: usize, theta: f64, out: &mut [f64], scratch: &mut [f64]) {
        if self.stride == 1 {
            out.copy_from_slice(&self.fields[n - 1]);
            return;
        }
        self.phi_at(n, out);
        self.phi_at(n - 1, scratch);
        for i in 0..out.len() {
            out[i] = theta * out[i] + (1.0 - theta) * scratch[i];
        }
    }
}

pub fn jacobian_td(
    model: &ForwardModel,
    system: &FemSystem,
    settings: &JacobianSettings,
) -> Result<Jacobian> {
    let grid = *model.grid();
    let stepper = TdStepper::new(system, &grid)?;
    let n = system.mesh().node_count();
    let (ns, nd, nb) = (model.sources().len(), model.detectors().len(), grid.n_bins);
    let last = grid.last_gated_step();
    let scale = 1.0 / (2.0 * system.boundary_factor());

    let bytes = ns * last * n * std::mem::size_of::<f64>();
    let stride = bytes.div_ceil(settings.memory_limit_bytes.max(1)).max(1);

    // Forward sweep: detector traces and stored fields per source.
    let forward: Vec<(Vec<f64>, FieldStore)> = model
        .sources()
        .par_iter()
        .map(|q| -> Result<(Vec<f64>, FieldStore)> {
            let keep = FieldStore::stored_steps(stride, last);
            let mut fields = Vec::with_capacity(if stride == 1 { last } else { keep.len() });
            let phi0 = stepper.initial(q);
            let mut traces = vec![vec![0.0; last + 1]; nd];
            for (d, det) in model.detectors().iter().enumerate() {
                traces[d][0] = scale * det.dot(&phi0);
            }
            if stride > 1 {
                fields.push(phi0);
            }
            let mut next_keep = 1;
            stepper.propagate(q, last, |step, phi, prev| {
                for (d, det) in model.detectors().iter().enumerate() {
                    traces[d][step] = scale * det.dot(phi);
                }
                if stride == 1 {
                    let th = grid.theta(step);
                    fields.push(phi.iter().zip(prev).map(|(a, b)| th * a + (1.0 - th) * b).collect());
                } else if next_keep < keep.len() && keep[next_keep] == step {
                    fields.push(phi.to_vec());
                    next_keep += 1;
                }
            })?;
            let mut bins = Vec::with_capacity(nd * nb);
            for tr in &traces {
                for b in 0..nb {
                    bins.push(grid.bin_weights(b).map(|(k, w)| w * tr[k]).sum::<f64>());
                }
            }
            Ok((bins, FieldStore { stride, last, fields }))
        })
        .collect::<Result<_>>()?;

    let pattern = system.geometry().pattern().clone();
    let slot_rows = system.geometry().slot_rows();
    let cols = pattern.cols();
    let slots = system.geometry().element_slots();

    // Adjoint sweeps per (detector, bin); rows indexed [d][b][s].
    let per_detector: Vec<Vec<Vec<(Vec<f64>, Vec<f64>)>>> = model
        .detectors()
        .par_iter()
        .map(|det| -> Result<Vec<Vec<(Vec<f64>, Vec<f64>)>>> {
            let mut lam = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            let mut work = vec![0.0; n];
            let mut phibar = vec![0.0; n];
            let mut scratch = vec![0.0; n];
            let mut out = Vec::with_capacity(nb);
            for b in 0..nb {
                let end = (b + 1) * grid.steps_per_bin();
                let weights: Vec<(usize, f64)> = grid.bin_weights(b).collect();
                let mut corr = vec![vec![0.0; pattern.nnz()]; ns];
                lam.iter_mut().for_each(|v| *v = 0.0);
                for step in (1..=end).rev() {
                    if step < end {
                        stepper.apply_explicit(grid.theta(step + 1), &lam, &mut rhs);
                    } else {
                        rhs.iter_mut().for_each(|v| *v = 0.0);
                    }
                    if let Some(&(_, w)) = weights.iter().find(|(k, _)| *k == step) {
                        det.add_to(&mut rhs, scale * w);
                    }
                    stepper.solve_implicit(grid.theta(step), &mut rhs, &mut work);
                    std::mem::swap(&mut lam, &mut rhs);
                    for (s, (_, store)) in forward.iter().enumerate() {
                        store.phibar(step, grid.theta(step), &mut phibar, &mut scratch);
                        let c = &mut corr[s];
                        for (k, ck) in c.iter_mut().enumerate() {
                            *ck += lam[slot_rows[k]] * phibar[cols[k]];
                        }
                    }
                }
                let rows = corr
                    .iter()
                    .map(|c| {
                        let mut ja = vec![0.0; n];
                        let mut js = vec![0.0; n];
                        contract(system, |e, a, bb| c[slots[e][a][bb]], &mut ja, &mut js);
                        (ja, js)
                    })
                    .collect();
                out.push(rows);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut intensities = Vec::with_capacity(ns * nd * nb);
    let mut rows = Vec::with_capacity(ns * nd * nb);
    let mut per_detector = per_detector;
    for (s, (bins, _)) in forward.iter().enumerate() {
        intensities.extend_from_slice(bins);
        for d in 0..nd {
            for b in 0..nb {
                rows.push(std::mem::take(&mut per_detector[d][b][s]));
            }
        }
    }
    finish(model, Mode::Td, nb, n, intensities, rows, stride)
}

/// Jacobian in the model's own mode.
pub fn jacobian(
    model: &ForwardModel,
    system: &FemSystem,
    settings: &JacobianSettings,
) -> Result<Jacobian> {
    match model.mode() {
        Mode::Cw => jacobian_cw(model, system),
        Mode::Td => jacobian_td(model, system, settings),
    }
}
