//! Finite-difference oracle shared by the Jacobian checks.
#![allow(dead_code)]

use std::sync::Arc;

use dotsim::forward::*;
use dotsim::jacobian::*;
use dotsim::linalg::SymMatrix;
use dotsim::medium::*;
use dotsim::mesh::*;

pub const H: f64 = 1e-5;

pub fn small_mesh() -> Arc<Mesh> {
    Arc::new(
        build_disk_mesh(&MeshSpec {
            radius: 22.0,
            h_boundary: 1.5,
            h_interior: 2.5,
        })
        .unwrap(),
    )
}

/// Mildly heterogeneous field so the test is not tuned to a symmetric case.
pub fn test_field(mesh: &Mesh) -> OpticalField {
    let mut f = homogeneous_disk(mesh, 0.02, 0.67, 1.4);
    for (i, p) in mesh.nodes().iter().enumerate() {
        f.mua[i] *= 1.0 + 0.3 * (p.x / 10.0).sin();
        f.musp[i] *= 1.0 + 0.2 * (p.y / 7.0).cos();
    }
    f
}

#[derive(Clone, Copy)]
pub enum Param {
    Mua,
    Musp,
}

pub fn perturbed(f: &OpticalField, k: usize, p: Param, dh: f64) -> OpticalField {
    let mut g = f.clone();
    match p {
        Param::Mua => g.mua[k] += dh,
        Param::Musp => g.musp[k] += dh,
    }
    g
}

/// Central difference `(y(μ+h) − y(μ−h)) / 2h` for every measurement row.
///
/// The difference of the two discrete solutions is propagated directly
/// (`A₊ δ = −ΔA φ₋` for CW, the same recursion per step for TD), which is an
/// algebraic identity rather than a linearization, and avoids cancellation
/// in `y₊ − y₋` for tiny sensitivities.
pub fn central_difference(model: &ForwardModel, f: &OpticalField, k: usize, p: Param) -> Vec<f64> {
    let plus = model.assemble(&perturbed(f, k, p, H)).unwrap();
    let minus = model.assemble(&perturbed(f, k, p, -H)).unwrap();
    let delta_a: SymMatrix = plus.system().axpy(-1.0, minus.system());
    let c = 1.0 / (2.0 * plus.boundary_factor());
    let n = model.mesh().node_count();
    let mut out = Vec::with_capacity(model.n_measurements());
    match model.mode() {
        Mode::Cw => {
            let f_plus = plus.steady_factor().unwrap();
            for q in model.sources() {
                let phi = solve_cw(&minus, q).unwrap();
                let mut rhs = delta_a.mul_vec(&phi);
                rhs.iter_mut().for_each(|v| *v = -*v);
                let delta = f_plus.solve(&rhs);
                for d in model.detectors() {
                    let (i, di) = (c * d.dot(&phi), c * d.dot(&delta));
                    out.push((di / i).ln_1p() / (2.0 * H));
                }
            }
        }
        Mode::Td => {
            let grid = *model.grid();
            let sp = TdStepper::new(&plus, &grid).unwrap();
            let sm = TdStepper::new(&minus, &grid).unwrap();
            let last = grid.last_gated_step();
            let mut work = vec![0.0; n];
            let mut tmp = vec![0.0; n];
            for q in model.sources() {
                let mut phi = sm.initial(q);
                let mut delta = vec![0.0; n];
                let nd = model.detectors().len();
                let mut tr_i = vec![vec![0.0; last + 1]; nd];
                let mut tr_d = vec![vec![0.0; last + 1]; nd];
                for (j, d) in model.detectors().iter().enumerate() {
                    tr_i[j][0] = c * d.dot(&phi);
                }
                for step in 1..=last {
                    let th = grid.theta(step);
                    let mut next = vec![0.0; n];
                    sm.apply_explicit(th, &phi, &mut next);
                    sm.solve_implicit(th, &mut next, &mut work);
                    let bar: Vec<f64> = next.iter().zip(&phi).map(|(a, b)| th * a + (1.0 - th) * b).collect();
                    let mut rhs = vec![0.0; n];
                    sp.apply_explicit(th, &delta, &mut rhs);
                    delta_a.mul_vec_into(&bar, &mut tmp);
                    for i in 0..n {
                        rhs[i] -= tmp[i];
                    }
                    sp.solve_implicit(th, &mut rhs, &mut work);
                    delta = rhs;
                    phi = next;
                    for (j, d) in model.detectors().iter().enumerate() {
                        tr_i[j][step] = c * d.dot(&phi);
                        tr_d[j][step] = c * d.dot(&delta);
                    }
                }
                for j in 0..nd {
                    for b in 0..grid.n_bins {
                        let i: f64 = grid.bin_weights(b).map(|(s, w)| w * tr_i[j][s]).sum();
                        let di: f64 = grid.bin_weights(b).map(|(s, w)| w * tr_d[j][s]).sum();
                        out.push((di / i).ln_1p() / (2.0 * H));
                    }
                }
            }
        }
    }
    out
}

/// Worst relative error over entries above 1e-9 of their row maximum.
pub fn fd_check(mode: Mode, n_opt: usize) -> [f64; 2] {
    let mesh = small_mesh();
    let field = test_field(&mesh);
    let layout = OptodeLayout::full_ring(22.0, n_opt, n_opt, 1.0 / 0.67);
    let model = ForwardModel::new(mesh.clone(), layout, mode, TimeGrid::default()).unwrap();
    let system = model.assemble(&field).unwrap();
    let jac = jacobian(&model, &system, &JacobianSettings::default()).unwrap();
    let n = mesh.node_count();
    let mut worst = [0.0f64; 2];
    for (pi, p) in [Param::Mua, Param::Musp].into_iter().enumerate() {
        let mut fd = vec![0.0; jac.n_rows() * n];
        for k in 0..n {
            for (r, v) in central_difference(&model, &field, k, p).into_iter().enumerate() {
                fd[r * n + k] = v;
            }
        }
        for r in 0..jac.n_rows() {
            let row = if pi == 0 { jac.mua_row(r) } else { jac.musp_row(r) };
            let max = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..n {
                if row[k].abs() > 1e-9 * max {
                    worst[pi] = worst[pi].max((row[k] - fd[r * n + k]).abs() / row[k].abs());
                }
            }
        }
    }
    worst
}

