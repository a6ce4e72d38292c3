mod common;

use std::sync::Arc;

use common::*;
use dotsim::forward::*;
use dotsim::jacobian::*;
use dotsim::medium::*;
use dotsim::mesh::*;

#[test]
fn cw_adjoint_matches_finite_differences() {
    let [a, s] = fd_check(Mode::Cw, 3);
    println!("CW worst relative error: mua {a:.2e}, musp {s:.2e}");
    assert!(a < 1e-3 && s < 1e-3);
}

#[test]
fn td_adjoint_matches_finite_differences() {
    let [a, s] = fd_check(Mode::Td, 2);
    println!("TD worst relative error: mua {a:.2e}, musp {s:.2e}");
    assert!(a < 1e-3 && s < 1e-3);
}

#[test]
fn adjoint_field_equals_forward_field_from_detector_position() {
    let mesh = small_mesh();
    let field = test_field(&mesh);
    let layout = OptodeLayout::full_ring(22.0, 3, 3, 1.0 / 0.67);
    let geometry = Arc::new(FemGeometry::new(mesh.clone()));
    let system = assemble(&geometry, &field).unwrap();
    let dets = layout.detector_vectors(&mesh).unwrap();
    let adj = adjoint_fields(&system, &dets).unwrap();
    assert_eq!(adj.len(), 3);
    let as_sources = OptodeLayout {
        sources: layout.detectors.clone(),
        ..layout.clone()
    };
    for (a, q) in adj.iter().zip(as_sources.source_vectors(&mesh).unwrap()) {
        let fwd = solve_cw(&system, &q).unwrap();
        let max = fwd.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&fwd) {
            assert!((x - y).abs() <= 1e-12 * max);
        }
        assert!(a.iter().all(|&v| v >= -1e-12 * max));
    }
}

#[test]
fn uniform_absorption_increase_lowers_every_measurement() {
    let mesh = small_mesh();
    let field = homogeneous_disk(&mesh, 0.02, 0.67, 1.4);
    for mode in [Mode::Cw, Mode::Td] {
        let layout = OptodeLayout::full_ring(22.0, 3, 3, 1.0 / 0.67);
        let model = ForwardModel::new(mesh.clone(), layout, mode, TimeGrid::default()).unwrap();
        let jac = jacobian(&model, &model.assemble(&field).unwrap(), &JacobianSettings::default()).unwrap();
        let y0 = model.simulate(&field).unwrap();
        let mut up = field.clone();
        up.mua.iter_mut().for_each(|v| *v += 1e-4);
        let y1 = model.simulate(&up).unwrap();
        for r in 0..jac.n_rows() {
            assert!(jac.mua_row(r).iter().sum::<f64>() < 0.0);
            assert!(y1.values[r] < y0.values[r]);
        }
    }
}

#[test]
fn jacobian_is_reciprocal_under_swap() {
    let mesh = small_mesh();
    let field = test_field(&mesh);
    let at = |a: f64| Point2::new(22.0 * a.cos(), 22.0 * a.sin());
    let ab = OptodeLayout {
        radius: 22.0,
        sources: vec![at(0.4)],
        detectors: vec![at(2.1)],
        inset: 1.0 / 0.67,
        source_strength: 1.0,
    };
    let ba = OptodeLayout {
        sources: ab.detectors.clone(),
        detectors: ab.sources.clone(),
        ..ab.clone()
    };
    for mode in [Mode::Cw, Mode::Td] {
        let j = |l: &OptodeLayout| {
            let m = ForwardModel::new(mesh.clone(), l.clone(), mode, TimeGrid::default()).unwrap();
            jacobian(&m, &m.assemble(&field).unwrap(), &JacobianSettings::default()).unwrap()
        };
        let (x, y) = (j(&ab), j(&ba));
        for r in 0..x.n_rows() {
            assert!((x.intensities[r] - y.intensities[r]).abs() <= 1e-8 * x.intensities[r]);
            for (rows_x, rows_y) in [(x.mua_row(r), y.mua_row(r)), (x.musp_row(r), y.musp_row(r))] {
                let max = rows_x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (a, b) in rows_x.iter().zip(rows_y) {
                    assert!((a - b).abs() <= 1e-8 * max, "{mode}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn summed_td_sensitivity_matches_cw() {
    let mesh = small_mesh();
    let field = test_field(&mesh);
    let layout = OptodeLayout::full_ring(22.0, 2, 2, 1.0 / 0.67);
    let grid = TimeGrid {
        dt: 20.0,
        n_steps: 500,
        bin_width: 1000.0,
        n_bins: 10,
        startup_steps: 2,
    };
    let td = ForwardModel::new(mesh.clone(), layout, Mode::Td, grid).unwrap();
    let cw = td.with_mode(Mode::Cw).unwrap();
    let system = td.assemble(&field).unwrap();
    let jt = jacobian(&td, &system, &JacobianSettings::default()).unwrap();
    let jc = jacobian(&cw, &system, &JacobianSettings::default()).unwrap();
    let n = mesh.node_count();
    let mut worst: f64 = 0.0;
    for pair in 0..4 {
        // Log-sensitivities combine as intensity-weighted sums over bins.
        let rows = pair * 10..(pair + 1) * 10;
        let total: f64 = rows.clone().map(|r| jt.intensities[r]).sum();
        for block in 0..2 {
            let pick = |j: &Jacobian, r: usize| if block == 0 { j.mua_row(r).to_vec() } else { j.musp_row(r).to_vec() };
            let mut summed = vec![0.0; n];
            for r in rows.clone() {
                for (acc, v) in summed.iter_mut().zip(pick(&jt, r)) {
                    *acc += jt.intensities[r] * v / total;
                }
            }
            let reference = pick(&jc, pair);
            let max = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in summed.iter().zip(&reference) {
                if b.abs() > 1e-6 * max {
                    worst = worst.max((a - b).abs() / b.abs());
                }
            }
        }
    }
    println!("summed TD vs CW sensitivity worst relative error {worst:.3e}");
    assert!(worst < 0.02);
}

#[test]
fn late_gates_probe_deeper() {
    let mesh = Arc::new(build_disk_mesh(&MeshSpec::default()).unwrap());
    let field = homogeneous_disk(&mesh, 0.02, 0.67, 1.4);
    let layout = default_layout(&mesh, 10, 10, 0.67);
    let model = ForwardModel::new(mesh.clone(), layout, Mode::Td, TimeGrid::default()).unwrap();
    let jac = jacobian(&model, &model.assemble(&field).unwrap(), &JacobianSettings::default()).unwrap();
    // Nearest pair and a pair 54° apart.
    for d in [0, 1] {
        let mut depths = Vec::new();
        for b in 0..7 {
            let row = jac.mua_row(jac.row_index(0, d, b));
            // Away from the optode singularities, as in a sensitivity profile.
            let k = (0..row.len())
                .filter(|&k| mesh.node(k).norm() < 70.0 - 6.0)
                .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()))
                .unwrap();
            depths.push(70.0 - mesh.node(k).norm());
        }
        println!("detector {d}: argmax depth by gate {depths:?}");
        for w in depths.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{depths:?}");
        }
    }
}

#[test]
fn sensitivity_peaks_between_source_and_detector() {
    let mesh = Arc::new(build_disk_mesh(&MeshSpec::default()).unwrap());
    let field = homogeneous_disk(&mesh, 0.02, 0.67, 1.4);
    let layout = default_layout(&mesh, 10, 10, 0.67);
    let model = ForwardModel::new(mesh.clone(), layout.clone(), Mode::Cw, TimeGrid::default()).unwrap();
    let jac = jacobian(&model, &model.assemble(&field).unwrap(), &JacobianSettings::default()).unwrap();
    for (s, d) in [(0, 0), (0, 1), (3, 5)] {
        let row = jac.mua_row(jac.row_index(s, d, 0));
        let k = (0..row.len()).max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs())).unwrap();
        let p = mesh.node(k);
        let (a, b) = (layout.sources[s], layout.detectors[d]);
        // Distance from p to the chord ab.
        let (ux, uy) = (b.x - a.x, b.y - a.y);
        let t = (((p.x - a.x) * ux + (p.y - a.y) * uy) / (ux * ux + uy * uy)).clamp(0.0, 1.0);
        let dist = Point2::new(a.x + t * ux, a.y + t * uy).dist(p);
        assert!(dist <= 20.0, "pair ({s},{d}) argmax {dist} mm from chord");
    }
}

#[test]
fn checkpointed_jacobian_approximates_exact() {
    let mesh = small_mesh();
    let field = test_field(&mesh);
    let layout = OptodeLayout::full_ring(22.0, 2, 2, 1.0 / 0.67);
    let model = ForwardModel::new(mesh.clone(), layout, Mode::Td, TimeGrid::default()).unwrap();
    let system = model.assemble(&field).unwrap();
    let exact = jacobian(&model, &system, &JacobianSettings::default()).unwrap();
    let full = 2 * 224 * mesh.node_count() * 8;
    assert_eq!(exact.checkpoint_stride, 1);
    let mut errors = Vec::new();
    for (limit, stride) in [(full / 4, 4), (full / 2, 2)] {
        let approx = jacobian(&model, &system, &JacobianSettings { memory_limit_bytes: limit }).unwrap();
        assert_eq!(approx.checkpoint_stride, stride);
        assert_eq!(exact.intensities, approx.intensities);
        let num: f64 = exact.mua.iter().zip(&approx.mua).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = exact.mua.iter().map(|a| a * a).sum();
        errors.push((num / den).sqrt());
    }
    println!("checkpointing relative error, stride 4 and 2: {errors:?}");
    // Linear interpolation: halving the stride cuts the error about fourfold.
    assert!(errors[0] < 0.1);
    assert!(errors[1] < errors[0] / 3.0);
}

#[test]
fn csv_dump_has_one_line_per_entry() {
    let mesh = small_mesh();
    let field = test_field(&mesh);
    let layout = OptodeLayout::full_ring(22.0, 1, 2, 1.0 / 0.67);
    let model = ForwardModel::new(mesh.clone(), layout, Mode::Cw, TimeGrid::default()).unwrap();
    let jac = jacobian(&model, &model.assemble(&field).unwrap(), &JacobianSettings::default()).unwrap();
    let csv = jac.to_csv();
    assert_eq!(csv.lines().count(), 1 + 2 * mesh.node_count());
    assert!(csv.starts_with("source_id,detector_id,bin_id,node_id,d_mua,d_musp\n"));
}
