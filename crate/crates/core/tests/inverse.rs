use std::sync::Arc;

use dotsim::forward::*;
use dotsim::inverse::io::*;
use dotsim::inverse::*;
use dotsim::medium::*;
use dotsim::mesh::*;

fn small_mesh() -> Arc<Mesh> {
    Arc::new(
        build_disk_mesh(&MeshSpec {
            radius: 22.0,
            h_boundary: 1.5,
            h_interior: 2.5,
        })
        .unwrap(),
    )
}

fn model(mesh: &Arc<Mesh>, mode: Mode, source_strength: f64) -> ForwardModel {
    let mut layout = OptodeLayout::full_ring(22.0, 8, 8, 1.0 / 0.67);
    layout.source_strength = source_strength;
    ForwardModel::new(mesh.clone(), layout, mode, TimeGrid::default()).unwrap()
}

fn one_blob(mesh: &Mesh) -> OpticalField {
    let bg = background_field(mesh, &Background::default());
    add_inclusion(
        &bg,
        mesh,
        &Inclusion {
            center: Point2::new(6.0, 8.0),
            width: 8.0,
            contrast: 2.0,
        },
    )
    .unwrap()
}

fn cw_settings() -> ReconSettings {
    ReconSettings {
        mode: Mode::Cw,
        outer_iterations: 8,
        ..ReconSettings::default()
    }
}

#[test]
fn misfit_vanishes_at_truth() {
    let mesh = small_mesh();
    let m = model(&mesh, Mode::Cw, 1.0);
    let truth = one_blob(&mesh);
    let data = m.simulate(&truth).unwrap();
    let bg = background_field(&mesh, &Background::default());
    let obj = objective(&m, &truth, &data, &bg, &cw_settings()).unwrap();
    assert!(obj.misfit < 1e-20, "{obj:?}");
    assert!((obj.total - obj.misfit - obj.reg).abs() < 1e-15);
}

#[test]
fn constant_images_pay_only_the_smoothing_floor() {
    let mesh = small_mesh();
    let m = model(&mesh, Mode::Cw, 1.0);
    let bg = background_field(&mesh, &Background::default());
    let data = m.simulate(&bg).unwrap();
    let edge_len: f64 = mesh.edges().iter().map(|&[a, b]| mesh.node(a).dist(mesh.node(b))).sum();
    let s = cw_settings();
    for (unknowns, images) in [(Unknowns::MuaOnly, 1.0), (Unknowns::Joint, 2.0)] {
        let s = ReconSettings { unknowns, ..s };
        let obj = objective(&m, &bg, &data, &bg, &s).unwrap();
        let want = s.tv_tau * s.tv_beta * edge_len * images;
        assert!((obj.reg - want).abs() < 1e-12 * want, "{} vs {want}", obj.reg);
    }
}

#[test]
fn homogeneous_start_on_homogeneous_data_is_a_fixed_point() {
    let mesh = small_mesh();
    let m = model(&mesh, Mode::Cw, 1.0);
    let bg = background_field(&mesh, &Background::default());
    let data = m.simulate(&bg).unwrap();
    let r = gauss_newton(&m, &data, &bg, &cw_settings()).unwrap();
    assert_eq!(r.termination, Termination::Converged);
    assert_eq!(r.iterations(), 0);
    assert_eq!(r.field, bg);
}

#[test]
fn trace_is_monotone_and_recovers_the_blob() {
    let mesh = small_mesh();
    let m = model(&mesh, Mode::Cw, 1.0);
    let truth = one_blob(&mesh);
    let data = m.simulate(&truth).unwrap();
    let bg = background_field(&mesh, &Background::default());
    let s = ReconSettings {
        unknowns: Unknowns::MuaOnly,
        ..cw_settings()
    };
    let r = gauss_newton(&m, &data, &bg, &s).unwrap();
    assert!(r.iterations() >= 1);
    for w in r.trace.windows(2) {
        assert!(w[1].objective.total < w[0].objective.total, "{:?}", r.trace);
    }
    assert!(r.objective().misfit < 0.05 * r.trace[0].objective.misfit);
    // The peak sits inside the inclusion.
    let (k, _) = r
        .field
        .mua
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    assert!(mesh.node(k).dist(Point2::new(6.0, 8.0)) < 6.0, "{:?}", mesh.node(k));
    assert!(r.field.musp == bg.musp);
}

#[test]
fn clamp_holds_for_strong_regularization_free_fits() {
    let mesh = small_mesh();
    let m = model(&mesh, Mode::Cw, 1.0);
    let truth = one_blob(&mesh);
    let mut data = m.simulate(&truth).unwrap();
    // Inconsistent data push some nodes towards zero.
    for (i, v) in data.values.iter_mut().enumerate() {
        *v += if i % 3 == 0 { 0.8 } else { -0.4 };
    }
    let bg = background_field(&mesh, &Background::default());
    let s = ReconSettings {
        tv_tau: 0.0,
        ..cw_settings()
    };
    let r = gauss_newton(&m, &data, &bg, &s).unwrap();
    assert!(r.field.mua.iter().chain(&r.field.musp).all(|&v| v >= s.min_coefficient));
    for w in r.trace.windows(2) {
        assert!(w[1].objective.total <= w[0].objective.total);
    }
}

#[test]
fn reference_calibration_removes_source_gain() {
    let mesh = small_mesh();
    let fine = Arc::new(build_disk_mesh(&MeshSpec { radius: 22.0, h_boundary: 0.75, h_interior: 1.25 }).unwrap());
    let truth_fine = one_blob(&fine);
    let bg_fine = background_field(&fine, &Background::default());
    let bg = background_field(&mesh, &Background::default());
    let m = model(&mesh, Mode::Cw, 1.0);
    let model_ref = m.simulate(&bg).unwrap();
    let mut cal = Vec::new();
    for gain in [1.0, 37.5] {
        let inst = model(&fine, Mode::Cw, gain);
        let y = inst.simulate(&truth_fine).unwrap();
        let y0 = inst.simulate(&bg_fine).unwrap();
        cal.push(reference_calibrated(&y, &y0, &model_ref).unwrap());
    }
    for (a, b) in cal[0].values.iter().zip(&cal[1].values) {
        assert!((a - b).abs() < 1e-10);
    }
    let s = cw_settings();
    let ra = gauss_newton(&m, &cal[0], &bg, &s).unwrap();
    let rb = gauss_newton(&m, &cal[1], &bg, &s).unwrap();
    let worst = ra.field.mua.iter().zip(&rb.field.mua).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // Round-off in the data is amplified by the truncated inner solves.
    assert!(worst < 1e-3 * 0.02, "{worst}");
    // Homogeneous data calibrate to the model's own prediction.
    let inst = model(&fine, Mode::Cw, 3.0);
    let y0 = inst.simulate(&bg_fine).unwrap();
    let c = reference_calibrated(&y0, &y0, &model_ref).unwrap();
    for (a, b) in c.values.iter().zip(&model_ref.values) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn reconstruction_is_bitwise_deterministic() {
    let mesh = small_mesh();
    let m = model(&mesh, Mode::Cw, 1.0);
    let data = m.simulate(&one_blob(&mesh)).unwrap();
    let bg = background_field(&mesh, &Background::default());
    let a = gauss_newton(&m, &data, &bg, &cw_settings()).unwrap();
    let b = gauss_newton(&m, &data, &bg, &cw_settings()).unwrap();
    assert_eq!(a.field, b.field);
    assert_eq!(trace_to_csv(&a.trace), trace_to_csv(&b.trace));
}

#[test]
fn td_joint_reconstruction_lowers_the_objective() {
    let mesh = small_mesh();
    let m = model(&mesh, Mode::Td, 1.0);
    let data = m.simulate(&one_blob(&mesh)).unwrap();
    let bg = background_field(&mesh, &Background::default());
    let s = ReconSettings {
        outer_iterations: 3,
        ..ReconSettings::default()
    };
    let r = gauss_newton(&m, &data, &bg, &s).unwrap();
    assert_eq!(r.iterations(), 3);
    assert!(r.objective().total < 0.5 * r.trace[0].objective.total);
    assert!(r.field.musp != bg.musp);
}

#[test]
fn mode_mismatch_and_bad_settings_are_rejected() {
    let mesh = small_mesh();
    let m = model(&mesh, Mode::Cw, 1.0);
    let bg = background_field(&mesh, &Background::default());
    let data = m.simulate(&bg).unwrap();
    let td = ReconSettings::default();
    assert!(gauss_newton(&m, &data, &bg, &td).is_err());
    let bad = ReconSettings {
        line_search_shrink: 1.5,
        ..cw_settings()
    };
    assert!(matches!(gauss_newton(&m, &data, &bg, &bad), Err(dotsim::Error::InvalidSettings(_))));
}

#[test]
fn field_and_trace_csv() {
    let mesh = small_mesh();
    let f = one_blob(&mesh);
    let text = field_to_csv(&mesh, &f);
    assert!(text.starts_with("node_id,x,y,mua,musp\n"));
    assert_eq!(text.lines().count(), mesh.node_count() + 1);
    let back = field_from_csv(&text, f.n).unwrap();
    assert_eq!(back, f);
    assert!(field_from_csv("node_id,x,y,mua,musp\n0,0,0,abc,1\n", 1.4).is_err());

    let m = model(&mesh, Mode::Cw, 1.0);
    let data = m.simulate(&f).unwrap();
    let bg = background_field(&mesh, &Background::default());
    let r = gauss_newton(&m, &data, &bg, &ReconSettings { outer_iterations: 2, ..cw_settings() }).unwrap();
    let csv = trace_to_csv(&r.trace);
    assert_eq!(
        csv.lines().next().unwrap(),
        "iteration,misfit,reg,total,step,cg_iterations,backtracks"
    );
    assert_eq!(csv.lines().count(), r.trace.len() + 1);
    let dir = tempfile::tempdir().unwrap();
    write_recon(dir.path(), "r", &mesh, &r).unwrap();
    assert!(dir.path().join("r.csv").exists() && dir.path().join("r_trace.csv").exists());
}

#[test]
fn settings_toml_rejects_unknown_keys() {
    let s: ReconSettings = toml::from_str("tv_tau = 0.05\nmode = \"cw\"").unwrap();
    assert_eq!(s.tv_tau, 0.05);
    assert_eq!(s.mode, Mode::Cw);
    assert!(toml::from_str::<ReconSettings>("tv_tua = 0.05").is_err());
}
