//! Adjoint Jacobian of the log data for one source-detector pair: where the
//! CW and the late-gate TD measurements are sensitive to absorption.
//!
//! cargo run --release --example sensitivity [out.csv]

use std::sync::Arc;

use dotsim::forward::{default_layout, ForwardModel, Mode, TimeGrid};
use dotsim::jacobian::{jacobian, JacobianSettings};
use dotsim::medium::{background_field, Background};
use dotsim::mesh::{build_disk_mesh, MeshSpec, Point2};
use dotsim::provenance::fmt_f64;

fn main() -> dotsim::Result<()> {
    let mesh = Arc::new(build_disk_mesh(&MeshSpec::default())?);
    let bg = Background::default();
    let field = background_field(&mesh, &bg);
    let layout = default_layout(&mesh, 10, 10, bg.musp);
    let td = ForwardModel::new(mesh.clone(), layout, Mode::Td, TimeGrid::default())?;
    let cw = td.with_mode(Mode::Cw)?;
    let settings = JacobianSettings::default();
    let j_cw = jacobian(&cw, &cw.assemble(&field)?, &settings)?;
    let j_td = jacobian(&td, &td.assemble(&field)?, &settings)?;

    // Source 0 at the top, detector 0 next to it.
    let depth_of_peak = |row: &[f64]| {
        let (k, _) = row
            .iter()
            .enumerate()
            .filter(|(k, _)| mesh.node(*k).norm() < mesh.radius() - 3.0)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        mesh.radius() - mesh.node(k).norm()
    };
    let mean_depth = |row: &[f64]| {
        let w: f64 = row.iter().map(|v| v.abs()).sum();
        row.iter()
            .enumerate()
            .map(|(k, v)| v.abs() * (mesh.radius() - mesh.node(k).norm()))
            .sum::<f64>()
            / w
    };
    let r_cw = j_cw.row_index(0, 0, 0);
    println!(
        "CW      : strongest interior sensitivity {:.1} mm deep, mean depth {:.1} mm",
        depth_of_peak(j_cw.mua_row(r_cw)),
        mean_depth(j_cw.mua_row(r_cw))
    );
    for b in 0..7 {
        let r = j_td.row_index(0, 0, b);
        println!(
            "TD gate {b}: strongest interior sensitivity {:.1} mm deep, mean depth {:.1} mm",
            depth_of_peak(j_td.mua_row(r)),
            mean_depth(j_td.mua_row(r))
        );
    }

    let path = std::env::args().nth(1).unwrap_or_else(|| "sensitivity.csv".into());
    let mut csv = String::from("node_id,x,y,cw,td_gate6\n");
    let late = j_td.row_index(0, 0, 6);
    for (k, p) in mesh.nodes().iter().enumerate() {
        let Point2 { x, y } = *p;
        csv.push_str(&format!(
            "{k},{},{},{},{}\n",
            fmt_f64(x),
            fmt_f64(y),
            fmt_f64(j_cw.mua_row(r_cw)[k]),
            fmt_f64(j_td.mua_row(late)[k])
        ));
    }
    std::fs::write(&path, csv)?;
    println!("wrote {path}");
    Ok(())
}
