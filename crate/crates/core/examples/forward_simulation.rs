//! CW and time-gated measurements of a homogeneous disk and of the phantom,
//! with the gated data summed against the CW data.
//!
//! cargo run --release --example forward_simulation

use std::sync::Arc;

use dotsim::forward::{default_layout, ForwardModel, Mode, TimeGrid};
use dotsim::medium::{background_field, two_inclusion_phantom, Background, DepthConvention, PhantomSpec};
use dotsim::mesh::{build_disk_mesh, MeshSpec};

fn main() -> dotsim::Result<()> {
    let mesh = Arc::new(build_disk_mesh(&MeshSpec::default())?);
    let bg = Background::default();
    let layout = default_layout(&mesh, 10, 10, bg.musp);
    let homogeneous = background_field(&mesh, &bg);
    let phantom = two_inclusion_phantom(
        &mesh,
        &PhantomSpec {
            separation: 20.0,
            depth: 10.0,
            contrast: 2.0,
            depth_convention: DepthConvention::Top,
            background: bg,
        },
    )?;

    let td = ForwardModel::new(mesh.clone(), layout, Mode::Td, TimeGrid::default())?;
    let cw = td.with_mode(Mode::Cw)?;
    let y_cw = cw.simulate(&homogeneous)?;
    let y_td = td.simulate(&homogeneous)?;
    println!("homogeneous disk, source 0:");
    println!(" det    ln I (CW)   ln I per 640 ps gate (TD)");
    for d in 0..10 {
        let gates: Vec<String> = (0..7).map(|b| format!("{:7.2}", y_td.get(0, d, b))).collect();
        println!("{d:4} {:11.4}   {}", y_cw.get(0, d, 0), gates.join(" "));
    }

    let p_cw = cw.simulate(&phantom)?;
    let p_td = td.simulate(&phantom)?;
    let change = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!(
        "largest ln I change from the inclusions: CW {:.4}, TD {:.4}",
        change(&p_cw.values, &y_cw.values),
        change(&p_td.values, &y_td.values)
    );

    // Gates over a long window integrate to the CW intensity.
    let long = ForwardModel::new(mesh.clone(), default_layout(&mesh, 10, 10, bg.musp), Mode::Td, TimeGrid::single_gate(20.0, 10_000.0))?;
    let total = long.simulate(&homogeneous)?;
    let worst = total
        .values
        .iter()
        .zip(&y_cw.values)
        .map(|(a, b)| (a.exp() / b.exp() - 1.0).abs())
        .fold(0.0, f64::max);
    println!("10 ns gate vs CW, worst relative difference {worst:.2e}");
    Ok(())
}
