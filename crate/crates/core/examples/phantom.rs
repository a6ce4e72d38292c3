//! Places the two-inclusion phantom under both depth conventions and writes
//! the phantom description as JSON.
//!
//! cargo run --release --example phantom

use dotsim::medium::{Background, DepthConvention, PhantomSpec};
use dotsim::mesh::{build_disk_mesh, MeshSpec};

fn main() -> dotsim::Result<()> {
    let mesh = build_disk_mesh(&MeshSpec::default())?;
    for convention in [DepthConvention::Top, DepthConvention::Center] {
        let spec = PhantomSpec {
            separation: 20.0,
            depth: 10.0,
            contrast: 2.0,
            depth_convention: convention,
            background: Background::default(),
        };
        let phantom = spec.phantom(mesh.radius())?;
        let field = phantom.field(&mesh)?;
        let inside = field.mua.iter().filter(|&&m| m > spec.background.mua).count();
        println!("{convention:?}: {inside} nodes inside the inclusions");
        for inc in &phantom.inclusions {
            println!(
                "  center ({:.3}, {:.3}) mm, width {} mm, rim distance of center {:.3} mm",
                inc.center.x,
                inc.center.y,
                inc.width,
                mesh.radius() - inc.center.norm()
            );
        }
        if convention == DepthConvention::Top {
            println!("{}", phantom.to_json()?);
        }
    }
    Ok(())
}
