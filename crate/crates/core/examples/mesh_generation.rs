//! Builds the default graded disk mesh and a refined one, prints their
//! statistics and writes the default mesh in DOTMESH format.
//!
//! cargo run --release --example mesh_generation [out.dotmesh]

use dotsim::mesh::{build_disk_mesh, Mesh, MeshSpec};

fn main() -> dotsim::Result<()> {
    let spec = MeshSpec::default();
    for (label, s) in [("default", spec), ("refined", spec.refined())] {
        let mesh = build_disk_mesh(&s)?;
        mesh.validate(s.radius)?;
        println!(
            "{label:8} h {}/{} mm: {} nodes, {} elements, {} boundary edges, min quality {:.3}, area {:.1} mm^2",
            s.h_boundary,
            s.h_interior,
            mesh.node_count(),
            mesh.element_count(),
            mesh.boundary_edges().len(),
            mesh.min_quality(),
            mesh.total_area()
        );
    }
    let mesh = build_disk_mesh(&spec)?;
    let path = std::env::args().nth(1).unwrap_or_else(|| "disk.dotmesh".into());
    mesh.write(&path)?;
    let back = Mesh::read(&path)?;
    assert_eq!(back, mesh);
    println!("wrote {path} (sha256 {})", mesh.hash());
    Ok(())
}
