use std::f64::consts::{FRAC_PI_2, PI};

use super::{signed_area, Mesh, MeshSpec, Point2};
use crate::error::{Error, Result};

/// Radius below which the innermost ring collapses to a single center node,
/// as a fraction of the local edge length.
const CENTER_COLLAPSE: f64 = 0.6;

struct Ring {
    radius: f64,
    count: usize,
    /// Angular offset in units of the ring's angular step (0 or 1/2).
    offset: f64,
}

fn plan_rings(spec: &MeshSpec) -> Vec<Ring> {
    let row_height = 3f64.sqrt() / 2.0;
    let mut rings = Vec::new();
    let mut r = spec.radius;
    let mut k = 0usize;
    loop {
        let h = spec.edge_length_at(r);
        let count = ((2.0 * PI * r / h).round() as usize).max(if k == 0 { 6 } else { 3 });
        rings.push(Ring {
            radius: r,
            count,
            offset: if k % 2 == 0 { 0.0 } else { 0.5 },
        });
        let next = r - spec.edge_length_at(r) * row_height;
        if next < CENTER_COLLAPSE * spec.edge_length_at(next.max(0.0)) {
            break;
        }
        r = next;
        k += 1;
    }
    rings
}

/// Builds the graded disk mesh, failing if it would exceed `node_cap` nodes.
///
/// Rings are placed from the rim inwards with a row spacing of
/// `h(r)·√3/2`, and alternate rings are staggered by half an angular step.
/// Node angles start at the top of the disk (+y), so the node set is
/// mirror-symmetric about the vertical axis.
pub fn build_disk_mesh_with_cap(spec: &MeshSpec, node_cap: usize) -> Result<Mesh> {
    spec.validate()?;
    let rings = plan_rings(spec);
    let needed = rings.iter().map(|r| r.count).sum::<usize>() + 1;
    if needed > node_cap {
        return Err(Error::NodeCapExceeded {
            needed,
            cap: node_cap,
        });
    }

    let mut nodes = Vec::with_capacity(needed);
    for ring in &rings {
        let step = 2.0 * PI / ring.count as f64;
        for j in 0..ring.count {
            let theta = FRAC_PI_2 + (j as f64 + ring.offset) * step;
            nodes.push(Point2::new(ring.radius * theta.cos(), ring.radius * theta.sin()));
        }
    }
    nodes.push(Point2::new(0.0, 0.0));

    let boundary_count = rings[0].count;
    let pts: Vec<delaunator::Point> = nodes
        .iter()
        .map(|p| delaunator::Point { x: p.x, y: p.y })
        .collect();
    let tri = delaunator::triangulate(&pts);
    if tri.triangles.is_empty() {
        return Err(Error::InvalidMesh("triangulation produced no elements".into()));
    }

    let area_floor = 1e-12 * spec.h_boundary * spec.h_boundary;
    let mut elements = Vec::with_capacity(tri.triangles.len() / 3);
    for t in tri.triangles.chunks_exact(3) {
        let (a, b, c) = (t[0], t[1], t[2]);
        let area = signed_area(nodes[a], nodes[b], nodes[c]);
        if area.abs() <= area_floor {
            continue;
        }
        elements.push(if area > 0.0 { [a, b, c] } else { [a, c, b] });
    }
    // Lexicographic element order keeps indices stable across platforms.
    elements.sort_unstable();

    let boundary_edges = (0..boundary_count)
        .map(|j| [j, (j + 1) % boundary_count])
        .collect();
    let mesh = Mesh::from_parts(nodes, elements, boundary_edges)?;
    mesh.validate(spec.radius)?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;

    #[test]
    fn default_disk_boundary_on_circle() {
        let mesh = build_disk_mesh(&MeshSpec::default()).unwrap();
        for &[a, _] in mesh.boundary_edges() {
            assert!((mesh.node(a).norm() - 70.0).abs() < 1e-9);
        }
        assert!(mesh.min_quality() > 0.3, "quality {}", mesh.min_quality());
    }

    #[test]
    fn area_matches_disk() {
        let mesh = build_disk_mesh(&MeshSpec::default()).unwrap();
        let exact = PI * 70.0 * 70.0;
        let rel = (mesh.total_area() - exact).abs() / exact;
        assert!(rel < 5e-3, "relative area error {rel}");
    }

    #[test]
    fn tiny_disk_is_valid() {
        let spec = MeshSpec {
            radius: 1.0,
            h_boundary: 1.0,
            h_interior: 1.0,
        };
        let mesh = build_disk_mesh(&spec).unwrap();
        assert!(mesh.element_count() >= 4);
        mesh.validate(1.0).unwrap();
    }

    #[test]
    fn node_cap_enforced() {
        let spec = MeshSpec {
            radius: 70.0,
            h_boundary: 0.1,
            h_interior: 0.2,
        };
        assert!(matches!(
            build_disk_mesh(&spec),
            Err(Error::NodeCapExceeded { .. })
        ));
        assert!(matches!(
            build_disk_mesh_with_cap(&MeshSpec::default(), 100),
            Err(Error::NodeCapExceeded { cap: 100, .. })
        ));
    }

    #[test]
    fn grading_runs_from_rim_to_center() {
        let spec = MeshSpec::default();
        let mesh = build_disk_mesh(&spec).unwrap();
        // Mean edge length in the outer and inner bands tracks h(r).
        let mut outer = (0.0, 0usize);
        let mut inner = (0.0, 0usize);
        for &[a, b] in mesh.edges() {
            let mid = Point2::new(
                0.5 * (mesh.node(a).x + mesh.node(b).x),
                0.5 * (mesh.node(a).y + mesh.node(b).y),
            );
            let len = mesh.node(a).dist(mesh.node(b));
            if mid.norm() > 65.0 {
                outer.0 += len;
                outer.1 += 1;
            } else if mid.norm() < 15.0 {
                inner.0 += len;
                inner.1 += 1;
            }
        }
        let outer = outer.0 / outer.1 as f64;
        let inner = inner.0 / inner.1 as f64;
        assert!(outer < 2.6 && outer > 1.6, "outer mean edge {outer}");
        assert!(inner > 4.0 && inner < 6.0, "inner mean edge {inner}");
    }

    #[test]
    fn nodes_are_mirror_symmetric() {
        let mesh = build_disk_mesh(&MeshSpec::default()).unwrap();
        for p in mesh.nodes() {
            let mirror = Point2::new(-p.x, p.y);
            let q = mesh.node(mesh.nearest_node(mirror));
            assert!(q.dist(mirror) < 1e-9);
        }
    }
}
