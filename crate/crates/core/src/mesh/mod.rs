//! Triangular meshes of a disk.
//!
//! Meshes are built from concentric node rings whose spacing follows a
//! quadratic grading law, so that elements are small at the rim (where the
//! optodes sit and the fluence varies fastest) and coarse at the center.
//! The node cloud is triangulated with a Delaunay triangulation; every
//! element is stored counter-clockwise.

mod generate;
mod io;

pub use generate::build_disk_mesh_with_cap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default limit on generated node count.
pub const DEFAULT_NODE_CAP: usize = 200_000;

/// Barycentric tolerance used when deciding whether a point lies in an element.
pub const BARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Disk mesh parameters, all lengths in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSpec {
    pub radius: f64,
    /// Target edge length at the rim.
    pub h_boundary: f64,
    /// Target edge length at the center.
    pub h_interior: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self {
            radius: 70.0,
            h_boundary: 2.0,
            h_interior: 5.0,
        }
    }
}

impl MeshSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.radius.is_finite()
            && self.radius > 0.0
            && self.h_boundary.is_finite()
            && self.h_boundary > 0.0
            && self.h_boundary <= self.h_interior
            && self.h_interior.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMeshSpec(format!(
                "need radius > 0 and 0 < h_boundary <= h_interior, got {self:?}"
            )))
        }
    }

    /// Both edge-length targets halved.
    pub fn refined(&self) -> Self {
        Self {
            radius: self.radius,
            h_boundary: self.h_boundary / 2.0,
            h_interior: self.h_interior / 2.0,
        }
    }

    /// Target edge length at distance `r` from the center.
    pub fn edge_length_at(&self, r: f64) -> f64 {
        let s = (r / self.radius).clamp(0.0, 1.0);
        self.h_interior + (self.h_boundary - self.h_interior) * s * s
    }
}

/// Builds a graded disk mesh with the default node cap.
pub fn build_disk_mesh(spec: &MeshSpec) -> Result<Mesh> {
    build_disk_mesh_with_cap(spec, DEFAULT_NODE_CAP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point2>,
    elements: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    edges: Vec<[usize; 2]>,
}

impl Mesh {
    /// Assembles a mesh from raw parts and checks index ranges, orientation,
    /// orphan nodes and boundary-loop closure.
    pub fn from_parts(
        nodes: Vec<Point2>,
        elements: Vec<[usize; 3]>,
        boundary_edges: Vec<[usize; 2]>,
    ) -> Result<Self> {
        let edges = unique_edges(&elements);
        let mesh = Self {
            nodes,
            elements,
            boundary_edges,
            edges,
        };
        mesh.check_topology()?;
        Ok(mesh)
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn node(&self, i: usize) -> Point2 {
        self.nodes[i]
    }

    pub fn element_vertices(&self, e: usize) -> [Point2; 3] {
        let [a, b, c] = self.elements[e];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area of element `e` (positive for counter-clockwise).
    pub fn element_area(&self, e: usize) -> f64 {
        let [p0, p1, p2] = self.element_vertices(e);
        signed_area(p0, p1, p2)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.element_count()).map(|e| self.element_area(e)).sum()
    }

    /// Largest distance of a boundary node from the origin.
    pub fn radius(&self) -> f64 {
        self.boundary_edges
            .iter()
            .map(|&[a, _]| self.nodes[a].norm())
            .fold(0.0, f64::max)
    }

    /// Boundary node indices in loop order.
    pub fn boundary_loop(&self) -> Vec<usize> {
        self.boundary_edges.iter().map(|&[a, _]| a).collect()
    }

    /// Element quality `2 r_in / r_circ`, equal to 1 for an equilateral triangle.
    pub fn element_quality(&self, e: usize) -> f64 {
        let [p0, p1, p2] = self.element_vertices(e);
        let a = p1.dist(p2);
        let b = p0.dist(p2);
        let c = p0.dist(p1);
        let area = signed_area(p0, p1, p2);
        16.0 * area * area / ((a + b + c) * a * b * c)
    }

    pub fn min_quality(&self) -> f64 {
        (0..self.element_count())
            .map(|e| self.element_quality(e))
            .fold(f64::INFINITY, f64::min)
    }

    /// Full validation against a disk of the given radius: topology checks
    /// plus every boundary node within 1e-9 mm of the circle.
    pub fn validate(&self, radius: f64) -> Result<()> {
        self.check_topology()?;
        for &[a, _] in &self.boundary_edges {
            let r = self.nodes[a].norm();
            if (r - radius).abs() > 1e-9 {
                return Err(Error::InvalidMesh(format!(
                    "boundary node {a} at r = {r}, expected {radius}"
                )));
            }
        }
        Ok(())
    }

    fn check_topology(&self) -> Result<()> {
        let n = self.nodes.len();
        if n < 3 || self.elements.is_empty() {
            return Err(Error::InvalidMesh("mesh has no elements".into()));
        }
        let mut used = vec![false; n];
        for (e, tri) in self.elements.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::InvalidMesh(format!(
                        "element {e} references node {v} of {n}"
                    )));
                }
                used[v] = true;
            }
            if self.element_area(e) <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "element {e} has non-positive signed area"
                )));
            }
        }
        if let Some(orphan) = used.iter().position(|u| !u) {
            return Err(Error::InvalidMesh(format!("node {orphan} is orphaned")));
        }
        self.check_boundary_loop()
    }

    fn check_boundary_loop(&self) -> Result<()> {
        let m = self.boundary_edges.len();
        if m < 3 {
            return Err(Error::InvalidMesh("boundary loop has fewer than 3 edges".into()));
        }
        // Consecutive edges must chain and the loop must close without revisiting.
        let mut seen = std::collections::HashSet::with_capacity(m);
        for k in 0..m {
            let [a, b] = self.boundary_edges[k];
            let [next_a, _] = self.boundary_edges[(k + 1) % m];
            if a >= self.nodes.len() || b >= self.nodes.len() {
                return Err(Error::InvalidMesh(format!("boundary edge {k} out of range")));
            }
            if b != next_a {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge {k} ({a},{b}) does not chain to ({next_a},..)"
                )));
            }
            if !seen.insert(a) {
                return Err(Error::InvalidMesh(format!(
                    "boundary loop revisits node {a}"
                )));
            }
        }
        // Every boundary edge must be an edge of exactly one element.
        let mut count = std::collections::HashMap::<[usize; 2], usize>::new();
        for tri in &self.elements {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        for &[a, b] in &self.boundary_edges {
            if count.get(&[a.min(b), a.max(b)]) != Some(&1) {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge ({a},{b}) is not a free element edge"
                )));
            }
        }
        let free = count.values().filter(|&&c| c == 1).count();
        if free != m {
            return Err(Error::InvalidMesh(format!(
                "mesh has {free} free edges but {m} boundary edges"
            )));
        }
        Ok(())
    }

    /// Barycentric coordinates of `p` with respect to element `e`.
    pub fn barycentric(&self, e: usize, p: Point2) -> [f64; 3] {
        let [p0, p1, p2] = self.element_vertices(e);
        let area = signed_area(p0, p1, p2);
        let l0 = signed_area(p, p1, p2) / area;
        let l1 = signed_area(p0, p, p2) / area;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Index of the lowest-numbered element containing `p`, if any.
    pub fn locate_element(&self, p: Point2) -> Option<usize> {
        (0..self.elements.len()).find(|&e| {
            let [p0, p1, p2] = self.element_vertices(e);
            let tol = 1e-9 * (1.0 + p.norm());
            if p.x < p0.x.min(p1.x).min(p2.x) - tol
                || p.x > p0.x.max(p1.x).max(p2.x) + tol
                || p.y < p0.y.min(p1.y).min(p2.y) - tol
                || p.y > p0.y.max(p1.y).max(p2.y) + tol
            {
                return false;
            }
            self.barycentric(e, p).iter().all(|&l| l >= -BARY_TOL)
        })
    }

    /// Element and barycentric weights used to evaluate a P1 field at `p`.
    ///
    /// Points inside the circumscribing circle but in the thin sliver between
    /// the polygonal boundary and the circle are snapped to the closest boundary
    /// element.
    pub fn basis_at(&self, p: Point2) -> Result<(usize, [f64; 3])> {
        if let Some(e) = self.locate_element(p) {
            return Ok((e, self.barycentric(e, p)));
        }
        if p.norm() <= self.radius() * (1.0 + 1e-9) {
            let mut best: Option<(f64, usize, [f64; 3])> = None;
            for e in 0..self.elements.len() {
                let l = self.barycentric(e, p);
                let worst = l.iter().cloned().fold(f64::INFINITY, f64::min);
                if best.map_or(true, |(w, _, _)| worst > w) {
                    best = Some((worst, e, l));
                }
            }
            if let Some((_, e, l)) = best {
                let clipped = l.map(|v| v.max(0.0));
                let s: f64 = clipped.iter().sum();
                return Ok((e, clipped.map(|v| v / s)));
            }
        }
        Err(Error::OutsideDomain { x: p.x, y: p.y })
    }

    /// Piecewise-linear interpolation of nodal values at `p`.
    pub fn interpolate(&self, values: &[f64], p: Point2) -> Result<f64> {
        if values.len() != self.node_count() {
            return Err(Error::Dimension(format!(
                "{} nodal values for {} nodes",
                values.len(),
                self.node_count()
            )));
        }
        let (e, w) = self.basis_at(p)?;
        let tri = self.elements[e];
        Ok((0..3).map(|k| w[k] * values[tri[k]]).sum())
    }

    /// Nearest node to `p` (ties to the lower index).
    pub fn nearest_node(&self, p: Point2) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in self.nodes.iter().enumerate() {
            let d = q.dist(p);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn is_boundary_node(&self) -> Vec<bool> {
        let mut flag = vec![false; self.node_count()];
        for &[a, b] in &self.boundary_edges {
            flag[a] = true;
            flag[b] = true;
        }
        flag
    }
}

pub(crate) fn signed_area(p0: Point2, p1: Point2, p2: Point2) -> f64 {
    0.5 * ((p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y))
}

fn unique_edges(elements: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut edges: Vec<[usize; 2]> = elements
        .iter()
        .flat_map(|t| {
            (0..3).map(move |k| {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                [a.min(b), a.max(b)]
            })
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> Mesh {
        // Unit square split along the diagonal (0,0)-(1,1).
        let nodes = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        let elements = vec![[0, 1, 2], [0, 2, 3]];
        let boundary = vec![[0, 1], [1, 2], [2, 3], [3, 0]];
        Mesh::from_parts(nodes, elements, boundary).unwrap()
    }

    #[test]
    fn shared_edge_resolves_to_lower_index() {
        let m = two_triangles();
        assert_eq!(m.locate_element(Point2::new(0.5, 0.5)), Some(0));
        assert_eq!(m.locate_element(Point2::new(0.7, 0.2)), Some(0));
        assert_eq!(m.locate_element(Point2::new(0.2, 0.7)), Some(1));
        // Swapping element order flips the winner on the shared edge.
        let swapped = Mesh::from_parts(
            m.nodes().to_vec(),
            vec![[0, 2, 3], [0, 1, 2]],
            m.boundary_edges().to_vec(),
        )
        .unwrap();
        assert_eq!(swapped.locate_element(Point2::new(0.5, 0.5)), Some(0));
        assert_eq!(swapped.elements()[0], [0, 2, 3]);
    }

    #[test]
    fn rejects_clockwise_element() {
        let err = Mesh::from_parts(
            vec![Point2::new(0.0, 0.0), Point2::new(0.0, 1.0), Point2::new(1.0, 0.0)],
            vec![[0, 1, 2]],
            vec![[0, 2], [2, 1], [1, 0]],
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_orphan_node() {
        let err = Mesh::from_parts(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
                Point2::new(5.0, 5.0),
            ],
            vec![[0, 1, 2]],
            vec![[0, 1], [1, 2], [2, 0]],
        );
        assert!(matches!(err, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn equilateral_quality_is_one() {
        let h = 3f64.sqrt() / 2.0;
        let m = Mesh::from_parts(
            vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.5, h)],
            vec![[0, 1, 2]],
            vec![[0, 1], [1, 2], [2, 0]],
        )
        .unwrap();
        assert!((m.element_quality(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(MeshSpec { radius: 0.0, ..Default::default() }.validate().is_err());
        assert!(MeshSpec { radius: 10.0, h_boundary: 3.0, h_interior: 2.0 }
            .validate()
            .is_err());
        assert!(MeshSpec::default().validate().is_ok());
    }
}
