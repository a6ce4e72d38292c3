//! P1 Galerkin assembly of the diffusion operator
//! `−∇·κ∇φ + μa φ` with a Robin (partial-current) boundary term.

use std::sync::{Arc, OnceLock};

use super::optics::{boundary_factor, diffusion_coefficient, light_speed};
use crate::error::{Error, Result};
use crate::linalg::{nested_dissection, LdlFactor, LdlSymbolic, SymMatrix, SymPattern};
use crate::medium::OpticalField;
use crate::mesh::Mesh;

/// Parameter-independent per-mesh data: sparsity pattern, elimination
/// ordering, element areas, unit stiffness matrices and element-to-slot maps.
#[derive(Debug)]
pub struct FemGeometry {
    mesh: Arc<Mesh>,
    pattern: Arc<SymPattern>,
    symbolic: Arc<LdlSymbolic>,
    areas: Vec<f64>,
    /// `∫ ∇N_a · ∇N_b` per element.
    unit_stiffness: Vec<[[f64; 3]; 3]>,
    /// Pattern slot of `(tri[a], tri[b])` per element.
    slots: Vec<[[usize; 3]; 3]>,
    /// Row index of each pattern slot.
    slot_rows: Vec<usize>,
    /// Elements incident to each node.
    node_elements: Vec<Vec<usize>>,
}

impl FemGeometry {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let pattern = Arc::new(SymPattern::from_edges(mesh.node_count(), mesh.edges()));
        let order = nested_dissection(&pattern, mesh.nodes());
        let symbolic = Arc::new(LdlSymbolic::analyze(pattern.clone(), order));
        let mut areas = Vec::with_capacity(mesh.element_count());
        let mut unit_stiffness = Vec::with_capacity(mesh.element_count());
        let mut slots = Vec::with_capacity(mesh.element_count());
        let mut node_elements = vec![Vec::new(); mesh.node_count()];
        for (e, tri) in mesh.elements().iter().enumerate() {
            let [p0, p1, p2] = mesh.element_vertices(e);
            let area = mesh.element_area(e);
            let p = [p0, p1, p2];
            // ∇N_a = (y_b − y_c, x_c − x_b) / (2·area), (a, b, c) cyclic.
            let mut grad = [[0.0; 2]; 3];
            for a in 0..3 {
                let b = (a + 1) % 3;
                let c = (a + 2) % 3;
                grad[a] = [
                    (p[b].y - p[c].y) / (2.0 * area),
                    (p[c].x - p[b].x) / (2.0 * area),
                ];
            }
            let mut k = [[0.0; 3]; 3];
            let mut s = [[0usize; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    k[a][b] = area * (grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1]);
                    s[a][b] = pattern.slot(tri[a], tri[b]);
                }
                node_elements[tri[a]].push(e);
            }
            areas.push(area);
            unit_stiffness.push(k);
            slots.push(s);
        }
        let mut slot_rows = vec![0; pattern.nnz()];
        for i in 0..pattern.n() {
            for s in pattern.row(i) {
                slot_rows[s] = i;
            }
        }
        Self {
            mesh,
            pattern,
            symbolic,
            areas,
            unit_stiffness,
            slots,
            slot_rows,
            node_elements,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    pub fn symbolic(&self) -> &Arc<LdlSymbolic> {
        &self.symbolic
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn unit_stiffness(&self) -> &[[[f64; 3]; 3]] {
        &self.unit_stiffness
    }

    pub fn element_slots(&self) -> &[[[usize; 3]; 3]] {
        &self.slots
    }

    pub fn slot_rows(&self) -> &[usize] {
        &self.slot_rows
    }

    pub fn node_elements(&self) -> &[Vec<usize>] {
        &self.node_elements
    }

    /// Consistent P1 mass matrix entry factor: `area/12 · (1 + δ_ab)`.
    pub fn mass_entry(&self, e: usize, a: usize, b: usize) -> f64 {
        self.areas[e] / 12.0 * if a == b { 2.0 } else { 1.0 }
    }

    /// Absorption mass: the mean of the consistent and lumped element
    /// matrices. Their O(h²) errors in the decay rate have opposite signs.
    pub fn absorption_entry(&self, e: usize, a: usize, b: usize) -> f64 {
        self.areas[e] / 24.0 * if a == b { 6.0 } else { 1.0 }
    }
}

/// Assembled finite-element operators for one optical field.
#[derive(Debug)]
pub struct FemSystem {
    geometry: Arc<FemGeometry>,
    field: OpticalField,
    /// Element diffusion coefficient from element-mean μa and μs′.
    kappa: Vec<f64>,
    /// Element-mean absorption.
    mua_elem: Vec<f64>,
    stiffness: SymMatrix,
    absorption: SymMatrix,
    mass: SymMatrix,
    lumped_mass: Vec<f64>,
    boundary: SymMatrix,
    system: SymMatrix,
    boundary_factor: f64,
    speed: f64,
    steady: OnceLock<std::result::Result<Arc<LdlFactor>, String>>,
}

/// Assembles the FEM operators for `field` on the geometry's mesh.
pub fn assemble(geometry: &Arc<FemGeometry>, field: &OpticalField) -> Result<FemSystem> {
    let mesh = geometry.mesh();
    field.validate(mesh)?;
    let pattern = geometry.pattern().clone();
    let ne = mesh.element_count();
    let mut kappa = Vec::with_capacity(ne);
    let mut mua_elem = Vec::with_capacity(ne);
    let mut stiffness = SymMatrix::zeros(pattern.clone());
    let mut absorption = SymMatrix::zeros(pattern.clone());
    let mut mass = SymMatrix::zeros(pattern.clone());
    let mut lumped_mass = vec![0.0; mesh.node_count()];

    for (e, tri) in mesh.elements().iter().enumerate() {
        let mua = tri.iter().map(|&i| field.mua[i]).sum::<f64>() / 3.0;
        let musp = tri.iter().map(|&i| field.musp[i]).sum::<f64>() / 3.0;
        let k = diffusion_coefficient(mua, musp);
        kappa.push(k);
        mua_elem.push(mua);
        let ks = &geometry.unit_stiffness[e];
        let slots = &geometry.slots[e];
        for a in 0..3 {
            for b in 0..3 {
                let s = slots[a][b];
                let m = geometry.mass_entry(e, a, b);
                stiffness.values_mut()[s] += k * ks[a][b];
                absorption.values_mut()[s] += mua * geometry.absorption_entry(e, a, b);
                mass.values_mut()[s] += m;
            }
            lumped_mass[tri[a]] += geometry.areas[e] / 3.0;
        }
    }

    let a_factor = boundary_factor(field.n);
    let mut boundary = SymMatrix::zeros(pattern);
    for &[a, b] in mesh.boundary_edges() {
        let len = mesh.node(a).dist(mesh.node(b));
        let c = len / (6.0 * 2.0 * a_factor);
        boundary.add_sym(a, a, 2.0 * c);
        boundary.add_sym(b, b, 2.0 * c);
        boundary.add_sym(a, b, c);
    }
    let system = stiffness.axpy(1.0, &absorption).axpy(1.0, &boundary);

    Ok(FemSystem {
        geometry: geometry.clone(),
        field: field.clone(),
        kappa,
        mua_elem,
        stiffness,
        absorption,
        mass,
        lumped_mass,
        boundary,
        system,
        boundary_factor: a_factor,
        speed: light_speed(field.n),
        steady: OnceLock::new(),
    })
}

impl FemSystem {
    pub fn geometry(&self) -> &Arc<FemGeometry> {
        &self.geometry
    }

    pub fn mesh(&self) -> &Mesh {
        self.geometry.mesh()
    }

    pub fn field(&self) -> &OpticalField {
        &self.field
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn mua_elem(&self) -> &[f64] {
        &self.mua_elem
    }

    pub fn stiffness(&self) -> &SymMatrix {
        &self.stiffness
    }

    pub fn absorption(&self) -> &SymMatrix {
        &self.absorption
    }

    pub fn mass(&self) -> &SymMatrix {
        &self.mass
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    pub fn boundary(&self) -> &SymMatrix {
        &self.boundary
    }

    /// `K + M_a + B`.
    pub fn system(&self) -> &SymMatrix {
        &self.system
    }

    /// Refractive-index mismatch factor `A` of the Robin condition.
    pub fn boundary_factor(&self) -> f64 {
        self.boundary_factor
    }

    /// Light speed in the medium, mm/ps.
    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Overrides the propagation speed (mm/ps), leaving every other
    /// coefficient unchanged.
    pub fn with_speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }

    /// Cached factorization of the steady-state operator.
    pub fn steady_factor(&self) -> Result<Arc<LdlFactor>> {
        self.steady
            .get_or_init(|| {
                self.geometry
                    .symbolic
                    .factor(&self.system)
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })
            .clone()
            .map_err(|reason| Error::SolverFailure {
                reason,
                residual: f64::NAN,
            })
    }

    /// Factorization of `diag(shift) + theta · (K + M_a + B)`.
    pub fn factor_shifted(&self, shift: &[f64], theta: f64) -> Result<LdlFactor> {
        let mut m = self.system.scaled(theta);
        for (i, &s) in shift.iter().enumerate() {
            m.add_diag(i, s);
        }
        self.geometry.symbolic.factor(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::homogeneous_disk;
    use crate::mesh::{build_disk_mesh, MeshSpec};
    use std::f64::consts::PI;

    fn geometry(radius: f64, hb: f64, hi: f64) -> Arc<FemGeometry> {
        let mesh = build_disk_mesh(&MeshSpec {
            radius,
            h_boundary: hb,
            h_interior: hi,
        })
        .unwrap();
        Arc::new(FemGeometry::new(Arc::new(mesh)))
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let g = geometry(20.0, 1.5, 3.0);
        let f = homogeneous_disk(g.mesh(), 1.0, 1.0, 1.0);
        let sys = assemble(&g, &f).unwrap();
        for s in sys.stiffness().row_sums() {
            assert!(s.abs() < 1e-10, "row sum {s}");
        }
    }

    #[test]
    fn mass_sums_to_area() {
        let g = geometry(70.0, 2.0, 5.0);
        let f = homogeneous_disk(g.mesh(), 0.02, 0.67, 1.4);
        let sys = assemble(&g, &f).unwrap();
        let total: f64 = sys.mass().values().iter().sum();
        let exact = PI * 70.0 * 70.0;
        assert!((total - exact).abs() / exact < 5e-3);
        let lumped: f64 = sys.lumped_mass().iter().sum();
        assert!((lumped - total).abs() < 1e-8 * total);
    }

    #[test]
    fn stiffness_scales_with_kappa() {
        let g = geometry(20.0, 2.0, 4.0);
        let f1 = homogeneous_disk(g.mesh(), 0.02, 0.67, 1.4);
        let f2 = homogeneous_disk(g.mesh(), 0.04, 1.34, 1.4);
        let s1 = assemble(&g, &f1).unwrap();
        let s2 = assemble(&g, &f2).unwrap();
        for (a, b) in s1.stiffness().values().iter().zip(s2.stiffness().values()) {
            assert!((0.5 * a - b).abs() <= 1e-14 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn operators_are_symmetric_and_definite() {
        let g = geometry(20.0, 2.0, 4.0);
        let f = homogeneous_disk(g.mesh(), 0.02, 0.67, 1.4);
        let sys = assemble(&g, &f).unwrap();
        for m in [sys.stiffness(), sys.absorption(), sys.mass(), sys.boundary(), sys.system()] {
            assert!(m.is_symmetric(1e-14));
        }
        // Mass and full system factor as positive definite.
        g.symbolic().factor(sys.mass()).unwrap();
        sys.steady_factor().unwrap();
        // Stiffness and boundary are PSD: x'Kx >= 0 on a few probes.
        let n = g.mesh().node_count();
        for seed in 0..5u64 {
            let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 - 48.0).collect();
            for m in [sys.stiffness(), sys.boundary()] {
                let q = crate::linalg::dot(&x, &m.mul_vec(&x));
                assert!(q >= -1e-9);
            }
        }
    }

    #[test]
    fn rejects_mismatched_field() {
        let g = geometry(10.0, 2.0, 3.0);
        let f = OpticalField {
            mua: vec![0.02; 3],
            musp: vec![0.67; 3],
            n: 1.4,
        };
        assert!(assemble(&g, &f).is_err());
    }
}
