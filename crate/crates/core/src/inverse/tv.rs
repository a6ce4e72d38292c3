//! Edge-based smoothed total variation on nodal images.
//!
//! `TV_β(x) = Σ_edges w_e sqrt((x_a − x_b)² + β²)` with `w_e` the edge length.

use crate::mesh::Mesh;

/// Edge list and weights of a mesh, reused across evaluations.
#[derive(Debug, Clone)]
pub struct TotalVariation {
    edges: Vec<[usize; 2]>,
    weights: Vec<f64>,
    beta: f64,
    n: usize,
}

/// Lagged-diffusivity Hessian: a weighted graph Laplacian with edge weights
/// `w_e / s_e`.
#[derive(Debug, Clone)]
pub struct TvHessian {
    edges: Vec<[usize; 2]>,
    coef: Vec<f64>,
    n: usize,
}

impl TotalVariation {
    pub fn new(mesh: &Mesh, beta: f64) -> Self {
        let edges = mesh.edges().to_vec();
        let weights = edges
            .iter()
            .map(|&[a, b]| mesh.node(a).dist(mesh.node(b)))
            .collect();
        Self {
            edges,
            weights,
            beta,
            n: mesh.node_count(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.edges
            .iter()
            .zip(&self.weights)
            .map(|(&[a, b], w)| w * (x[a] - x[b]).hypot(self.beta))
            .sum()
    }

    /// Value, gradient and lagged-diffusivity Hessian at `x`.
    pub fn gradient_hessian(&self, x: &[f64]) -> (f64, Vec<f64>, TvHessian) {
        let mut grad = vec![0.0; self.n];
        let mut coef = Vec::with_capacity(self.edges.len());
        let mut value = 0.0;
        for (&[a, b], &w) in self.edges.iter().zip(&self.weights) {
            let d = x[a] - x[b];
            let s = d.hypot(self.beta);
            value += w * s;
            let g = w * d / s;
            grad[a] += g;
            grad[b] -= g;
            coef.push(w / s);
        }
        let hess = TvHessian {
            edges: self.edges.clone(),
            coef,
            n: self.n,
        };
        (value, grad, hess)
    }
}

impl TvHessian {
    /// `out += scale · H v`.
    pub fn apply_add(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        for (&[a, b], &c) in self.edges.iter().zip(&self.coef) {
            let t = scale * c * (v[a] - v[b]);
            out[a] += t;
            out[b] -= t;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (&[a, b], &c) in self.edges.iter().zip(&self.coef) {
            d[a] += c;
            d[b] += c;
        }
        d
    }
}
