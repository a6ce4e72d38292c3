//! Optode placement on the disk rim and the discrete source/readout
//! functionals they induce on the mesh.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point2};

/// Source and detector positions on the rim of a disk of radius `radius`.
///
/// Both kinds of optode act through the same functional: the P1 basis
/// weights at a point `inset` mm inside the rim along the inward normal. A
/// source injects through it and a detector reads the fluence through it, so
/// swapping a source and a detector leaves the measurement unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptodeLayout {
    pub radius: f64,
    pub sources: Vec<Point2>,
    pub detectors: Vec<Point2>,
    /// Depth of the equivalent isotropic point source, one reduced
    /// scattering length (mm).
    pub inset: f64,
    /// Source power scale.
    #[serde(default = "unit")]
    pub source_strength: f64,
}

fn unit() -> f64 {
    1.0
}

fn rim_point(radius: f64, angle: f64) -> Point2 {
    Point2::new(radius * angle.cos(), radius * angle.sin())
}

impl OptodeLayout {
    /// Sources and detectors interleaved at equal angles around the full rim,
    /// starting with a source at the top (+y).
    pub fn full_ring(radius: f64, n_sources: usize, n_detectors: usize, inset: f64) -> Self {
        let total = n_sources + n_detectors;
        let step = 2.0 * std::f64::consts::PI / total as f64;
        let mut sources = Vec::with_capacity(n_sources);
        let mut detectors = Vec::with_capacity(n_detectors);
        // Alternate while both kinds remain, then append the leftovers.
        let mut k = 0;
        while sources.len() < n_sources || detectors.len() < n_detectors {
            let p = rim_point(radius, std::f64::consts::FRAC_PI_2 + k as f64 * step);
            let want_source = if sources.len() == n_sources {
                false
            } else if detectors.len() == n_detectors {
                true
            } else {
                k % 2 == 0
            };
            if want_source {
                sources.push(p);
            } else {
                detectors.push(p);
            }
            k += 1;
        }
        Self {
            radius,
            sources,
            detectors,
            inset,
            source_strength: 1.0,
        }
    }

    /// Interleaved optodes on an arc of angular width `span` (radians)
    /// centered on angle `center` (radians).
    pub fn arc(
        radius: f64,
        n_sources: usize,
        n_detectors: usize,
        center: f64,
        span: f64,
        inset: f64,
    ) -> Self {
        let total = n_sources + n_detectors;
        let step = if total > 1 { span / (total - 1) as f64 } else { 0.0 };
        let start = center - 0.5 * span;
        let mut layout = Self {
            radius,
            sources: Vec::new(),
            detectors: Vec::new(),
            inset,
            source_strength: 1.0,
        };
        for k in 0..total {
            let p = rim_point(radius, start + k as f64 * step);
            let is_source = (k % 2 == 0 && layout.sources.len() < n_sources)
                || layout.detectors.len() == n_detectors;
            if is_source {
                layout.sources.push(p);
            } else {
                layout.detectors.push(p);
            }
        }
        layout
    }

    /// Rotates every optode by `angle` radians about the disk center.
    pub fn rotated(&self, angle: f64) -> Self {
        let rot = |p: &Point2| {
            let (s, c) = angle.sin_cos();
            Point2::new(c * p.x - s * p.y, s * p.x + c * p.y)
        };
        Self {
            sources: self.sources.iter().map(rot).collect(),
            detectors: self.detectors.iter().map(rot).collect(),
            ..self.clone()
        }
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.detectors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() || self.detectors.is_empty() {
            return Err(Error::InvalidLayout("need at least one source and one detector".into()));
        }
        if !(self.inset >= 0.0 && self.inset < self.radius) {
            return Err(Error::InvalidLayout(format!("inset {} out of range", self.inset)));
        }
        if !(self.source_strength > 0.0) {
            return Err(Error::InvalidLayout("source strength must be positive".into()));
        }
        for p in self.sources.iter().chain(&self.detectors) {
            if (p.norm() - self.radius).abs() > 1e-6 {
                return Err(Error::InvalidLayout(format!(
                    "optode ({}, {}) is {} mm off the rim",
                    p.x,
                    p.y,
                    p.norm() - self.radius
                )));
            }
        }
        Ok(())
    }

    /// Interior point where an optode at rim position `p` acts.
    pub fn inset_point(&self, p: Point2) -> Point2 {
        let s = 1.0 - self.inset / p.norm();
        Point2::new(s * p.x, s * p.y)
    }

    pub fn source_vectors(&self, mesh: &Mesh) -> Result<Vec<OptodeVector>> {
        self.sources
            .iter()
            .map(|&p| Ok(OptodeVector::at(mesh, self.inset_point(p))?.scaled(self.source_strength)))
            .collect()
    }

    pub fn detector_vectors(&self, mesh: &Mesh) -> Result<Vec<OptodeVector>> {
        self.detectors
            .iter()
            .map(|&p| OptodeVector::at(mesh, self.inset_point(p)))
            .collect()
    }
}

/// Default interleaved full-ring layout on the mesh rim with the source
/// inset set by the background reduced scattering coefficient.
pub fn default_layout(mesh: &Mesh, n_sources: usize, n_detectors: usize, musp: f64) -> OptodeLayout {
    OptodeLayout::full_ring(mesh.radius(), n_sources, n_detectors, 1.0 / musp)
}

/// Sparse nodal functional with at most three nonzeros (one element).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptodeVector {
    pub nodes: [usize; 3],
    pub weights: [f64; 3],
}

impl OptodeVector {
    pub fn at(mesh: &Mesh, p: Point2) -> Result<Self> {
        let (e, w) = mesh.basis_at(p)?;
        Ok(Self {
            nodes: mesh.elements()[e],
            weights: w,
        })
    }

    pub fn scaled(self, s: f64) -> Self {
        Self {
            nodes: self.nodes,
            weights: self.weights.map(|w| w * s),
        }
    }

    pub fn dot(&self, field: &[f64]) -> f64 {
        (0..3).map(|k| self.weights[k] * field[self.nodes[k]]).sum()
    }

    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.add_to(&mut v, 1.0);
        v
    }

    pub fn add_to(&self, v: &mut [f64], scale: f64) {
        for k in 0..3 {
            v[self.nodes[k]] += scale * self.weights[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_plus_ten_interleaved() {
        let l = OptodeLayout::full_ring(70.0, 10, 10, 1.0 / 0.67);
        l.validate().unwrap();
        assert_eq!(l.n_sources(), 10);
        assert_eq!(l.n_detectors(), 10);
        let step = 18f64.to_radians();
        for k in 0..10 {
            let expect_s = std::f64::consts::FRAC_PI_2 + 2.0 * k as f64 * step;
            assert!(l.sources[k].dist(rim_point(70.0, expect_s)) < 1e-9);
            assert!(l.detectors[k].dist(rim_point(70.0, expect_s + step)) < 1e-9);
        }
        for p in l.sources.iter().chain(&l.detectors) {
            assert!((p.norm() - 70.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_pair_is_antipodal() {
        let l = OptodeLayout::full_ring(70.0, 1, 1, 1.5);
        let d = l.sources[0].dist(l.detectors[0]);
        assert!((d - 140.0).abs() < 1e-9);
    }

    #[test]
    fn arc_layout_spans_requested_angle() {
        let l = OptodeLayout::arc(70.0, 3, 2, std::f64::consts::FRAC_PI_2, 1.0, 1.5);
        l.validate().unwrap();
        assert_eq!(l.n_sources(), 3);
        assert_eq!(l.n_detectors(), 2);
        let first = l.sources[0];
        let last = l.sources[2];
        let angle = (first.x * last.x + first.y * last.y) / (70.0 * 70.0);
        assert!((angle.acos() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn off_rim_optode_rejected() {
        let mut l = OptodeLayout::full_ring(70.0, 2, 2, 1.5);
        l.sources[0] = Point2::new(0.0, 69.0);
        assert!(l.validate().is_err());
    }
}
