//! Optical parameter fields: a homogeneous background with hard-edged
//! circular inclusions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point2};

/// Nodal absorption and reduced scattering (mm⁻¹) with a constant refractive index.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalField {
    pub mua: Vec<f64>,
    pub musp: Vec<f64>,
    pub n: f64,
}

impl OpticalField {
    pub fn node_count(&self) -> usize {
        self.mua.len()
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.mua.len() != mesh.node_count() || self.musp.len() != mesh.node_count() {
            return Err(Error::InvalidField(format!(
                "field has {}/{} values for {} nodes",
                self.mua.len(),
                self.musp.len(),
                mesh.node_count()
            )));
        }
        if !(self.n >= 1.0) {
            return Err(Error::InvalidField(format!("refractive index {} < 1", self.n)));
        }
        if let Some(i) = self
            .mua
            .iter()
            .zip(&self.musp)
            .position(|(&a, &s)| !(a > 0.0 && s > 0.0 && a.is_finite() && s.is_finite()))
        {
            return Err(Error::InvalidField(format!(
                "non-positive coefficient at node {i}: mua {}, musp {}",
                self.mua[i], self.musp[i]
            )));
        }
        Ok(())
    }

    /// Content hash used in provenance records.
    pub fn hash(&self) -> String {
        let n = [self.n];
        crate::provenance::hash_f64s([self.mua.as_slice(), self.musp.as_slice(), &n[..]])
    }
}

/// Homogeneous background parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Background {
    pub mua: f64,
    pub musp: f64,
    pub n: f64,
}

impl Default for Background {
    /// Adult brain-tissue values at near-infrared wavelengths.
    fn default() -> Self {
        Self {
            mua: 0.02,
            musp: 0.67,
            n: 1.4,
        }
    }
}

pub fn homogeneous_disk(mesh: &Mesh, mua0: f64, musp0: f64, n: f64) -> OpticalField {
    OpticalField {
        mua: vec![mua0; mesh.node_count()],
        musp: vec![musp0; mesh.node_count()],
        n,
    }
}

pub fn background_field(mesh: &Mesh, bg: &Background) -> OpticalField {
    homogeneous_disk(mesh, bg.mua, bg.musp, bg.n)
}

/// Circular inclusion scaling both coefficients by `contrast`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub center: Point2,
    /// Diameter in mm.
    pub width: f64,
    pub contrast: f64,
}

impl Inclusion {
    pub fn contains(&self, p: Point2) -> bool {
        p.dist(self.center) <= 0.5 * self.width * (1.0 + 1e-12)
    }
}

/// Multiplies `mua` and `musp` of every node within the inclusion disk.
pub fn add_inclusion(field: &OpticalField, mesh: &Mesh, inc: &Inclusion) -> Result<OpticalField> {
    if !(inc.width > 0.0 && inc.contrast > 0.0) {
        return Err(Error::InvalidPhantom(format!(
            "inclusion needs width > 0 and contrast > 0, got {inc:?}"
        )));
    }
    let radius = mesh.radius();
    if inc.center.norm() + 0.5 * inc.width > radius * (1.0 + 1e-12) {
        return Err(Error::InvalidPhantom(format!(
            "inclusion at ({}, {}) with width {} extends outside the disk of radius {radius}",
            inc.center.x, inc.center.y, inc.width
        )));
    }
    let mut out = field.clone();
    for (i, p) in mesh.nodes().iter().enumerate() {
        if inc.contains(*p) {
            out.mua[i] *= inc.contrast;
            out.musp[i] *= inc.contrast;
        }
    }
    Ok(out)
}

/// How the phantom depth is measured from the rim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthConvention {
    /// Rim to the nearest (top) point of each inclusion.
    Top,
    /// Rim to each inclusion center.
    Center,
}

/// Two equal inclusions placed symmetrically below the top of the disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// Horizontal center-to-center distance (mm).
    pub separation: f64,
    /// Depth below the rim (mm), measured per `depth_convention`.
    pub depth: f64,
    pub contrast: f64,
    pub depth_convention: DepthConvention,
    #[serde(default)]
    pub background: Background,
}

impl PhantomSpec {
    /// Inclusion diameter: half the separation.
    pub fn width(&self) -> f64 {
        0.5 * self.separation
    }

    /// Places both inclusions inside a disk of the given radius.
    ///
    /// Each center sits at distance `rho` from the origin, where the depth is
    /// measured along the radial line through the center; the two centers are
    /// mirror images across the vertical axis, `separation` apart horizontally.
    pub fn inclusions(&self, radius: f64) -> Result<[Inclusion; 2]> {
        let w = self.width();
        if !(self.separation > 0.0 && self.depth >= 0.0 && self.contrast > 0.0) {
            return Err(Error::InvalidPhantom(format!(
                "need separation > 0, depth >= 0, contrast > 0; got {self:?}"
            )));
        }
        let rho = match self.depth_convention {
            DepthConvention::Top => radius - self.depth - 0.5 * w,
            DepthConvention::Center => radius - self.depth,
        };
        let half = 0.5 * self.separation;
        if rho < half || rho + 0.5 * w > radius {
            return Err(Error::InvalidPhantom(format!(
                "separation {} at depth {} does not fit in a disk of radius {radius}",
                self.separation, self.depth
            )));
        }
        let y = (rho * rho - half * half).sqrt();
        let make = |x: f64| Inclusion {
            center: Point2::new(x, y),
            width: w,
            contrast: self.contrast,
        };
        Ok([make(-half), make(half)])
    }

    pub fn phantom(&self, radius: f64) -> Result<Phantom> {
        Ok(Phantom {
            background: self.background,
            inclusions: self.inclusions(radius)?.to_vec(),
            depth_convention: self.depth_convention,
        })
    }
}

pub fn two_inclusion_phantom(mesh: &Mesh, spec: &PhantomSpec) -> Result<OpticalField> {
    spec.phantom(mesh.radius())?.field(mesh)
}

/// Serializable phantom description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phantom {
    pub background: Background,
    pub inclusions: Vec<Inclusion>,
    pub depth_convention: DepthConvention,
}

impl Phantom {
    pub fn field(&self, mesh: &Mesh) -> Result<OpticalField> {
        let mut field = background_field(mesh, &self.background);
        for inc in &self.inclusions {
            field = add_inclusion(&field, mesh, inc)?;
        }
        Ok(field)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
