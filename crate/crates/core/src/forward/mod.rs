//! Diffusion forward model: FEM assembly, CW and TD solves, optode layouts
//! and log-intensity measurements.

pub mod cw;
pub mod fem;
pub mod layout;
pub mod measurement;
pub mod optics;
pub mod td;

use std::sync::Arc;

use rayon::prelude::*;

pub use cw::{cw_readout, solve_cw};
pub use fem::{assemble, FemGeometry, FemSystem};
pub use layout::{default_layout, OptodeLayout, OptodeVector};
pub use measurement::{Measurement, MeasurementSidecar, Mode, Provenance};
pub use optics::{
    boundary_factor, diffusion_coefficient, effective_attenuation, effective_reflection,
    light_speed, SPEED_OF_LIGHT_MM_PER_PS,
};
pub use td::{solve_td, TdSolution, TdStepper, TimeGrid};

use crate::error::Result;
use crate::medium::OpticalField;
use crate::mesh::Mesh;

/// A mesh, a layout and an acquisition mode: maps optical fields to
/// measurements.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    geometry: Arc<FemGeometry>,
    layout: OptodeLayout,
    sources: Vec<OptodeVector>,
    detectors: Vec<OptodeVector>,
    mode: Mode,
    grid: TimeGrid,
}

impl ForwardModel {
    pub fn new(mesh: Arc<Mesh>, layout: OptodeLayout, mode: Mode, grid: TimeGrid) -> Result<Self> {
        Self::with_geometry(Arc::new(FemGeometry::new(mesh)), layout, mode, grid)
    }

    pub fn with_geometry(
        geometry: Arc<FemGeometry>,
        layout: OptodeLayout,
        mode: Mode,
        grid: TimeGrid,
    ) -> Result<Self> {
        layout.validate()?;
        if mode == Mode::Td {
            grid.validate()?;
        }
        let sources = layout.source_vectors(geometry.mesh())?;
        let detectors = layout.detector_vectors(geometry.mesh())?;
        Ok(Self {
            geometry,
            layout,
            sources,
            detectors,
            mode,
            grid,
        })
    }

    pub fn geometry(&self) -> &Arc<FemGeometry> {
        &self.geometry
    }

    pub fn mesh(&self) -> &Mesh {
        self.geometry.mesh()
    }

    pub fn layout(&self) -> &OptodeLayout {
        &self.layout
    }

    pub fn sources(&self) -> &[OptodeVector] {
        &self.sources
    }

    pub fn detectors(&self) -> &[OptodeVector] {
        &self.detectors
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// The same model in another mode.
    pub fn with_mode(&self, mode: Mode) -> Result<Self> {
        if mode == Mode::Td {
            self.grid.validate()?;
        }
        Ok(Self {
            mode,
            ..self.clone()
        })
    }

    pub fn n_bins(&self) -> usize {
        match self.mode {
            Mode::Cw => 1,
            Mode::Td => self.grid.n_bins,
        }
    }

    pub fn n_measurements(&self) -> usize {
        self.sources.len() * self.detectors.len() * self.n_bins()
    }

    pub fn assemble(&self, field: &OpticalField) -> Result<FemSystem> {
        assemble(&self.geometry, field)
    }

    /// Detector intensities `[s][d][b]` flattened in measurement order.
    pub fn intensities(&self, system: &FemSystem) -> Result<Vec<f64>> {
        let per_source: Vec<Vec<f64>> = match self.mode {
            Mode::Cw => self
                .sources
                .par_iter()
                .map(|q| {
                    let phi = solve_cw(system, q)?;
                    Ok(cw_readout(system, &phi, &self.detectors))
                })
                .collect::<Result<_>>()?,
            Mode::Td => {
                let stepper = TdStepper::new(system, &self.grid)?;
                self.sources
                    .par_iter()
                    .map(|q| {
                        let sol = solve_td(&stepper, q, &self.detectors)?;
                        Ok(sol.bins.into_iter().flatten().collect())
                    })
                    .collect::<Result<_>>()?
            }
        };
        Ok(per_source.into_iter().flatten().collect())
    }

    pub fn measure_system(&self, system: &FemSystem) -> Result<Measurement> {
        let values = self.intensities(system)?;
        Measurement::from_intensities(
            self.mode,
            self.sources.len(),
            self.detectors.len(),
            self.n_bins(),
            &values,
        )
    }

    /// Assembles and solves for every source, returning `y = ln I`.
    pub fn simulate(&self, field: &OpticalField) -> Result<Measurement> {
        self.measure_system(&self.assemble(field)?)
    }

    pub fn sidecar(&self, field: &OpticalField, seed: Option<u64>) -> MeasurementSidecar {
        MeasurementSidecar {
            mode: self.mode,
            n_sources: self.sources.len(),
            n_detectors: self.detectors.len(),
            n_bins: self.n_bins(),
            layout: self.layout.clone(),
            grid: (self.mode == Mode::Td).then_some(self.grid),
            provenance: Provenance {
                mesh_hash: self.mesh().hash(),
                field_hash: field.hash(),
                git_revision: crate::provenance::git_revision(),
                tool_version: crate::provenance::tool_version().to_string(),
                seed,
            },
        }
    }
}
