//! Resolution and depth sweeps over two-inclusion phantoms, and the
//! discernibility test applied to each reconstruction.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::fem::FemGeometry;
use crate::forward::{default_layout, ForwardModel, Measurement, Mode, TimeGrid};
use crate::inverse::{gauss_newton, io as recon_io, reference_calibrated, ReconSettings, Termination};
use crate::medium::{background_field, Background, DepthConvention, PhantomSpec};
use crate::mesh::{build_disk_mesh, Mesh, MeshSpec, Point2};
use crate::provenance::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscernSettings {
    /// Largest background-subtracted valley/peak ratio still called two
    /// objects.
    pub threshold: f64,
    pub samples: usize,
    /// Half-length of the sampled line in units of the separation.
    pub half_extent: f64,
    /// Each peak must rise above the background by this fraction of the true
    /// inclusion excess.
    pub min_peak_fraction: f64,
}

impl Default for DiscernSettings {
    fn default() -> Self {
        Self {
            threshold: 0.8,
            samples: 201,
            half_extent: 1.5,
            min_peak_fraction: 0.1,
        }
    }
}

impl DiscernSettings {
    pub fn validate(&self) -> Result<()> {
        if self.threshold > 0.0
            && self.samples >= 3
            && self.samples % 2 == 1
            && self.half_extent >= 1.0
            && self.min_peak_fraction >= 0.0
        {
            Ok(())
        } else {
            Err(Error::InvalidSettings(format!(
                "discernibility needs threshold > 0, an odd sample count >= 3 and half_extent >= 1; got {self:?}"
            )))
        }
    }
}

/// Values sampled along the line through both inclusion centers. `s` is the
/// signed distance from their midpoint, negative toward the first center.
#[derive(Debug, Clone, PartialEq)]
pub struct LineProfile {
    pub s: Vec<f64>,
    pub points: Vec<Point2>,
    /// NaN where the line leaves the mesh.
    pub values: Vec<f64>,
}

impl LineProfile {
    pub fn sample(mesh: &Mesh, values: &[f64], centers: [Point2; 2], settings: &DiscernSettings) -> Self {
        let mid = Point2::new(0.5 * (centers[0].x + centers[1].x), 0.5 * (centers[0].y + centers[1].y));
        let sep = centers[0].dist(centers[1]);
        let (ux, uy) = ((centers[1].x - centers[0].x) / sep, (centers[1].y - centers[0].y) / sep);
        let half = settings.half_extent * sep;
        let n = settings.samples;
        let mut out = Self {
            s: Vec::with_capacity(n),
            points: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
        };
        for i in 0..n {
            let s = -half + 2.0 * half * i as f64 / (n - 1) as f64;
            let p = Point2::new(mid.x + s * ux, mid.y + s * uy);
            out.s.push(s);
            out.points.push(p);
            out.values.push(mesh.interpolate(values, p).unwrap_or(f64::NAN));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s_mm,x,y,mua\n");
        for ((s, p), v) in self.s.iter().zip(&self.points).zip(&self.values) {
            let _ = writeln!(out, "{},{},{},{}", fmt_f64(*s), fmt_f64(p.x), fmt_f64(p.y), fmt_f64(*v));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discernibility {
    pub discernible: bool,
    pub peaks: Option<[Point2; 2]>,
    pub dip_ratio: Option<f64>,
    /// Larger of the two peak-to-center distances (mm).
    pub loc_err: Option<f64>,
}

impl Discernibility {
    fn none() -> Self {
        Self {
            discernible: false,
            peaks: None,
            dip_ratio: None,
            loc_err: None,
        }
    }
}

/// What the classifier needs besides the profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileContext {
    pub separation: f64,
    pub background: f64,
    /// Smallest accepted background-subtracted peak height; infinite when the
    /// phantom has no inclusions.
    pub min_height: f64,
}

impl ProfileContext {
    pub fn new(phantom: &PhantomSpec, settings: &DiscernSettings) -> Self {
        let bg = phantom.background.mua;
        let excess = (phantom.contrast - 1.0) * bg;
        Self {
            separation: phantom.separation,
            background: bg,
            min_height: if excess > 0.0 {
                settings.min_peak_fraction * excess
            } else {
                f64::INFINITY
            },
        }
    }
}

fn local_maxima(v: &[f64]) -> Vec<usize> {
    (1..v.len().saturating_sub(1))
        .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
        .collect()
}

/// Two-peak test on a sampled profile.
pub fn classify(profile: &LineProfile, ctx: &ProfileContext, threshold: f64) -> Discernibility {
    let v = &profile.values;
    let half = 0.5 * ctx.separation;
    let maxima = local_maxima(v);
    let best = |center: f64| {
        maxima
            .iter()
            .copied()
            .filter(|&i| (profile.s[i] - center).abs() <= half)
            .fold(None, |acc: Option<usize>, i| match acc {
                Some(j) if v[j] >= v[i] => Some(j),
                _ => Some(i),
            })
    };
    let (Some(i1), Some(i2)) = (best(-half), best(half)) else {
        return Discernibility::none();
    };
    if i1 >= i2 {
        return Discernibility::none();
    }
    let h = (v[i1] - ctx.background).min(v[i2] - ctx.background);
    let valley = v[i1..=i2].iter().copied().fold(f64::INFINITY, f64::min);
    let dip_ratio = (valley - ctx.background) / h;
    let loc_err = (profile.s[i1] + half).abs().max((profile.s[i2] - half).abs());
    Discernibility {
        discernible: h > 0.0 && h >= ctx.min_height && dip_ratio <= threshold,
        peaks: Some([profile.points[i1], profile.points[i2]]),
        dip_ratio: (h > 0.0).then_some(dip_ratio),
        loc_err: Some(loc_err),
    }
}

/// Samples `mua` along the inclusion axis and applies [`classify`].
pub fn discernible(
    mesh: &Mesh,
    mua: &[f64],
    phantom: &PhantomSpec,
    settings: &DiscernSettings,
) -> Result<(Discernibility, LineProfile)> {
    settings.validate()?;
    let inc = phantom.inclusions(mesh.radius())?;
    let profile = LineProfile::sample(mesh, mua, [inc[0].center, inc[1].center], settings);
    let ctx = ProfileContext::new(phantom, settings);
    Ok((classify(&profile, &ctx, settings.threshold), profile))
}

/// Which mesh generates the synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMesh {
    /// Both edge-length targets halved.
    Refined,
    /// The reconstruction mesh itself.
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub modes: Vec<Mode>,
    pub separations: Vec<f64>,
    pub depths: Vec<f64>,
    pub contrast: f64,
    pub depth_convention: DepthConvention,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub mesh: MeshSpec,
    pub data_mesh: DataMesh,
    /// Calibrate data against a homogeneous reference measured on the data
    /// mesh.
    pub calibration: bool,
    pub n_sources: usize,
    pub n_detectors: usize,
    #[serde(default)]
    pub grid: TimeGrid,
    #[serde(default)]
    pub recon: ReconSettings,
    #[serde(default)]
    pub discern: DiscernSettings,
}

impl SweepSpec {
    fn base() -> Self {
        Self {
            modes: vec![Mode::Cw, Mode::Td],
            separations: vec![],
            depths: vec![],
            contrast: 2.0,
            depth_convention: DepthConvention::Top,
            background: Background::default(),
            mesh: MeshSpec::default(),
            data_mesh: DataMesh::Refined,
            calibration: true,
            n_sources: 10,
            n_detectors: 10,
            grid: TimeGrid::default(),
            recon: ReconSettings::default(),
            discern: DiscernSettings::default(),
        }
    }

    /// Separations 5, 10 and 20 mm at 10 mm depth to the inclusion tops.
    pub fn resolution() -> Self {
        Self {
            separations: vec![5.0, 10.0, 20.0],
            depths: vec![10.0],
            ..Self::base()
        }
    }

    /// Depths 20 to 50 mm to the inclusion centers at 30 mm separation.
    pub fn depth() -> Self {
        Self {
            separations: vec![30.0],
            depths: vec![20.0, 30.0, 40.0, 50.0],
            depth_convention: DepthConvention::Center,
            ..Self::base()
        }
    }

    pub fn figure(n: u32) -> Result<Self> {
        match n {
            3 => Ok(Self::resolution()),
            4 => Ok(Self::depth()),
            _ => Err(Error::InvalidSettings(format!("no sweep preset for figure {n}; expected 3 or 4"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0);
        if self.modes.is_empty() || !positive(&self.separations) || !positive(&self.depths) {
            return Err(Error::InvalidSettings(
                "sweep needs at least one mode and non-empty positive separation and depth lists".into(),
            ));
        }
        if !(self.contrast > 0.0) || self.n_sources == 0 || self.n_detectors == 0 {
            return Err(Error::InvalidSettings(format!(
                "sweep needs contrast > 0 and at least one source and detector; got contrast {}, {}x{}",
                self.contrast, self.n_sources, self.n_detectors
            )));
        }
        self.mesh.validate()?;
        self.recon.validate()?;
        self.discern.validate()?;
        if self.modes.contains(&Mode::Td) {
            self.grid.validate()?;
        }
        Ok(())
    }

    pub fn phantom(&self, separation: f64, depth: f64) -> PhantomSpec {
        PhantomSpec {
            separation,
            depth,
            contrast: self.contrast,
            depth_convention: self.depth_convention,
            background: self.background,
        }
    }

    /// Cells in mode-major, then separation, then depth order.
    pub fn cells(&self) -> Vec<(Mode, f64, f64)> {
        let mut out = Vec::new();
        for &m in &self.modes {
            for &s in &self.separations {
                for &d in &self.depths {
                    out.push((m, s, d));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub mode: Mode,
    pub separation: f64,
    pub depth: f64,
    pub discernible: bool,
    pub dip_ratio: Option<f64>,
    pub peaks: Option<[Point2; 2]>,
    pub loc_err: Option<f64>,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub error: Option<String>,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip)]
    pub profile: Option<(LineProfile, ProfileContext)>,
}

impl CellRecord {
    /// The same cell judged at another threshold.
    pub fn reclassified(&self, threshold: f64) -> bool {
        self.profile
            .as_ref()
            .is_some_and(|(p, ctx)| classify(p, ctx, threshold).discernible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<CellRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), fmt_f64)
}

impl SweepResult {
    pub fn to_summary_csv(&self) -> String {
        let mut out = String::from("mode,separation_mm,depth_mm,discernible,dip_ratio,peak1_x,peak2_x,loc_err_mm\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.mode,
                fmt_f64(r.separation),
                fmt_f64(r.depth),
                r.discernible,
                opt(r.dip_ratio),
                opt(r.peaks.map(|p| p[0].x)),
                opt(r.peaks.map(|p| p[1].x)),
                opt(r.loc_err)
            );
        }
        out
    }

    fn flags(&self, threshold: Option<f64>) -> impl Iterator<Item = (&CellRecord, bool)> {
        self.records.iter().map(move |r| {
            (r, threshold.map_or(r.discernible, |t| r.reclassified(t)))
        })
    }

    /// Smallest discernible separation at `depth` for `mode`.
    pub fn min_discernible_separation(&self, mode: Mode, depth: f64, threshold: Option<f64>) -> Option<f64> {
        self.flags(threshold)
            .filter(|(r, ok)| *ok && r.mode == mode && r.depth == depth)
            .map(|(r, _)| r.separation)
            .fold(None, |a: Option<f64>, s| Some(a.map_or(s, |a| a.min(s))))
    }

    /// Largest discernible depth at `separation` for `mode`.
    pub fn max_discernible_depth(&self, mode: Mode, separation: f64, threshold: Option<f64>) -> Option<f64> {
        self.flags(threshold)
            .filter(|(r, ok)| *ok && r.mode == mode && r.separation == separation)
            .map(|(r, _)| r.depth)
            .fold(None, |a: Option<f64>, d| Some(a.map_or(d, |a| a.max(d))))
    }

    /// Cells where CW is discernible but TD is not.
    pub fn ordering_violations(&self, threshold: Option<f64>) -> Vec<(f64, f64)> {
        let flags: Vec<_> = self.flags(threshold).collect();
        flags
            .iter()
            .filter(|(r, ok)| r.mode == Mode::Cw && *ok)
            .filter(|(cw, _)| {
                !flags.iter().any(|(td, ok)| {
                    td.mode == Mode::Td && *ok && td.separation == cw.separation && td.depth == cw.depth
                })
            })
            .map(|(r, _)| (r.separation, r.depth))
            .collect()
    }

    /// Discernibility that rises with depth or falls with separation.
    pub fn monotonicity_anomalies(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in &self.records {
            for b in &self.records {
                if a.mode != b.mode || a.discernible || !b.discernible {
                    continue;
                }
                if a.separation == b.separation && a.depth < b.depth {
                    out.push(format!(
                        "{} separation {}: depth {} not discernible but depth {} is",
                        a.mode, a.separation, a.depth, b.depth
                    ));
                }
                if a.depth == b.depth && a.separation > b.separation {
                    out.push(format!(
                        "{} depth {}: separation {} not discernible but separation {} is",
                        a.mode, a.depth, a.separation, b.separation
                    ));
                }
            }
        }
        out
    }
}

/// Everything shared by the cells of one mode.
struct ModeContext {
    data_model: ForwardModel,
    recon_model: ForwardModel,
    /// Homogeneous reference on the data mesh and its model prediction.
    calibration: Option<(Measurement, Measurement)>,
}

fn cell_stem(mode: Mode, separation: f64, depth: f64) -> String {
    format!("{}_sep{separation}_depth{depth}", mode.to_string().to_lowercase())
}

fn run_cell(
    spec: &SweepSpec,
    ctx: &ModeContext,
    mode: Mode,
    separation: f64,
    depth: f64,
    out_dir: Option<&Path>,
) -> Result<CellRecord> {
    let phantom = spec.phantom(separation, depth);
    let data_mesh = ctx.data_model.mesh();
    let mesh = ctx.recon_model.mesh();
    let truth = phantom.phantom(data_mesh.radius())?.field(data_mesh)?;
    let mut data = ctx.data_model.simulate(&truth)?;
    if let Some((reference, model_reference)) = &ctx.calibration {
        data = reference_calibrated(&data, reference, model_reference)?;
    }
    let init = background_field(mesh, &spec.background);
    let settings = ReconSettings { mode, ..spec.recon };
    let result = gauss_newton(&ctx.recon_model, &data, &init, &settings)?;
    let (verdict, profile) = discernible(mesh, &result.field.mua, &phantom, &spec.discern)?;
    let mut artifacts = Vec::new();
    if let Some(dir) = out_dir {
        let stem = cell_stem(mode, separation, depth);
        recon_io::write_recon(dir, &stem, mesh, &result)?;
        let profile_path = dir.join(format!("{stem}_profile.csv"));
        std::fs::write(&profile_path, profile.to_csv())?;
        artifacts.push(dir.join(format!("{stem}.csv")));
        artifacts.push(dir.join(format!("{stem}_trace.csv")));
        artifacts.push(profile_path);
    }
    Ok(CellRecord {
        mode,
        separation,
        depth,
        discernible: verdict.discernible,
        dip_ratio: verdict.dip_ratio,
        peaks: verdict.peaks,
        loc_err: verdict.loc_err,
        iterations: result.iterations(),
        termination: Some(result.termination),
        error: None,
        artifacts,
        profile: Some((profile, ProfileContext::new(&phantom, &spec.discern))),
    })
}

/// Runs every cell, writing per-cell artifacts and `summary.csv` into
/// `out_dir` when given. Failed cells are recorded and the sweep continues.
pub fn run_sweep(spec: &SweepSpec, out_dir: Option<&Path>) -> Result<SweepResult> {
    spec.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mesh = Arc::new(build_disk_mesh(&spec.mesh)?);
    let data_mesh = match spec.data_mesh {
        DataMesh::Same => mesh.clone(),
        DataMesh::Refined => Arc::new(build_disk_mesh(&spec.mesh.refined())?),
    };
    let geometry = Arc::new(FemGeometry::new(mesh.clone()));
    let data_geometry = if spec.data_mesh == DataMesh::Same {
        geometry.clone()
    } else {
        Arc::new(FemGeometry::new(data_mesh.clone()))
    };
    let layout = default_layout(&mesh, spec.n_sources, spec.n_detectors, spec.background.musp);
    let contexts: Vec<(Mode, ModeContext)> = spec
        .modes
        .iter()
        .map(|&mode| -> Result<(Mode, ModeContext)> {
            let data_model = ForwardModel::with_geometry(data_geometry.clone(), layout.clone(), mode, spec.grid)?;
            let recon_model = ForwardModel::with_geometry(geometry.clone(), layout.clone(), mode, spec.grid)?;
            let calibration = if spec.calibration {
                let reference = data_model.simulate(&background_field(&data_mesh, &spec.background))?;
                let model_reference = recon_model.simulate(&background_field(&mesh, &spec.background))?;
                Some((reference, model_reference))
            } else {
                None
            };
            Ok((
                mode,
                ModeContext {
                    data_model,
                    recon_model,
                    calibration,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let records: Vec<CellRecord> = spec
        .cells()
        .into_par_iter()
        .map(|(mode, separation, depth)| {
            let ctx = &contexts.iter().find(|(m, _)| *m == mode).unwrap().1;
            run_cell(spec, ctx, mode, separation, depth, out_dir).unwrap_or_else(|e| CellRecord {
                mode,
                separation,
                depth,
                discernible: false,
                dip_ratio: None,
                peaks: None,
                loc_err: None,
                iterations: 0,
                termination: None,
                error: Some(e.to_string()),
                artifacts: Vec::new(),
                profile: None,
            })
        })
        .collect();
    let result = SweepResult { records };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("summary.csv"), result.to_summary_csv())?;
    }
    Ok(result)
}
