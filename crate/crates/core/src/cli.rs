//! Batch front end behind the `dot` binary: TOML run configuration, the five
//! commands and their artifacts, run manifests and exit codes.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{discernible, run_sweep, DataMesh, DiscernSettings, SweepSpec};
use crate::forward::measurement::write_measurement;
use crate::forward::{FemGeometry, ForwardModel, Measurement, Mode, OptodeLayout, TimeGrid};
use crate::inverse::io::{field_to_csv, write_recon};
use crate::inverse::{gauss_newton, reference_calibrated, ReconSettings};
use crate::medium::{background_field, Background, DepthConvention, OpticalField, PhantomSpec};
use crate::mesh::{build_disk_mesh, MeshSpec};
use crate::provenance::{fmt_f64, git_revision, sha256_hex, tool_version};
use crate::tcspc::{
    acquire, chi_square, expected_histogram, pair_tpsf, saturation_curve, saturation_to_csv, validate_models,
    AcquisitionSettings, DetectorModel, HistogramSidecar, LaserModel, TdcModel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dot", version, about = "2D diffuse optical tomography and TCSPC simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Print the default configuration as TOML and exit.
    #[arg(long)]
    pub print_default_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the disk mesh.
    Mesh,
    /// Simulate measurements for the configured phantom.
    Forward,
    /// Reconstruct from a measurement file or from simulated phantom data.
    Recon,
    /// Run a resolution (3) or depth (4) sweep.
    Sweep {
        #[arg(long, value_parser = clap::value_parser!(u32).range(3..=4))]
        figure: u32,
    },
    /// Simulate a TCSPC acquisition of a diffusion TPSF.
    Tcspc,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Forward => "forward",
            Command::Recon => "recon",
            Command::Sweep { .. } => "sweep",
            Command::Tcspc => "tcspc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    FullRing,
    Arc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptodeConfig {
    pub n_sources: usize,
    pub n_detectors: usize,
    pub placement: Placement,
    /// Arc width in degrees, centered on the top of the disk.
    pub arc_span_deg: f64,
}

impl Default for OptodeConfig {
    fn default() -> Self {
        Self {
            n_sources: 10,
            n_detectors: 10,
            placement: Placement::FullRing,
            arc_span_deg: 180.0,
        }
    }
}

impl OptodeConfig {
    pub fn layout(&self, radius: f64, musp: f64) -> OptodeLayout {
        let inset = 1.0 / musp;
        match self.placement {
            Placement::FullRing => OptodeLayout::full_ring(radius, self.n_sources, self.n_detectors, inset),
            Placement::Arc => OptodeLayout::arc(
                radius,
                self.n_sources,
                self.n_detectors,
                std::f64::consts::FRAC_PI_2,
                self.arc_span_deg.to_radians(),
                inset,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub separation: f64,
    pub depth: f64,
    pub contrast: f64,
    pub depth_convention: DepthConvention,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            separation: 20.0,
            depth: 10.0,
            contrast: 2.0,
            depth_convention: DepthConvention::Top,
        }
    }
}

impl PhantomConfig {
    pub fn spec(&self, background: Background) -> PhantomSpec {
        PhantomSpec {
            separation: self.separation,
            depth: self.depth,
            contrast: self.contrast,
            depth_convention: self.depth_convention,
            background,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    pub mode: Mode,
    /// Simulate the background alone instead of the phantom.
    pub homogeneous: bool,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Td,
            homogeneous: false,
        }
    }
}

/// Where reconstruction data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Measurement CSV (`source_id,detector_id,bin_id,y`); simulated from the
    /// phantom when absent.
    pub measurement: Option<PathBuf>,
    /// Homogeneous reference measured with the same instrument.
    pub reference: Option<PathBuf>,
    /// Mesh for simulated data.
    pub data_mesh: DataMesh,
    /// Calibrate simulated data against a homogeneous reference.
    pub calibration: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            measurement: None,
            reference: None,
            data_mesh: DataMesh::Refined,
            calibration: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcspcConfig {
    /// Source-detector chord length for the TPSF (mm).
    pub separation: f64,
    pub tpsf_dt_ps: f64,
    pub tpsf_window_ps: f64,
    pub laser: LaserModel,
    pub detector: DetectorModel,
    pub tdc: TdcModel,
    pub acquisition: AcquisitionSettings,
    /// Mean detected photons per pulse for the saturation curve; empty skips it.
    pub saturation_mu: Vec<f64>,
}

impl Default for TcspcConfig {
    fn default() -> Self {
        Self {
            separation: 30.0,
            tpsf_dt_ps: 10.0,
            tpsf_window_ps: 10_000.0,
            laser: LaserModel::default(),
            detector: DetectorModel::default(),
            tdc: TdcModel::default(),
            acquisition: AcquisitionSettings::default(),
            saturation_mu: vec![0.01, 0.1, 0.5, 1.0, 2.0, 5.0],
        }
    }
}

/// Everything a run needs. `seed` drives every random draw; the acquisition
/// seed is taken from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub mesh: MeshSpec,
    pub background: Background,
    pub optodes: OptodeConfig,
    pub grid: TimeGrid,
    pub phantom: PhantomConfig,
    pub forward: ForwardConfig,
    pub recon: ReconSettings,
    pub data: DataConfig,
    pub discern: DiscernSettings,
    pub tcspc: TcspcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mesh: MeshSpec::default(),
            background: Background::default(),
            optodes: OptodeConfig::default(),
            grid: TimeGrid::default(),
            phantom: PhantomConfig::default(),
            forward: ForwardConfig::default(),
            recon: ReconSettings::default(),
            data: DataConfig::default(),
            discern: DiscernSettings::default(),
            tcspc: TcspcConfig::default(),
        }
    }
}

/// A configuration problem, optionally tied to one key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    pub key: Option<String>,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            key: None,
        }
    }

    fn at(key: &str, err: impl std::fmt::Display) -> Self {
        Self {
            message: format!("{key}: {err}"),
            key: Some(key.to_string()),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Dotted key path of a TOML error: the enclosing `[table]` plus the
/// offending field name when the error names one.
fn error_key(text: &str, err: &toml::de::Error) -> Option<String> {
    let msg = err.message();
    let field = ["unknown field `", "missing field `"].iter().find_map(|pat| {
        let start = msg.find(pat)? + pat.len();
        let len = msg[start..].find('`')?;
        Some(msg[start..start + len].to_string())
    });
    let table = err.span().and_then(|span| {
        text[..span.start.min(text.len())]
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| l.starts_with('[') && l.ends_with(']'))
            .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
    });
    match (table, field) {
        (Some(t), Some(f)) => Some(format!("{t}.{f}")),
        (None, Some(f)) => Some(f),
        (Some(t), None) => Some(t),
        (None, None) => None,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError {
            message: e.message().to_string(),
            key: error_key(text, &e),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Checks every section before any computation starts.
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        self.mesh.validate().map_err(|e| ConfigError::at("mesh", e))?;
        let bg = self.background;
        if !(bg.mua > 0.0 && bg.musp > 0.0 && bg.n >= 1.0) {
            return Err(ConfigError::at("background", "need mua > 0, musp > 0 and n >= 1"));
        }
        if self.optodes.n_sources == 0 || self.optodes.n_detectors == 0 {
            return Err(ConfigError::at("optodes", "need at least one source and one detector"));
        }
        if self.optodes.placement == Placement::Arc && !(self.optodes.arc_span_deg > 0.0 && self.optodes.arc_span_deg <= 360.0) {
            return Err(ConfigError::at("optodes.arc_span_deg", "must lie in (0, 360]"));
        }
        self.optodes
            .layout(self.mesh.radius, bg.musp)
            .validate()
            .map_err(|e| ConfigError::at("optodes", e))?;
        self.grid.validate().map_err(|e| ConfigError::at("grid", e))?;
        self.phantom
            .spec(bg)
            .inclusions(self.mesh.radius)
            .map_err(|e| ConfigError::at("phantom", e))?;
        self.recon.validate().map_err(|e| ConfigError::at("recon", e))?;
        self.discern.validate().map_err(|e| ConfigError::at("discern", e))?;
        for (key, path) in [("data.measurement", &self.data.measurement), ("data.reference", &self.data.reference)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(ConfigError::at(key, format!("no such file {}", p.display())));
                }
            }
        }
        if self.data.reference.is_some() && self.data.measurement.is_none() {
            return Err(ConfigError::at("data.reference", "a reference needs data.measurement"));
        }
        let t = &self.tcspc;
        validate_models(&t.laser, &t.detector, &t.tdc).map_err(|e| ConfigError::at("tcspc", e))?;
        if !(t.separation > 0.0 && t.separation < 2.0 * self.mesh.radius) {
            return Err(ConfigError::at("tcspc.separation", "must lie between 0 and the disk diameter"));
        }
        if !(t.tpsf_dt_ps > 0.0 && t.tpsf_window_ps > t.tpsf_dt_ps) {
            return Err(ConfigError::at("tcspc", "need tpsf_dt_ps > 0 and tpsf_window_ps > tpsf_dt_ps"));
        }
        let a = &t.acquisition;
        if a.n_pulses == 0 || !(a.bin_width_ps > 0.0) || a.block_pulses == 0 {
            return Err(ConfigError::at("tcspc.acquisition", "need n_pulses, block_pulses and bin_width_ps > 0"));
        }
        if t.saturation_mu.iter().any(|m| !(*m > 0.0)) || t.saturation_mu.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::at("tcspc.saturation_mu", "must be positive and strictly increasing"));
        }
        Ok(())
    }

    fn layout(&self) -> OptodeLayout {
        self.optodes.layout(self.mesh.radius, self.background.musp)
    }

    fn phantom_spec(&self) -> PhantomSpec {
        self.phantom.spec(self.background)
    }

    /// The figure preset with this configuration's discretization and solver
    /// settings.
    pub fn sweep_spec(&self, figure: u32) -> Result<SweepSpec> {
        let preset = SweepSpec::figure(figure)?;
        Ok(SweepSpec {
            contrast: self.phantom.contrast,
            background: self.background,
            mesh: self.mesh,
            data_mesh: self.data.data_mesh,
            calibration: self.data.calibration,
            n_sources: self.optodes.n_sources,
            n_detectors: self.optodes.n_detectors,
            grid: self.grid,
            recon: self.recon,
            discern: self.discern,
            ..preset
        })
    }
}

/// Printed by `--print-default-config`.
pub fn default_config_text() -> String {
    format!(
        "# dot run configuration. Every key is optional; unknown keys are rejected.\n\
         # tcspc.acquisition.seed is replaced by the top-level seed.\n\n{}",
        RunConfig::default().to_toml()
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub git_revision: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_seconds: f64,
    pub summary: serde_json::Value,
}

/// Artifact writer that remembers what it wrote.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.files.push(path);
        Ok(())
    }

    fn adopt(&mut self, path: PathBuf) {
        self.files.push(path);
    }
}

fn record(path: &Path) -> Result<FileRecord> {
    Ok(FileRecord {
        path: path.to_path_buf(),
        sha256: sha256_hex(&std::fs::read(path)?),
    })
}

fn measurement_from_file(path: &Path, mode: Mode) -> Result<Measurement> {
    Measurement::from_csv(&std::fs::read_to_string(path)?, mode)
}

fn check_shape(m: &Measurement, model: &ForwardModel) -> Result<()> {
    let want = (model.layout().n_sources(), model.layout().n_detectors(), model.n_bins());
    if (m.n_sources, m.n_detectors, m.n_bins) != want {
        return Err(Error::Dimension(format!(
            "measurement is {}x{}x{}, the configured layout expects {}x{}x{}",
            m.n_sources, m.n_detectors, m.n_bins, want.0, want.1, want.2
        )));
    }
    Ok(())
}

fn run_mesh(cfg: &RunConfig, out: &mut Outputs) -> Result<serde_json::Value> {
    let mesh = build_disk_mesh(&cfg.mesh)?;
    out.write("mesh.dotmesh", mesh.to_text())?;
    Ok(serde_json::json!({
        "nodes": mesh.node_count(),
        "elements": mesh.element_count(),
        "boundary_edges": mesh.boundary_edges().len(),
        "min_quality": mesh.min_quality(),
        "mesh_hash": mesh.hash(),
    }))
}

fn run_forward(cfg: &RunConfig, out: &mut Outputs) -> Result<serde_json::Value> {
    let mesh = Arc::new(build_disk_mesh(&cfg.mesh)?);
    let field = if cfg.forward.homogeneous {
        background_field(&mesh, &cfg.background)
    } else {
        cfg.phantom_spec().phantom(mesh.radius())?.field(&mesh)?
    };
    let model = ForwardModel::new(mesh.clone(), cfg.layout(), cfg.forward.mode, cfg.grid)?;
    let y = model.simulate(&field)?;
    out.write("field.csv", field_to_csv(&mesh, &field))?;
    write_measurement(&out.dir, "measurement", &y, &model.sidecar(&field, None))?;
    out.adopt(out.dir.join("measurement.csv"));
    out.adopt(out.dir.join("measurement.json"));
    Ok(serde_json::json!({
        "mode": cfg.forward.mode,
        "rows": y.len(),
        "mesh_nodes": mesh.node_count(),
        "field_hash": field.hash(),
    }))
}

fn simulated_data(cfg: &RunConfig, model: &ForwardModel, geometry: &Arc<FemGeometry>) -> Result<Measurement> {
    let mode = cfg.recon.mode;
    let data_model = match cfg.data.data_mesh {
        DataMesh::Same => ForwardModel::with_geometry(geometry.clone(), cfg.layout(), mode, cfg.grid)?,
        DataMesh::Refined => {
            let fine = Arc::new(build_disk_mesh(&cfg.mesh.refined())?);
            ForwardModel::new(fine, cfg.layout(), mode, cfg.grid)?
        }
    };
    let data_mesh = data_model.mesh();
    let truth = cfg.phantom_spec().phantom(data_mesh.radius())?.field(data_mesh)?;
    let y = data_model.simulate(&truth)?;
    if !cfg.data.calibration {
        return Ok(y);
    }
    let reference = data_model.simulate(&background_field(data_mesh, &cfg.background))?;
    let model_reference = model.simulate(&background_field(model.mesh(), &cfg.background))?;
    reference_calibrated(&y, &reference, &model_reference)
}

fn run_recon(cfg: &RunConfig, out: &mut Outputs, inputs: &mut Vec<FileRecord>) -> Result<serde_json::Value> {
    let mesh = Arc::new(build_disk_mesh(&cfg.mesh)?);
    let geometry = Arc::new(FemGeometry::new(mesh.clone()));
    let mode = cfg.recon.mode;
    let model = ForwardModel::with_geometry(geometry.clone(), cfg.layout(), mode, cfg.grid)?;
    let init: OpticalField = background_field(&mesh, &cfg.background);
    let data = match &cfg.data.measurement {
        Some(path) => {
            inputs.push(record(path)?);
            let y = measurement_from_file(path, mode)?;
            check_shape(&y, &model)?;
            match &cfg.data.reference {
                Some(rpath) => {
                    inputs.push(record(rpath)?);
                    let r = measurement_from_file(rpath, mode)?;
                    reference_calibrated(&y, &r, &model.simulate(&init)?)?
                }
                None => y,
            }
        }
        None => simulated_data(cfg, &model, &geometry)?,
    };
    let result = gauss_newton(&model, &data, &init, &cfg.recon)?;
    write_recon(&out.dir, "recon", &mesh, &result)?;
    out.adopt(out.dir.join("recon.csv"));
    out.adopt(out.dir.join("recon_trace.csv"));
    let phantom = cfg.phantom_spec();
    let (verdict, profile) = discernible(&mesh, &result.field.mua, &phantom, &cfg.discern)?;
    out.write("profile.csv", profile.to_csv())?;
    out.write("discernibility.json", serde_json::to_string_pretty(&verdict)?)?;
    Ok(serde_json::json!({
        "mode": mode,
        "iterations": result.iterations(),
        "termination": result.termination,
        "objective": result.objective(),
        "discernible": verdict.discernible,
        "dip_ratio": verdict.dip_ratio,
    }))
}

fn run_sweep_command(cfg: &RunConfig, figure: u32, out: &mut Outputs) -> Result<serde_json::Value> {
    let spec = cfg.sweep_spec(figure)?;
    let result = run_sweep(&spec, Some(&out.dir))?;
    for r in &result.records {
        for p in &r.artifacts {
            out.adopt(p.clone());
        }
    }
    out.adopt(out.dir.join("summary.csv"));
    let failed: Vec<_> = result
        .records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} sep {} depth {}: {e}", r.mode, r.separation, r.depth)))
        .collect();
    if !failed.is_empty() {
        return Err(Error::SolverFailure {
            reason: format!("{} sweep cells failed: {}", failed.len(), failed.join("; ")),
            residual: f64::NAN,
        });
    }
    let depth = spec.depths[0];
    let sep = spec.separations[0];
    let summary = match figure {
        3 => serde_json::json!({
            "td_min_separation_mm": result.min_discernible_separation(Mode::Td, depth, None),
            "cw_min_separation_mm": result.min_discernible_separation(Mode::Cw, depth, None),
        }),
        _ => serde_json::json!({
            "td_max_depth_mm": result.max_discernible_depth(Mode::Td, sep, None),
            "cw_max_depth_mm": result.max_discernible_depth(Mode::Cw, sep, None),
        }),
    };
    let mut summary = summary;
    summary["ordering_violations"] = serde_json::json!(result.ordering_violations(None));
    summary["monotonicity_anomalies"] = serde_json::json!(result.monotonicity_anomalies());
    Ok(summary)
}

fn run_tcspc(cfg: &RunConfig, seed: u64, out: &mut Outputs) -> Result<serde_json::Value> {
    let t = &cfg.tcspc;
    let mesh = Arc::new(build_disk_mesh(&cfg.mesh)?);
    let tpsf = pair_tpsf(mesh, &cfg.background, t.separation, t.tpsf_dt_ps, t.tpsf_window_ps)?;
    let mut tpsf_csv = String::from("t_ps,density_per_ps\n");
    for (i, d) in tpsf.density.iter().enumerate() {
        tpsf_csv.push_str(&format!("{},{}\n", fmt_f64(i as f64 * tpsf.bin_width_ps), fmt_f64(*d)));
    }
    out.write("tpsf.csv", tpsf_csv)?;
    let settings = AcquisitionSettings { seed, ..t.acquisition };
    let acq = acquire(&tpsf, &t.laser, &t.detector, &t.tdc, &settings)?;
    let h = &acq.histogram;
    out.write("histogram.csv", h.to_csv())?;
    let sidecar = HistogramSidecar::new(h, &t.laser, &t.detector, &t.tdc, &settings);
    out.write("histogram.json", serde_json::to_string_pretty(&sidecar)?)?;
    let expected = expected_histogram(&tpsf, &t.laser, &t.detector, &t.tdc, settings.bin_width_ps);
    let fit = chi_square(&h.counts, &expected, 20.0);
    let mut summary = serde_json::json!({
        "tpsf_mean_ps": tpsf.mean(),
        "total_counts": h.total_counts,
        "counts_per_pulse": h.counts_per_pulse(),
        "histogram_mean_ps": h.mean_ps(),
        "chi_square_vs_single_photon": fit,
    });
    if !t.saturation_mu.is_empty() {
        let curve = saturation_curve(&tpsf, &t.laser, &t.detector, &t.tdc, &t.saturation_mu, &settings)?;
        out.write("saturation.csv", saturation_to_csv(&curve))?;
        summary["saturation_points"] = serde_json::json!(curve.len());
    }
    Ok(summary)
}

/// Machine-readable failure report printed on stderr.
fn error_json(kind: &str, message: &str, key: Option<&str>) -> String {
    serde_json::json!({ "error": kind, "message": message, "key": key }).to_string()
}

fn config_failure(e: &ConfigError) -> i32 {
    eprintln!("{}", error_json("config", &e.message, e.key.as_deref()));
    EXIT_CONFIG
}

fn load_config(path: Option<&Path>) -> std::result::Result<(RunConfig, Vec<FileRecord>), ConfigError> {
    let Some(path) = path else {
        return Ok((RunConfig::default(), Vec::new()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = RunConfig::from_toml(&text)?;
    let rec = FileRecord {
        path: path.to_path_buf(),
        sha256: sha256_hex(text.as_bytes()),
    };
    Ok((cfg, vec![rec]))
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if cli.print_default_config {
        print!("{}", default_config_text());
        return EXIT_OK;
    }
    let Some(command) = cli.command else {
        return config_failure(&ConfigError::new("no command given; expected mesh, forward, recon, sweep or tcspc"));
    };
    let (mut cfg, mut inputs) = match load_config(cli.config.as_deref()) {
        Ok(v) => v,
        Err(e) => return config_failure(&e),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.tcspc.acquisition.seed = cfg.seed;
    if let Err(e) = cfg.validate() {
        return config_failure(&e);
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return config_failure(&ConfigError::at("jobs", "must be at least 1"));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let started = Instant::now();
    let outcome = (|| -> Result<(Vec<PathBuf>, serde_json::Value)> {
        std::fs::create_dir_all(&cli.out)?;
        let mut out = Outputs {
            dir: cli.out.clone(),
            files: Vec::new(),
        };
        let summary = match command {
            Command::Mesh => run_mesh(&cfg, &mut out)?,
            Command::Forward => run_forward(&cfg, &mut out)?,
            Command::Recon => run_recon(&cfg, &mut out, &mut inputs)?,
            Command::Sweep { figure } => run_sweep_command(&cfg, figure, &mut out)?,
            Command::Tcspc => run_tcspc(&cfg, cfg.seed, &mut out)?,
        };
        Ok((out.files, summary))
    })();
    let (files, summary) = match outcome {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{}", error_json("computation", &e.to_string(), None));
            return EXIT_COMPUTE;
        }
    };
    let manifest = (|| -> Result<()> {
        let outputs = files.iter().map(|p| record(p)).collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            tool: "dot",
            tool_version: tool_version(),
            git_revision: git_revision(),
            command: command.name().to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            inputs,
            outputs,
            wall_seconds: started.elapsed().as_secs_f64(),
            summary,
        };
        std::fs::write(cli.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    })();
    match manifest {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", error_json("computation", &e.to_string(), None));
            EXIT_COMPUTE
        }
    }
}

/// Parses `args` and runs. Usage errors exit with the config code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
