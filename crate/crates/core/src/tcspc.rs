//! Time-correlated single-photon counting: builds a DTOF histogram from a
//! temporal point-spread function under detector and TDC limitations.
//!
//! Times are in ps inside a laser period and dead times in ns, matching how
//! the hardware is specified.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::fem::{assemble, FemGeometry};
use crate::forward::td::{solve_td, TdStepper, TimeGrid};
use crate::forward::OptodeLayout;
use crate::medium::{background_field, Background};
use crate::mesh::{Mesh, Point2};
use crate::provenance::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    pub dead_time_ns: f64,
    pub dark_rate_hz: f64,
    pub jitter_sigma_ps: f64,
    pub paralyzable: bool,
}

impl Default for DetectorModel {
    /// Actively quenched APD.
    fn default() -> Self {
        Self {
            dead_time_ns: 40.0,
            dark_rate_hz: 10e6,
            jitter_sigma_ps: 40.0,
            paralyzable: false,
        }
    }
}

impl DetectorModel {
    pub fn ideal() -> Self {
        Self {
            dead_time_ns: 0.0,
            dark_rate_hz: 0.0,
            jitter_sigma_ps: 0.0,
            paralyzable: false,
        }
    }
}

/// Second non-paralyzable dead-time stage in series with the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdcModel {
    pub dead_time_ns: f64,
    pub jitter_sigma_ps: f64,
}

impl Default for TdcModel {
    fn default() -> Self {
        Self {
            dead_time_ns: 14.0,
            jitter_sigma_ps: 0.0,
        }
    }
}

impl TdcModel {
    pub fn ideal() -> Self {
        Self {
            dead_time_ns: 0.0,
            jitter_sigma_ps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaserModel {
    pub rep_rate_hz: f64,
    pub pulse_sigma_ps: f64,
    /// Mean number of detectable photons per pulse (μ).
    pub mean_detected_per_pulse: f64,
    /// Pulse emission time within the period.
    pub delay_ps: f64,
}

impl Default for LaserModel {
    fn default() -> Self {
        Self {
            rep_rate_hz: 1e6,
            pulse_sigma_ps: 0.0,
            mean_detected_per_pulse: 0.1,
            delay_ps: 1000.0,
        }
    }
}

impl LaserModel {
    pub fn period_ps(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }
}

/// Arrival-time density as a histogram with `bin_width_ps` bins starting at
/// the pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tpsf {
    pub bin_width_ps: f64,
    pub density: Vec<f64>,
}

impl Tpsf {
    /// Normalizes nonnegative weights into a density.
    pub fn from_weights(bin_width_ps: f64, weights: &[f64]) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidTpsf(msg));
        if !(bin_width_ps > 0.0 && bin_width_ps.is_finite()) || weights.is_empty() {
            return bad(format!("need a positive bin width and at least one bin, got {bin_width_ps} and {}", weights.len()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and nonnegative".into());
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return bad("weights sum to zero".into());
        }
        Ok(Self {
            bin_width_ps,
            density: weights.iter().map(|w| w / (total * bin_width_ps)).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let integral: f64 = self.density.iter().sum::<f64>() * self.bin_width_ps;
        if !(self.bin_width_ps > 0.0) || self.density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidTpsf("density must be finite and nonnegative".into()));
        }
        if (integral - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidTpsf(format!("density integrates to {integral}, not 1")));
        }
        Ok(())
    }

    pub fn duration_ps(&self) -> f64 {
        self.bin_width_ps * self.density.len() as f64
    }

    pub fn mean(&self) -> f64 {
        let w = self.bin_width_ps;
        self.density.iter().enumerate().map(|(i, d)| d * w * (i as f64 + 0.5) * w).sum()
    }

    /// Variance including the uniform spread inside each bin.
    pub fn variance(&self) -> f64 {
        let w = self.bin_width_ps;
        let m = self.mean();
        let second: f64 = self
            .density
            .iter()
            .enumerate()
            .map(|(i, d)| d * w * (((i as f64 + 0.5) * w - m).powi(2) + w * w / 12.0))
            .sum();
        second
    }

    fn cdf_table(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out: Vec<f64> = self
            .density
            .iter()
            .map(|d| {
                acc += d * self.bin_width_ps;
                acc
            })
            .collect();
        let last = out.len() - 1;
        out[last] = 1.0;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtofHistogram {
    pub bin_width_ps: f64,
    pub counts: Vec<u64>,
    pub total_pulses: u64,
    pub total_counts: u64,
}

impl DtofHistogram {
    pub fn mean_ps(&self) -> f64 {
        let n = self.total_counts as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * (i as f64 + 0.5) * self.bin_width_ps)
            .sum::<f64>()
            / n
    }

    /// Variance with the in-bin uniform spread added back.
    pub fn variance_ps2(&self) -> f64 {
        let n = self.total_counts as f64;
        let m = self.mean_ps();
        let w = self.bin_width_ps;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * ((i as f64 + 0.5) * w - m).powi(2))
            .sum::<f64>()
            / n
            + w * w / 12.0
    }

    pub fn counts_per_pulse(&self) -> f64 {
        self.total_counts as f64 / self.total_pulses as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start_ps,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{c}", fmt_f64(i as f64 * self.bin_width_ps));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    /// One RNG stream over all pulses, dead time carried throughout.
    Exact,
    /// Fixed-size pulse blocks with one RNG stream each, run in parallel.
    /// Dead time is reset at block starts.
    Blocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSettings {
    pub n_pulses: u64,
    pub seed: u64,
    pub bin_width_ps: f64,
    pub parallelism: Parallelism,
    pub block_pulses: u64,
    /// Keep the recorded event times (absolute, ps) for inspection.
    pub record_events: bool,
}

impl Default for AcquisitionSettings {
    fn default() -> Self {
        Self {
            n_pulses: 1_000_000,
            seed: 0,
            bin_width_ps: 10.0,
            parallelism: Parallelism::Blocks,
            block_pulses: 1 << 16,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub histogram: DtofHistogram,
    /// Recorded events in time order, when requested.
    pub events: Option<Vec<f64>>,
}

pub fn validate_models(laser: &LaserModel, detector: &DetectorModel, tdc: &TdcModel) -> Result<()> {
    let ok = laser.rep_rate_hz > 0.0
        && laser.rep_rate_hz.is_finite()
        && laser.mean_detected_per_pulse >= 0.0
        && laser.pulse_sigma_ps >= 0.0
        && laser.delay_ps >= 0.0
        && laser.delay_ps < laser.period_ps()
        && detector.dead_time_ns >= 0.0
        && detector.dark_rate_hz >= 0.0
        && detector.jitter_sigma_ps >= 0.0
        && tdc.dead_time_ns >= 0.0
        && tdc.jitter_sigma_ps >= 0.0;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidSettings(format!(
            "invalid acquisition models: {laser:?} {detector:?} {tdc:?}"
        )))
    }
}

/// Pulse-to-event simulation state shared by one block.
struct Simulator<'a> {
    tpsf: &'a Tpsf,
    cdf: Vec<f64>,
    period: f64,
    delay: f64,
    mu: f64,
    dark_mean: f64,
    optical_jitter: Option<Normal<f64>>,
    tdc_jitter: Option<Normal<f64>>,
    detector_dead: f64,
    paralyzable: bool,
    tdc_dead: f64,
    bin_width: f64,
    n_bins: usize,
}

impl Simulator<'_> {
    fn sample_tpsf(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        (i as f64 + rng.random::<f64>()) * self.tpsf.bin_width_ps
    }

    /// Zero-truncated Poisson draw.
    fn positive_poisson(lambda: f64, rng: &mut ChaCha8Rng) -> u64 {
        if lambda >= 1.0 {
            let dist = Poisson::new(lambda).unwrap();
            loop {
                let k = dist.sample(rng) as u64;
                if k > 0 {
                    return k;
                }
            }
        }
        // Inversion on P(k | k >= 1).
        let norm = -(-lambda).exp_m1();
        let mut u: f64 = rng.random::<f64>() * norm;
        let mut k = 1u64;
        let mut p = lambda * (-lambda).exp();
        while u > p && k < 1000 {
            u -= p;
            k += 1;
            p *= lambda / k as f64;
        }
        k
    }

    fn run(&self, first_pulse: u64, n_pulses: u64, seed: u64, stream: u64, keep: bool) -> (Vec<u64>, u64, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut counts = vec![0u64; self.n_bins];
        let mut total = 0u64;
        let mut kept = Vec::new();
        let lambda = self.mu + self.dark_mean;
        if lambda <= 0.0 || n_pulses == 0 {
            return (counts, total, kept);
        }
        let p_any = -(-lambda).exp_m1();
        let skip = Geometric::new(p_any).unwrap();
        let signal_fraction = self.mu / lambda;
        let mut detector_free = f64::NEG_INFINITY;
        let mut tdc_free = f64::NEG_INFINITY;
        let mut events: Vec<f64> = Vec::new();
        let mut pulse = 0u64;
        loop {
            pulse += skip.sample(&mut rng);
            if pulse >= n_pulses {
                break;
            }
            let start = (first_pulse + pulse) as f64 * self.period;
            events.clear();
            for _ in 0..Self::positive_poisson(lambda, &mut rng) {
                let t = if rng.random::<f64>() < signal_fraction {
                    let jitter = self.optical_jitter.map_or(0.0, |n| n.sample(&mut rng));
                    self.delay + self.sample_tpsf(&mut rng) + jitter
                } else {
                    rng.random::<f64>() * self.period
                };
                // Photons outside the period are lost.
                if (0.0..self.period).contains(&t) {
                    events.push(t);
                }
            }
            events.sort_by(f64::total_cmp);
            let mut recorded = false;
            for &t in &events {
                let a = start + t;
                let passes = a >= detector_free;
                if self.paralyzable {
                    detector_free = detector_free.max(a + self.detector_dead);
                } else if passes {
                    detector_free = a + self.detector_dead;
                }
                if !passes || a < tdc_free {
                    continue;
                }
                tdc_free = a + self.tdc_dead;
                if recorded {
                    continue;
                }
                recorded = true;
                let stamp = t + self.tdc_jitter.map_or(0.0, |n| n.sample(&mut rng));
                let bin = ((stamp / self.bin_width).floor().max(0.0) as usize).min(self.n_bins - 1);
                counts[bin] += 1;
                total += 1;
                if keep {
                    kept.push(start + stamp);
                }
            }
            pulse += 1;
        }
        (counts, total, kept)
    }
}

/// Simulates `n_pulses` laser periods and histograms the recorded stops.
pub fn acquire(
    tpsf: &Tpsf,
    laser: &LaserModel,
    detector: &DetectorModel,
    tdc: &TdcModel,
    settings: &AcquisitionSettings,
) -> Result<Acquisition> {
    tpsf.validate()?;
    validate_models(laser, detector, tdc)?;
    if !(settings.bin_width_ps > 0.0) || settings.block_pulses == 0 {
        return Err(Error::InvalidSettings(format!("invalid acquisition settings {settings:?}")));
    }
    let period = laser.period_ps();
    let optical_sigma = laser.pulse_sigma_ps.hypot(detector.jitter_sigma_ps);
    let sim = Simulator {
        tpsf,
        cdf: tpsf.cdf_table(),
        period,
        delay: laser.delay_ps,
        mu: laser.mean_detected_per_pulse,
        dark_mean: detector.dark_rate_hz / laser.rep_rate_hz,
        optical_jitter: (optical_sigma > 0.0).then(|| Normal::new(0.0, optical_sigma).unwrap()),
        tdc_jitter: (tdc.jitter_sigma_ps > 0.0).then(|| Normal::new(0.0, tdc.jitter_sigma_ps).unwrap()),
        detector_dead: detector.dead_time_ns * 1e3,
        paralyzable: detector.paralyzable,
        tdc_dead: tdc.dead_time_ns * 1e3,
        bin_width: settings.bin_width_ps,
        n_bins: (period / settings.bin_width_ps).ceil() as usize,
    };
    let keep = settings.record_events;
    let parts: Vec<(Vec<u64>, u64, Vec<f64>)> = match settings.parallelism {
        Parallelism::Exact => vec![sim.run(0, settings.n_pulses, settings.seed, 0, keep)],
        Parallelism::Blocks => {
            let b = settings.block_pulses;
            let n_blocks = settings.n_pulses.div_ceil(b);
            (0..n_blocks)
                .into_par_iter()
                .map(|k| {
                    let len = b.min(settings.n_pulses - k * b);
                    sim.run(k * b, len, settings.seed, k, keep)
                })
                .collect()
        }
    };
    let mut counts = vec![0u64; sim.n_bins];
    let mut total = 0;
    let mut events = keep.then(Vec::new);
    for (c, t, e) in parts {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
        total += t;
        if let Some(ev) = events.as_mut() {
            ev.extend(e);
        }
    }
    Ok(Acquisition {
        histogram: DtofHistogram {
            bin_width_ps: settings.bin_width_ps,
            counts,
            total_pulses: settings.n_pulses,
            total_counts: total,
        },
        events,
    })
}

/// Recorded rate for an incident rate `r` (Hz) through the detector dead time.
pub fn effective_rate(incident_rate: f64, detector: &DetectorModel) -> f64 {
    let tau = detector.dead_time_ns * 1e-9;
    if detector.paralyzable {
        incident_rate * (-incident_rate * tau).exp()
    } else {
        incident_rate / (1.0 + incident_rate * tau)
    }
}

/// `∫ Φ(x/σ) dx`, an antiderivative of the normal CDF.
fn normal_cdf_integral(x: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return x.max(0.0);
    }
    let z = x / sigma;
    let cdf = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    x * cdf + sigma * pdf
}

/// Probability per histogram bin of one signal photon: the TPSF delayed by
/// the pulse offset and convolved with the total Gaussian jitter, restricted
/// to one period and renormalized there.
pub fn expected_histogram(
    tpsf: &Tpsf,
    laser: &LaserModel,
    detector: &DetectorModel,
    tdc: &TdcModel,
    bin_width_ps: f64,
) -> Vec<f64> {
    let sigma = laser
        .pulse_sigma_ps
        .hypot(detector.jitter_sigma_ps)
        .hypot(tdc.jitter_sigma_ps);
    let period = laser.period_ps();
    let n_bins = (period / bin_width_ps).ceil() as usize;
    let mut out = vec![0.0; n_bins];
    let w = tpsf.bin_width_ps;
    let reach = 8.0 * sigma + bin_width_ps;
    for (j, &d) in tpsf.density.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let a = laser.delay_ps + j as f64 * w;
        let b = a + w;
        let lo = (((a - reach) / bin_width_ps).floor().max(0.0)) as usize;
        let hi = (((b + reach) / bin_width_ps).ceil() as usize).min(n_bins);
        let g = |x: f64| normal_cdf_integral(x, sigma);
        for (k, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
            let c = k as f64 * bin_width_ps;
            let e = (c + bin_width_ps).min(period);
            let p = (g(e - a) - g(e - b) - g(c - a) + g(c - b)) / w;
            *o += d * w * p;
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson test of counts against bin probabilities. Bins expecting fewer
/// than `min_expected` counts are pooled into their neighbours.
pub fn chi_square(counts: &[u64], probabilities: &[f64], min_expected: f64) -> ChiSquare {
    let n: f64 = counts.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    let mut groups = 0usize;
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probabilities) {
        obs += c as f64;
        exp += n * p;
        if exp >= min_expected {
            stat += (obs - exp).powi(2) / exp;
            groups += 1;
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        // Leftover tail: fold into the running statistic as its own group.
        stat += if exp > 0.0 { (obs - exp).powi(2) / exp } else { f64::INFINITY };
        groups += 1;
    }
    let dof = groups.saturating_sub(1).max(1);
    let p_value = if stat.is_finite() {
        ChiSquared::new(dof as f64).unwrap().sf(stat)
    } else {
        0.0
    };
    ChiSquare {
        statistic: stat,
        dof,
        p_value,
    }
}

/// Earth mover's distance (ps) between two binned distributions on the same
/// grid; both are normalized first.
pub fn earth_movers_distance(a: &[f64], b: &[f64], bin_width_ps: f64) -> f64 {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let (mut ca, mut cb, mut d) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ca += x / sa;
        cb += y / sb;
        d += (ca - cb).abs();
    }
    d * bin_width_ps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationPoint {
    pub mu: f64,
    pub counts_per_pulse: f64,
    pub measured_rate_hz: f64,
    /// Earth mover's distance to the jitter-convolved TPSF (ps).
    pub distortion_ps: f64,
}

/// Measured rate and histogram distortion for each `μ` in `mu_grid`.
pub fn saturation_curve(
    tpsf: &Tpsf,
    laser: &LaserModel,
    detector: &DetectorModel,
    tdc: &TdcModel,
    mu_grid: &[f64],
    settings: &AcquisitionSettings,
) -> Result<Vec<SaturationPoint>> {
    if mu_grid.is_empty() || mu_grid.iter().any(|m| !(*m > 0.0)) || mu_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSettings("μ grid must be positive and strictly ascending".into()));
    }
    let expected = expected_histogram(tpsf, laser, detector, tdc, settings.bin_width_ps);
    mu_grid
        .iter()
        .map(|&mu| {
            let l = LaserModel {
                mean_detected_per_pulse: mu,
                ..*laser
            };
            let h = acquire(tpsf, &l, detector, tdc, settings)?.histogram;
            let observed: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
            Ok(SaturationPoint {
                mu,
                counts_per_pulse: h.counts_per_pulse(),
                measured_rate_hz: h.counts_per_pulse() * laser.rep_rate_hz,
                distortion_ps: if h.total_counts > 0 {
                    earth_movers_distance(&observed, &expected, settings.bin_width_ps)
                } else {
                    f64::NAN
                },
            })
        })
        .collect()
}

pub fn saturation_to_csv(points: &[SaturationPoint]) -> String {
    let mut out = String::from("mu,counts_per_pulse,measured_rate_hz,distortion_ps\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(p.mu),
            fmt_f64(p.counts_per_pulse),
            fmt_f64(p.measured_rate_hz),
            fmt_f64(p.distortion_ps)
        );
    }
    out
}

/// Metadata written next to a histogram CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSidecar {
    pub laser: LaserModel,
    pub detector: DetectorModel,
    pub tdc: TdcModel,
    pub settings: AcquisitionSettings,
    pub rng: String,
    pub total_pulses: u64,
    pub total_counts: u64,
    pub mean_ps: f64,
    pub variance_ps2: f64,
    pub measured_rate_hz: f64,
}

impl HistogramSidecar {
    pub fn new(
        h: &DtofHistogram,
        laser: &LaserModel,
        detector: &DetectorModel,
        tdc: &TdcModel,
        settings: &AcquisitionSettings,
    ) -> Self {
        Self {
            laser: *laser,
            detector: *detector,
            tdc: *tdc,
            settings: *settings,
            rng: "ChaCha8".into(),
            total_pulses: h.total_pulses,
            total_counts: h.total_counts,
            mean_ps: h.mean_ps(),
            variance_ps2: h.variance_ps2(),
            measured_rate_hz: h.counts_per_pulse() * laser.rep_rate_hz,
        }
    }
}

/// Diffusion TPSF of a homogeneous disk for one source and one detector
/// `separation` mm apart (chord length), symmetric about the top of the disk.
///
/// The exitance is integrated over `dt_ps` steps up to `window_ps`.
pub fn pair_tpsf(mesh: Arc<Mesh>, background: &Background, separation: f64, dt_ps: f64, window_ps: f64) -> Result<Tpsf> {
    let radius = mesh.radius();
    if !(separation > 0.0 && separation < 2.0 * radius) {
        return Err(Error::InvalidSettings(format!(
            "pair separation {separation} mm does not fit a disk of radius {radius} mm"
        )));
    }
    let half = (0.5 * separation / radius).asin();
    let at = |a: f64| Point2::new(radius * a.cos(), radius * a.sin());
    let top = std::f64::consts::FRAC_PI_2;
    let layout = OptodeLayout {
        radius,
        sources: vec![at(top + half)],
        detectors: vec![at(top - half)],
        inset: 1.0 / background.musp,
        source_strength: 1.0,
    };
    layout.validate()?;
    let grid = TimeGrid::single_gate(dt_ps, window_ps);
    grid.validate()?;
    let system = assemble(&Arc::new(FemGeometry::new(mesh.clone())), &background_field(&mesh, background))?;
    let stepper = TdStepper::new(&system, &grid)?;
    let source = &layout.source_vectors(&mesh)?[0];
    let detectors = layout.detector_vectors(&mesh)?;
    let trace = &solve_td(&stepper, source, &detectors)?.trace[0];
    // Step averages; the first steps can dip a hair below zero.
    let weights: Vec<f64> = trace.windows(2).map(|w| (0.5 * (w[0] + w[1])).max(0.0)).collect();
    Tpsf::from_weights(dt_ps, &weights)
}
