//! Log-intensity measurements and their CSV / JSON-sidecar form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layout::OptodeLayout;
use super::td::TimeGrid;
use crate::error::{Error, Result};
use crate::provenance::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cw,
    Td,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Cw => "CW",
            Mode::Td => "TD",
        })
    }
}

/// `y[s, d, b] = ln I` for every source, detector and time bin (one bin for CW).
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub mode: Mode,
    pub n_sources: usize,
    pub n_detectors: usize,
    pub n_bins: usize,
    pub values: Vec<f64>,
}

impl Measurement {
    pub fn index(&self, s: usize, d: usize, b: usize) -> usize {
        (s * self.n_detectors + d) * self.n_bins + b
    }

    pub fn get(&self, s: usize, d: usize, b: usize) -> f64 {
        self.values[self.index(s, d, b)]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Builds a measurement from positive intensities laid out `[s][d][b]`.
    pub fn from_intensities(
        mode: Mode,
        n_sources: usize,
        n_detectors: usize,
        n_bins: usize,
        intensities: &[f64],
    ) -> Result<Self> {
        if intensities.len() != n_sources * n_detectors * n_bins {
            return Err(Error::Dimension(format!(
                "{} intensities for {n_sources}x{n_detectors}x{n_bins}",
                intensities.len()
            )));
        }
        let mut values = Vec::with_capacity(intensities.len());
        for (k, &v) in intensities.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                let b = k % n_bins;
                let d = (k / n_bins) % n_detectors;
                let s = k / (n_bins * n_detectors);
                return Err(Error::NonPositiveIntensity {
                    source_id: s,
                    detector_id: d,
                    bin_id: b,
                    value: v,
                });
            }
            values.push(v.ln());
        }
        Ok(Self {
            mode,
            n_sources,
            n_detectors,
            n_bins,
            values,
        })
    }

    pub fn check_compatible(&self, other: &Measurement) -> Result<()> {
        if (self.mode, self.n_sources, self.n_detectors, self.n_bins)
            != (other.mode, other.n_sources, other.n_detectors, other.n_bins)
        {
            return Err(Error::Dimension(format!(
                "measurement shapes differ: {}x{}x{} {} vs {}x{}x{} {}",
                self.n_sources,
                self.n_detectors,
                self.n_bins,
                self.mode,
                other.n_sources,
                other.n_detectors,
                other.n_bins,
                other.mode
            )));
        }
        Ok(())
    }

    /// CSV with header `source_id,detector_id,bin_id,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source_id,detector_id,bin_id,y\n");
        for s in 0..self.n_sources {
            for d in 0..self.n_detectors {
                for b in 0..self.n_bins {
                    let _ = writeln!(out, "{s},{d},{b},{}", fmt_f64(self.get(s, d, b)));
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str, mode: Mode) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            if f.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", f.len())));
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
            let y = f[3].parse::<f64>().map_err(|e| bad(e.to_string()))?;
            rows.push((idx(f[0])?, idx(f[1])?, idx(f[2])?, y));
        }
        let ns = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
        let nd = rows.iter().map(|r| r.1).max().map_or(0, |m| m + 1);
        let nb = rows.iter().map(|r| r.2).max().map_or(0, |m| m + 1);
        if rows.len() != ns * nd * nb {
            return Err(Error::Parse {
                line: 0,
                msg: format!("{} rows do not fill a {ns}x{nd}x{nb} table", rows.len()),
            });
        }
        let mut m = Self {
            mode,
            n_sources: ns,
            n_detectors: nd,
            n_bins: nb,
            values: vec![f64::NAN; rows.len()],
        };
        for (s, d, b, y) in rows {
            let k = m.index(s, d, b);
            m.values[k] = y;
        }
        if m.values.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse {
                line: 0,
                msg: "duplicate rows in measurement table".into(),
            });
        }
        Ok(m)
    }
}

/// Provenance carried by every emitted artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mesh_hash: String,
    pub field_hash: String,
    pub git_revision: String,
    pub tool_version: String,
    pub seed: Option<u64>,
}

/// JSON sidecar describing how a measurement CSV was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSidecar {
    pub mode: Mode,
    pub n_sources: usize,
    pub n_detectors: usize,
    pub n_bins: usize,
    pub layout: OptodeLayout,
    pub grid: Option<TimeGrid>,
    pub provenance: Provenance,
}

pub fn write_measurement(
    dir: &Path,
    stem: &str,
    m: &Measurement,
    sidecar: &MeasurementSidecar,
) -> Result<()> {
    std::fs::write(dir.join(format!("{stem}.csv")), m.to_csv())?;
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(sidecar)?,
    )?;
    Ok(())
}

pub fn read_measurement(dir: &Path, stem: &str) -> Result<(Measurement, MeasurementSidecar)> {
    let sidecar: MeasurementSidecar =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let m = Measurement::from_csv(
        &std::fs::read_to_string(dir.join(format!("{stem}.csv")))?,
        sidecar.mode,
    )?;
    Ok((m, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_positive_intensity() {
        let err = Measurement::from_intensities(Mode::Td, 1, 2, 2, &[1.0, 2.0, 0.0, 3.0]);
        assert!(matches!(
            err,
            Err(Error::NonPositiveIntensity { source_id: 0, detector_id: 1, bin_id: 0, .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let m = Measurement::from_intensities(Mode::Cw, 1, 2, 1, &[1.0, std::f64::consts::E]).unwrap();
        let csv = m.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("source_id,detector_id,bin_id,y"));
        assert_eq!(lines.next(), Some("0,0,0,0.0000000000000000e0"));
        assert_eq!(lines.next(), Some("0,1,0,1.0000000000000000e0"));
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec(1e-300f64..1e300, 12)) {
            let m = Measurement::from_intensities(Mode::Td, 2, 3, 2, &vals).unwrap();
            let back = Measurement::from_csv(&m.to_csv(), Mode::Td).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
