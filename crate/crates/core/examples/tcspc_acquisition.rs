//! TCSPC acquisition of the diffusion TPSF at a 30 mm pair: histogram
//! statistics against the ideal single-photon law, and the pile-up curve.
//!
//! cargo run --release --example tcspc_acquisition

use std::sync::Arc;

use dotsim::medium::Background;
use dotsim::mesh::{build_disk_mesh, MeshSpec};
use dotsim::tcspc::*;

fn main() -> dotsim::Result<()> {
    let mesh = Arc::new(build_disk_mesh(&MeshSpec::default())?);
    let tpsf = pair_tpsf(mesh, &Background::default(), 30.0, 10.0, 10_000.0)?;
    println!(
        "TPSF: mean {:.1} ps, sd {:.1} ps",
        tpsf.mean(),
        tpsf.variance().sqrt()
    );

    let laser = LaserModel {
        rep_rate_hz: 20e6,
        mean_detected_per_pulse: 0.01,
        pulse_sigma_ps: 30.0,
        ..LaserModel::default()
    };
    // Dark counts would add a flat floor; leave them out so the fit below
    // compares against the single-photon law alone.
    let detector = DetectorModel {
        dark_rate_hz: 0.0,
        ..DetectorModel::default()
    };
    let tdc = TdcModel::default();
    let settings = AcquisitionSettings {
        n_pulses: 50_000_000,
        seed: 1,
        ..AcquisitionSettings::default()
    };
    let h = acquire(&tpsf, &laser, &detector, &tdc, &settings)?.histogram;
    let expected = expected_histogram(&tpsf, &laser, &detector, &tdc, settings.bin_width_ps);
    let fit = chi_square(&h.counts, &expected, 20.0);
    println!(
        "{} counts in {} pulses ({:.4} per pulse), mean {:.1} ps, chi-square p = {:.3}",
        h.total_counts,
        h.total_pulses,
        h.counts_per_pulse(),
        h.mean_ps(),
        fit.p_value
    );
    println!(
        "APD at 20 MHz input: {:.2} MHz recorded",
        effective_rate(20e6, &detector) / 1e6
    );

    let short = AcquisitionSettings {
        n_pulses: 1_000_000,
        ..settings
    };
    let curve = saturation_curve(&tpsf, &laser, &detector, &tdc, &[0.01, 0.1, 0.5, 1.0, 2.0, 5.0], &short)?;
    println!("    mu  counts/pulse  distance to the single-photon law (EMD, ps)");
    for p in curve {
        println!("{:6.2} {:13.4} {:12.1}", p.mu, p.counts_per_pulse, p.distortion_ps);
    }
    Ok(())
}
