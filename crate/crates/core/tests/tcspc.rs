use dotsim::tcspc::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Skewed pulse-response shape, 10 ps bins over 5 ns.
fn tpsf() -> Tpsf {
    let w: Vec<f64> = (0..500)
        .map(|i| {
            let t = (i as f64 + 0.5) * 10.0;
            t * t * (-t / 300.0).exp()
        })
        .collect();
    Tpsf::from_weights(10.0, &w).unwrap()
}

fn quiet_detector(jitter: f64) -> DetectorModel {
    DetectorModel {
        dead_time_ns: 0.0,
        dark_rate_hz: 0.0,
        jitter_sigma_ps: jitter,
        paralyzable: false,
    }
}

/// Pearson statistic over bins with at least 20 expected counts; the rest are
/// pooled into one group.
fn pearson_p(counts: &[u64], probs: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum::<u64>() as f64;
    let (mut stat, mut k) = (0.0, 0usize);
    let (mut rest_o, mut rest_e) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = n * p;
        if e >= 20.0 {
            stat += (c as f64 - e).powi(2) / e;
            k += 1;
        } else {
            rest_o += c as f64;
            rest_e += e;
        }
    }
    if rest_e > 0.0 {
        stat += (rest_o - rest_e).powi(2) / rest_e;
        k += 1;
    }
    ChiSquared::new((k - 1) as f64).unwrap().sf(stat)
}

#[test]
fn detection_probability_matches_bernoulli() {
    let laser = LaserModel {
        mean_detected_per_pulse: 0.1,
        ..LaserModel::default()
    };
    let det = DetectorModel {
        dark_rate_hz: 0.0,
        ..DetectorModel::default()
    };
    let s = AcquisitionSettings {
        n_pulses: 1_000_000,
        seed: 7,
        ..AcquisitionSettings::default()
    };
    let h = acquire(&tpsf(), &laser, &det, &TdcModel::default(), &s).unwrap().histogram;
    let p = 1.0 - (-0.1f64).exp();
    let mean = 1e6 * p;
    let sd = (1e6 * p * (1.0 - p)).sqrt();
    assert!((mean - 95_163.0).abs() < 1.0);
    let z = (h.total_counts as f64 - mean) / sd;
    assert!(z.abs() < 3.0, "{} counts, z = {z}", h.total_counts);
    assert_eq!(h.counts.iter().sum::<u64>(), h.total_counts);
}

#[test]
fn ideal_histogram_follows_convolved_tpsf() {
    let t = tpsf();
    let laser = LaserModel {
        mean_detected_per_pulse: 1e-3,
        pulse_sigma_ps: 30.0,
        ..LaserModel::default()
    };
    let det = quiet_detector(40.0);
    let tdc = TdcModel::ideal();
    let s = AcquisitionSettings {
        n_pulses: 10_000_000_000,
        seed: 11,
        bin_width_ps: 20.0,
        ..AcquisitionSettings::default()
    };
    let h = acquire(&t, &laser, &det, &tdc, &s).unwrap().histogram;
    assert!(h.total_counts > 9_900_000, "{}", h.total_counts);
    let expected = expected_histogram(&t, &laser, &det, &tdc, 20.0);
    let p = pearson_p(&h.counts, &expected);
    assert!(p > 1e-3, "p = {p}");
    let lib = chi_square(&h.counts, &expected, 20.0);
    assert!(lib.p_value > 1e-3, "{lib:?}");

    // Jitter adds in quadrature.
    let want = t.variance() + 30.0f64.powi(2) + 40.0f64.powi(2);
    let got = h.variance_ps2();
    assert!((got - want).abs() / want < 0.05, "{got} vs {want}");
    assert!((h.mean_ps() - (1000.0 + t.mean())).abs() < 2.0);
}

#[test]
fn dark_counts_alone_are_uniform() {
    // Period equal to the detector dead time: every surviving dark count is
    // recorded, so the stationary stream lands uniformly in phase.
    let laser = LaserModel {
        rep_rate_hz: 25e6,
        mean_detected_per_pulse: 0.0,
        delay_ps: 0.0,
        ..LaserModel::default()
    };
    let det = DetectorModel {
        dark_rate_hz: 10e6,
        ..DetectorModel::default()
    };
    let s = AcquisitionSettings {
        n_pulses: 4_000_000,
        seed: 3,
        bin_width_ps: 400.0,
        parallelism: Parallelism::Exact,
        ..AcquisitionSettings::default()
    };
    let h = acquire(&tpsf(), &laser, &det, &TdcModel::default(), &s).unwrap().histogram;
    assert_eq!(h.counts.len(), 100);
    let uniform = vec![0.01; 100];
    let p = pearson_p(&h.counts, &uniform);
    assert!(p > 1e-3, "p = {p}");
    // Dead-time-limited dark rate.
    let rate = h.counts_per_pulse() * 25e6;
    let want = effective_rate(10e6, &det);
    assert!((rate - want).abs() / want < 0.01, "{rate} vs {want}");
}

#[test]
fn pile_up_matches_first_photon_law() {
    // Long period, no dead-time coupling between pulses: the recorded time is
    // the earliest of a Poisson number of jittered arrivals.
    let t = tpsf();
    let mu = 5.0;
    let laser = LaserModel {
        mean_detected_per_pulse: mu,
        ..LaserModel::default()
    };
    let det = DetectorModel {
        dark_rate_hz: 0.0,
        ..DetectorModel::default()
    };
    let tdc = TdcModel::default();
    let s = AcquisitionSettings {
        n_pulses: 1_000_000,
        seed: 5,
        bin_width_ps: 20.0,
        ..AcquisitionSettings::default()
    };
    let h = acquire(&t, &laser, &det, &tdc, &s).unwrap().histogram;
    let g = expected_histogram(&t, &laser, &det, &tdc, 20.0);
    let mut cum = 0.0;
    let first: Vec<f64> = g
        .iter()
        .map(|p| {
            let a = cum;
            cum += p;
            ((-mu * a).exp() - (-mu * cum).exp()) / (1.0 - (-mu).exp())
        })
        .collect();
    let p = pearson_p(&h.counts, &first);
    assert!(p > 1e-3, "p = {p}");
    // Early skew relative to the single-photon law.
    let single_mean: f64 = g.iter().enumerate().map(|(i, p)| p * (i as f64 + 0.5) * 20.0).sum();
    assert!(h.mean_ps() < single_mean - 50.0, "{} vs {single_mean}", h.mean_ps());
    assert!(h.counts_per_pulse() < 1.0);
}

#[test]
fn first_photon_bias_points_early() {
    let t = tpsf();
    let laser = LaserModel {
        mean_detected_per_pulse: 1.0,
        rep_rate_hz: 20e6,
        ..LaserModel::default()
    };
    let det = DetectorModel {
        dark_rate_hz: 0.0,
        ..DetectorModel::default()
    };
    let s = AcquisitionSettings {
        n_pulses: 2_000_000,
        seed: 21,
        ..AcquisitionSettings::default()
    };
    let h = acquire(&t, &laser, &det, &TdcModel::default(), &s).unwrap().histogram;
    assert!(h.mean_ps() < laser.delay_ps + t.mean());
}

#[test]
fn no_event_inside_dead_time() {
    let laser = LaserModel {
        rep_rate_hz: 40e6,
        mean_detected_per_pulse: 1.0,
        delay_ps: 0.0,
        ..LaserModel::default()
    };
    for paralyzable in [false, true] {
        let det = DetectorModel {
            paralyzable,
            ..DetectorModel::default()
        };
        let s = AcquisitionSettings {
            n_pulses: 200_000,
            seed: 13,
            bin_width_ps: 100.0,
            parallelism: Parallelism::Exact,
            record_events: true,
            ..AcquisitionSettings::default()
        };
        let acq = acquire(&tpsf(), &laser, &det, &TdcModel::default(), &s).unwrap();
        let ev = acq.events.unwrap();
        assert_eq!(ev.len() as u64, acq.histogram.total_counts);
        assert!(ev.len() > 1000);
        for w in ev.windows(2) {
            assert!(w[1] - w[0] >= 40_000.0 - 1e-6, "{} {}", w[0], w[1]);
        }
        // One stop per period.
        for w in ev.windows(2) {
            assert!((w[1] / 25_000.0).floor() > (w[0] / 25_000.0).floor());
        }
    }
}

#[test]
fn paralyzable_detector_records_less() {
    let laser = LaserModel {
        rep_rate_hz: 1e6,
        mean_detected_per_pulse: 0.0,
        ..LaserModel::default()
    };
    let s = AcquisitionSettings {
        n_pulses: 200_000,
        seed: 2,
        bin_width_ps: 1000.0,
        ..AcquisitionSettings::default()
    };
    // Many dark counts per period; single stop records at most one.
    let base = DetectorModel {
        dark_rate_hz: 30e6,
        ..DetectorModel::default()
    };
    let non = acquire(&tpsf(), &laser, &base, &TdcModel::default(), &s).unwrap().histogram;
    let par = acquire(&tpsf(), &laser, &DetectorModel { paralyzable: true, ..base }, &TdcModel::default(), &s)
        .unwrap()
        .histogram;
    assert!(non.total_counts <= s.n_pulses && par.total_counts <= s.n_pulses);
    // First stop of the period: the paralyzable detector can be held dead
    // across the period start, the non-paralyzable one recovers sooner.
    assert!(par.mean_ps() > non.mean_ps());
}

#[test]
fn blocks_and_exact_agree_statistically() {
    let laser = LaserModel {
        mean_detected_per_pulse: 0.3,
        ..LaserModel::default()
    };
    let det = DetectorModel::default();
    let base = AcquisitionSettings {
        n_pulses: 1_000_000,
        seed: 17,
        bin_width_ps: 50.0,
        ..AcquisitionSettings::default()
    };
    let a = acquire(&tpsf(), &laser, &det, &TdcModel::default(), &base).unwrap().histogram;
    let b = acquire(
        &tpsf(),
        &laser,
        &det,
        &TdcModel::default(),
        &AcquisitionSettings {
            parallelism: Parallelism::Exact,
            ..base
        },
    )
    .unwrap()
    .histogram;
    let (na, nb) = (a.total_counts as f64, b.total_counts as f64);
    assert!((na - nb).abs() < 5.0 * (na + nb).sqrt(), "{na} {nb}");
    let se = (a.variance_ps2() / na + b.variance_ps2() / nb).sqrt();
    assert!((a.mean_ps() - b.mean_ps()).abs() < 5.0 * se, "{} {}", a.mean_ps(), b.mean_ps());
}

#[test]
fn saturation_curve_shape() {
    let t = tpsf();
    let laser = LaserModel::default();
    let det = DetectorModel {
        dark_rate_hz: 0.0,
        ..DetectorModel::default()
    };
    let s = AcquisitionSettings {
        n_pulses: 1_000_000,
        seed: 1,
        bin_width_ps: 20.0,
        ..AcquisitionSettings::default()
    };
    let mus = [0.01, 0.1, 0.5, 1.0, 2.0, 5.0];
    let curve = saturation_curve(&t, &laser, &det, &TdcModel::default(), &mus, &s).unwrap();
    assert_eq!(curve.len(), mus.len());
    // Monte-Carlo scale of the distance for ~10^4 counts.
    let sigma = (t.variance() + 1600.0).sqrt();
    let n0 = curve[0].counts_per_pulse * 1e6;
    assert!(curve[0].distortion_ps < 3.0 * sigma / n0.sqrt(), "{:?}", curve[0]);
    for w in curve.windows(2).skip(1) {
        assert!(w[1].distortion_ps >= w[0].distortion_ps, "{curve:?}");
        assert!(w[1].counts_per_pulse > w[0].counts_per_pulse);
    }
    let last = curve.last().unwrap();
    assert!(last.counts_per_pulse < 1.0 && last.counts_per_pulse > 0.99);
    assert!((last.measured_rate_hz - last.counts_per_pulse * 1e6).abs() < 1e-6);
    assert!(saturation_curve(&t, &laser, &det, &TdcModel::default(), &[0.5, 0.1], &s).is_err());
}

#[test]
fn acquisition_budget() {
    // 10^7 counts at an effective 10 Msps takes one second.
    let counts = 1e7;
    let rate = 10e6;
    assert_eq!(counts / rate, 1.0);
    // The APD alone sustains that rate below its 25 MHz ceiling.
    let det = DetectorModel::default();
    assert!(effective_rate(20e6, &det) > rate);
}

#[test]
fn csv_and_sidecar() {
    let laser = LaserModel {
        rep_rate_hz: 1e9,
        ..LaserModel::default()
    };
    let laser = LaserModel { delay_ps: 0.0, ..laser };
    let s = AcquisitionSettings {
        n_pulses: 1000,
        bin_width_ps: 100.0,
        ..AcquisitionSettings::default()
    };
    let det = DetectorModel::default();
    let h = acquire(&tpsf(), &laser, &det, &TdcModel::default(), &s).unwrap().histogram;
    let csv = h.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "bin_start_ps,count");
    assert_eq!(lines.len(), 11);
    assert!(lines[2].starts_with("1.0000000000000000e2,"));
    let side = HistogramSidecar::new(&h, &laser, &det, &TdcModel::default(), &s);
    let json = serde_json::to_string(&side).unwrap();
    let back: HistogramSidecar = serde_json::from_str(&json).unwrap();
    assert_eq!(back, side);
    assert_eq!(side.rng, "ChaCha8");
}

#[test]
fn rejects_invalid_models() {
    let s = AcquisitionSettings::default();
    let bad_laser = LaserModel {
        rep_rate_hz: 0.0,
        ..LaserModel::default()
    };
    assert!(acquire(&tpsf(), &bad_laser, &DetectorModel::default(), &TdcModel::default(), &s).is_err());
    let bad_det = DetectorModel {
        dead_time_ns: -1.0,
        ..DetectorModel::default()
    };
    assert!(acquire(&tpsf(), &LaserModel::default(), &bad_det, &TdcModel::default(), &s).is_err());
}
