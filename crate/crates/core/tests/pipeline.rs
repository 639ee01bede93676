use dlfp_core::artifacts::{find_peaks, PeakParams};
use dlfp_core::io;
use dlfp_core::spectral::FLOOR_DB;
use dlfp_core::sweep::{self, CellOutcome};
use dlfp_core::{
    adjusted_bands, classify_peaks, detrend_polynomial, log_transform, mitigate, simulate, welch_psd,
    AmpModel, ArtifactClass, ArtifactParams, ArtifactSet, FitRange, MitigationConfig, Psd, Recording,
    SimConfig, WelchParams,
};

fn config(volts: f64, z_delta: f64, amp: AmpModel) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.stim.amplitude = volts;
    cfg.channel.set_mismatch(z_delta);
    cfg.channel.amp_model = amp;
    cfg
}

fn psd_of(cfg: &SimConfig) -> Psd {
    welch_psd(&simulate(cfg).unwrap(), &WelchParams::default()).unwrap()
}

#[test]
fn no_stimulation_peaks_only_at_oscillation_and_marker() {
    let mut cfg = config(0.0, 100.0, AmpModel::Linear);
    cfg.source1.pink_strength = 0.0;
    cfg.source3.pink_strength = 0.0;
    let psd = psd_of(&cfg);
    let peaks = find_peaks(&psd, 6.0, &PeakParams::default());
    let freqs: Vec<f64> = peaks.iter().map(|(k, _)| psd.freqs[*k]).collect();
    assert_eq!(freqs.len(), 2, "{freqs:?}");
    assert!((freqs[0] - 15.0).abs() <= psd.df());
    assert!((freqs[1] - 105.5).abs() <= psd.df());
}

#[test]
fn default_recording_peaks_at_oscillation_and_marker() {
    let psd = psd_of(&SimConfig::default());
    let peaks = find_peaks(&psd, 6.0, &PeakParams::default());
    let freqs: Vec<f64> = peaks.iter().map(|(k, _)| psd.freqs[*k]).collect();
    assert_eq!(freqs.len(), 2, "{freqs:?}");
    assert!((freqs[0] - 15.0).abs() <= psd.df());
    assert!((freqs[1] - 105.5).abs() <= psd.df());
}

#[test]
fn compressed_recording_labels() {
    let psd = psd_of(&config(6.0, 300.0, AmpModel::SoftClip));
    let set = ArtifactSet::predict(130.0, 422.0, ArtifactParams::default()).unwrap();
    let peaks = classify_peaks(&psd, &set, 2, 6.0).unwrap();
    for (f, want) in [
        (32.0, ArtifactClass::Ash),
        (64.0, ArtifactClass::Ash),
        (66.0, ArtifactClass::Imh),
        (105.5, ArtifactClass::Orm),
        (130.0, ArtifactClass::Ssh),
    ] {
        let hit = peaks
            .iter()
            .find(|p| (p.freq - f).abs() <= psd.df())
            .unwrap_or_else(|| panic!("no peak near {f} Hz"));
        assert_eq!(hit.label, Some(want), "{f} Hz");
    }
}

#[test]
fn linear_channel_has_no_intermodulation() {
    let psd = psd_of(&config(6.0, 300.0, AmpModel::Linear));
    let set = ArtifactSet::predict(130.0, 422.0, ArtifactParams::default()).unwrap();
    let occupied: Vec<f64> = set
        .tones
        .iter()
        .filter(|t| t.klass != ArtifactClass::Imh)
        .map(|t| t.freq)
        .chain([15.0])
        .collect();
    let peaks = find_peaks(&psd, 3.0, &PeakParams::default());
    let mut checked = 0;
    for t in set.of_class(ArtifactClass::Imh) {
        if occupied.iter().any(|f| (f - t.freq).abs() < 3.0 * psd.df()) {
            continue;
        }
        checked += 1;
        let hit = peaks.iter().find(|(k, _)| (psd.freqs[*k] - t.freq).abs() <= psd.df());
        assert!(hit.is_none(), "{} Hz peak {:?} dB under a linear amplifier", t.freq, hit.map(|h| h.1));
    }
    assert!(checked > 10);
}

#[test]
fn detrended_spectrum_is_flat() {
    // Oracle: refit a straight line to the residual over 1-100 Hz.
    let psd = psd_of(&config(8.0, 300.0, AmpModel::SoftClip));
    let lp = log_transform(&psd, FLOOR_DB);
    let cfg = MitigationConfig::default();
    let (res, coeffs) = detrend_polynomial(&lp, cfg.poly_order, cfg.fit_range).unwrap();
    assert_eq!(coeffs.len(), 5);
    let pts: Vec<(f64, f64)> = res
        .freqs
        .iter()
        .zip(&res.db)
        .filter(|(f, _)| (1.0..=100.0).contains(*f))
        .map(|(f, d)| (*f, *d))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!(slope.abs() <= 0.05, "slope {slope} dB/Hz");

    let narrow = FitRange { lo: 1.0, hi: 100.0 };
    assert!(detrend_polynomial(&lp, 4, narrow).is_ok());
}

#[test]
fn adjusted_gamma_skips_artifact_bins() {
    let psd = psd_of(&config(6.0, 300.0, AmpModel::SoftClip));
    let gamma = &adjusted_bands()[4];
    for f in [32.0, 64.0, 66.0] {
        let k = psd.bin_of(f);
        for j in k - 2..=k + 2 {
            assert!(!gamma.contains(psd.freqs[j]));
        }
    }
}

#[test]
fn flagging_follows_compression() {
    let welch = WelchParams::default();
    let mit = MitigationConfig::default();
    let r0 = mitigate(&simulate(&config(0.0, 300.0, AmpModel::SoftClip)).unwrap(), &welch, &mit).unwrap();
    assert!(!r0.gcr_report.flagged);
    assert_eq!(r0.gcr_report.gcr, 0.0);
    let r8 = mitigate(&simulate(&config(8.0, 300.0, AmpModel::SoftClip)).unwrap(), &welch, &mit).unwrap();
    assert!(r8.gcr_report.flagged, "gcr {}", r8.gcr_report.gcr);
    assert_eq!(r8.poly_coeffs.len(), 5);
    assert_eq!(r8.band_report.bands.len(), 5);
}

#[test]
fn minimal_file_gives_one_segment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.txt");
    let x: Vec<f64> = (0..844).map(|i| (i as f64 * 0.1).sin()).collect();
    io::write_recording(&Recording::new(x, 422.0).unwrap(), &path).unwrap();
    let rec = io::read_recording(&path).unwrap();
    assert_eq!(welch_psd(&rec, &WelchParams::default()).unwrap().n_segments, 1);
}

#[test]
fn single_cell_sweep_matches_report() {
    let base = SimConfig::default();
    let welch = WelchParams::default();
    let mit = MitigationConfig::default();
    let r = sweep::run_cell(&base, 0.0, 300.0, &welch, &mit).unwrap();
    let cells = [CellOutcome {
        volts: 0.0,
        z_delta: 300.0,
        result: Ok(r.clone()),
    }];
    let s = sweep::summarize(&[0.0], &[300.0], &cells);
    assert_eq!(s.gcr, vec![vec![Some(r.gcr_report.gcr)]]);
    assert_eq!(s.flagged, vec![vec![Some(r.gcr_report.flagged)]]);
    assert!(s.post_spread.values().all(|&v| v == 0.0));
}

#[test]
fn seed_changes_noise_only() {
    let mut a = SimConfig::default();
    a.duration = 4.0;
    let mut b = a.clone();
    b.reseed(77);
    let ra = simulate(&a).unwrap();
    let rb = simulate(&b).unwrap();
    assert_ne!(ra.samples(), rb.samples());
    assert_eq!(ra.len(), rb.len());
    assert_ne!(ra.meta["config_hash"], rb.meta["config_hash"]);
}
