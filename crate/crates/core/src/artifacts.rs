//! Where stimulation artifacts land in a 422 Hz spectrum, and labeling of
//! observed peaks against those predictions.
//!
//! Three families are tracked. Shaping harmonics (SSH) are the `k * f_T`
//! terms of the stimulation waveform that sit below Nyquist. Aliased shaping
//! harmonics (ASH) are the same terms after folding by the decimator.
//! Intermodulation harmonics (IMH) are sum and difference products created by
//! a compressive amplifier. The over-range marker (ORM) is listed too so it
//! does not end up as an unknown peak.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ORM_FREQ;
use crate::spectral::{log_transform, Psd, FLOOR_DB};
use crate::stats::median;

/// Spectral resolution used to merge nearly coincident predictions.
const DEDUP_NFFT: f64 = 1024.0;

/// Map a physical frequency onto `[0, fs/2]` as the sampler sees it.
pub fn fold_alias(f: f64, fs: f64) -> f64 {
    let r = f.rem_euclid(fs);
    if r <= fs / 2.0 {
        r
    } else {
        fs - r
    }
}

/// Unfolded harmonic frequencies `k * f_t` for `k = 1..=n`.
pub fn predict_ssh(f_t: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 * f_t).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ArtifactClass {
    Ssh,
    Ash,
    Imh,
    Orm,
}

impl ArtifactClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactClass::Ssh => "SSH",
            ArtifactClass::Ash => "ASH",
            ArtifactClass::Imh => "IMH",
            ArtifactClass::Orm => "ORM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactTone {
    /// Observed (folded) frequency in Hz.
    pub freq: f64,
    pub klass: ArtifactClass,
    pub origin: String,
    /// Number of base terms combined to make this tone; 1 for harmonics.
    pub order: usize,
}

/// Fold each stimulation harmonic; those that started above Nyquist are ASH.
pub fn predict_ash(f_t: f64, fs: f64, n: usize) -> Vec<ArtifactTone> {
    predict_ssh(f_t, n)
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let k = i + 1;
            if f > fs / 2.0 {
                ArtifactTone {
                    freq: fold_alias(f, fs),
                    klass: ArtifactClass::Ash,
                    origin: format!("harmonic {k} ({f} Hz) folded"),
                    order: 1,
                }
            } else {
                ArtifactTone {
                    freq: f,
                    klass: ArtifactClass::Ssh,
                    origin: format!("harmonic {k}"),
                    order: 1,
                }
            }
        })
        .collect()
}

/// Sum and difference products `|sum m_i f_i|` with `2 <= sum |m_i| <= max_order`.
///
/// Products that fold onto a base tone or onto DC are dropped. Products that
/// land within one resolution bin of each other are merged, keeping the
/// lowest-order origin.
pub fn predict_imh(base_tones: &[f64], fs: f64, max_order: usize) -> Result<Vec<ArtifactTone>> {
    if max_order < 2 {
        return Err(Error::invalid("max_order", format!("must be >= 2, got {max_order}")));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::invalid("fs", format!("must be > 0, got {fs}")));
    }
    let folded_base: Vec<f64> = base_tones.iter().map(|&f| fold_alias(f, fs)).collect();
    Ok(imh_products(base_tones, fs, max_order, &folded_base))
}

fn imh_products(base_tones: &[f64], fs: f64, max_order: usize, exclude: &[f64]) -> Vec<ArtifactTone> {
    let res = fs / DEDUP_NFFT;
    let mut found: Vec<ArtifactTone> = Vec::new();
    // Preference key per entry: lowest order, then smallest unfolded frequency,
    // then the combination that reaches furthest down the base list.
    let mut keys: Vec<(usize, f64, usize)> = Vec::new();
    let mut coeffs = vec![0i64; base_tones.len()];

    enumerate(0, max_order, &mut coeffs, &mut |m| {
        let order: usize = m.iter().map(|c| c.unsigned_abs() as usize).sum();
        if order < 2 {
            return;
        }
        // Only keep one of each +/- pair: first nonzero coefficient positive.
        let Some(first) = m.iter().position(|&c| c != 0) else { return };
        if m[first] < 0 {
            return;
        }
        let raw: f64 = m.iter().zip(base_tones).map(|(&c, f)| c as f64 * f).sum();
        let raw = raw.abs();
        let freq = fold_alias(raw, fs);
        if freq < res || exclude.iter().any(|b| (b - freq).abs() < res) {
            return;
        }
        let key = (order, raw, first);
        if let Some(i) = found.iter().position(|t| (t.freq - freq).abs() < res) {
            if key < keys[i] {
                found[i] = imh_tone(freq, order, m, base_tones, raw);
                keys[i] = key;
            }
            return;
        }
        found.push(imh_tone(freq, order, m, base_tones, raw));
        keys.push(key);
    });
    found.sort_by(|a, b| a.freq.total_cmp(&b.freq));
    found
}

fn enumerate(i: usize, budget: usize, m: &mut [i64], visit: &mut dyn FnMut(&[i64])) {
    if i == m.len() {
        visit(m);
        return;
    }
    let b = budget as i64;
    for c in -b..=b {
        m[i] = c;
        enumerate(i + 1, budget - c.unsigned_abs() as usize, m, visit);
    }
    m[i] = 0;
}

fn imh_tone(freq: f64, order: usize, m: &[i64], base: &[f64], raw: f64) -> ArtifactTone {
    let mut expr = String::new();
    for (&c, f) in m.iter().zip(base) {
        if c == 0 {
            continue;
        }
        let sign = if c < 0 { "-" } else if expr.is_empty() { "" } else { "+" };
        if c.abs() == 1 {
            expr.push_str(&format!("{sign}{f}"));
        } else {
            expr.push_str(&format!("{sign}{}*{f}", c.abs()));
        }
    }
    let origin = if (raw - freq).abs() < 1e-9 {
        format!("order-{order} intermod {expr}")
    } else {
        format!("order-{order} intermod {expr} = {raw} Hz folded")
    };
    ArtifactTone {
        freq,
        klass: ArtifactClass::Imh,
        origin,
        order,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactParams {
    pub n_harmonics: usize,
    pub imh_order: usize,
    pub include_orm: bool,
}

impl Default for ArtifactParams {
    fn default() -> Self {
        ArtifactParams {
            n_harmonics: 6,
            imh_order: 3,
            include_orm: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSet {
    pub tones: Vec<ArtifactTone>,
    pub f_t: f64,
    pub fs: f64,
    pub params: ArtifactParams,
}

impl ArtifactSet {
    /// Harmonics, their aliases, and intermodulation among the harmonics.
    ///
    /// Intermodulation products that coincide with an aliased harmonic are
    /// kept as separate IMH entries, so a peak at such a frequency carries
    /// both candidate origins. Products on top of an unaliased harmonic are
    /// dropped.
    pub fn predict(f_t: f64, fs: f64, params: ArtifactParams) -> Result<Self> {
        if !(f_t.is_finite() && f_t > 0.0) {
            return Err(Error::invalid("f_t", format!("must be > 0, got {f_t}")));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid("fs", format!("must be > 0, got {fs}")));
        }
        if params.n_harmonics == 0 {
            return Err(Error::invalid("n_harmonics", "must be >= 1"));
        }
        if params.imh_order < 2 {
            return Err(Error::invalid("imh_order", format!("must be >= 2, got {}", params.imh_order)));
        }
        let mut tones = predict_ash(f_t, fs, params.n_harmonics);
        let direct: Vec<f64> = tones
            .iter()
            .filter(|t| t.klass == ArtifactClass::Ssh)
            .map(|t| t.freq)
            .collect();
        let ssh = predict_ssh(f_t, params.n_harmonics);
        tones.extend(imh_products(&ssh, fs, params.imh_order, &direct));
        if params.include_orm {
            tones.push(ArtifactTone {
                freq: ORM_FREQ,
                klass: ArtifactClass::Orm,
                origin: "over-range marker".to_string(),
                order: 1,
            });
        }
        tones.sort_by(|a, b| a.freq.total_cmp(&b.freq).then(a.klass.cmp(&b.klass)));
        let res = fs / DEDUP_NFFT;
        let mut kept: Vec<ArtifactTone> = Vec::with_capacity(tones.len());
        for t in tones {
            let dup = kept
                .iter()
                .any(|k| k.klass == t.klass && (k.freq - t.freq).abs() < res);
            if !dup {
                kept.push(t);
            }
        }
        Ok(ArtifactSet {
            tones: kept,
            f_t,
            fs,
            params,
        })
    }

    pub fn of_class(&self, klass: ArtifactClass) -> impl Iterator<Item = &ArtifactTone> {
        self.tones.iter().filter(move |t| t.klass == klass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPeak {
    pub freq: f64,
    pub bin: usize,
    pub db: f64,
    pub prominence_db: f64,
    /// `None` when no predicted tone is close enough.
    pub label: Option<ArtifactClass>,
    pub origin: Option<String>,
    /// Other predicted tones within tolerance, nearest first.
    pub alternatives: Vec<ArtifactTone>,
}

impl LabeledPeak {
    pub fn label_name(&self) -> &'static str {
        self.label.map_or("UNKNOWN", ArtifactClass::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakParams {
    /// Half-width of the local-maximum test, in bins.
    pub local_bins: usize,
    /// Half-width of the background median window, Hz.
    pub neighborhood_hz: f64,
    /// Peaks further below the strongest one than this are ignored.
    pub dynamic_range_db: f64,
    /// Bins below this frequency are never reported.
    pub min_freq: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        PeakParams {
            local_bins: 2,
            neighborhood_hz: 10.0,
            dynamic_range_db: 90.0,
            min_freq: 1.0,
        }
    }
}

/// Local maxima of the log spectrum that stand out from their neighborhood.
pub fn find_peaks(psd: &Psd, prominence_db: f64, params: &PeakParams) -> Vec<(usize, f64)> {
    let lp = log_transform(psd, FLOOR_DB);
    let db = &lp.db;
    let n = db.len();
    let df = psd.df();
    let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half = (params.neighborhood_hz / df).round() as usize;
    let mut out = Vec::new();
    for i in 0..n {
        if psd.freqs[i] < params.min_freq || db[i] < top - params.dynamic_range_db {
            continue;
        }
        let lo = i.saturating_sub(params.local_bins);
        let hi = (i + params.local_bins).min(n - 1);
        if (lo..=hi).any(|j| j != i && db[j] > db[i]) {
            continue;
        }
        // Plateaus: report only the first bin.
        if (lo..i).any(|j| db[j] == db[i]) {
            continue;
        }
        let mut hood: Vec<f64> = db[i.saturating_sub(half)..=(i + half).min(n - 1)].to_vec();
        let prom = db[i] - median(&mut hood);
        if prom >= prominence_db {
            out.push((i, prom));
        }
    }
    out
}

/// Detect peaks and attach the nearest predicted artifact within `tol_bins`.
pub fn classify_peaks(
    psd: &Psd,
    artifacts: &ArtifactSet,
    tol_bins: usize,
    prominence_db: f64,
) -> Result<Vec<LabeledPeak>> {
    classify_peaks_with(psd, artifacts, tol_bins, prominence_db, &PeakParams::default())
}

pub fn classify_peaks_with(
    psd: &Psd,
    artifacts: &ArtifactSet,
    tol_bins: usize,
    prominence_db: f64,
    params: &PeakParams,
) -> Result<Vec<LabeledPeak>> {
    if (psd.fs - artifacts.fs).abs() > 1e-9 * psd.fs {
        return Err(Error::invalid(
            "artifacts.fs",
            format!("spectrum at {} Hz, predictions at {} Hz", psd.fs, artifacts.fs),
        ));
    }
    let df = psd.df();
    let tol = tol_bins as f64 * df + 1e-9;
    let lp = log_transform(psd, FLOOR_DB);
    let peaks = find_peaks(psd, prominence_db, params);
    Ok(peaks
        .into_iter()
        .map(|(bin, prom)| {
            let freq = psd.freqs[bin];
            let mut near: Vec<&ArtifactTone> = artifacts
                .tones
                .iter()
                .filter(|t| (t.freq - freq).abs() <= tol)
                .collect();
            near.sort_by(|a, b| {
                (a.freq - freq)
                    .abs()
                    .total_cmp(&(b.freq - freq).abs())
                    .then(a.order.cmp(&b.order))
            });
            let mut it = near.into_iter();
            let best = it.next();
            LabeledPeak {
                freq,
                bin,
                db: lp.db[bin],
                prominence_db: prom,
                label: best.map(|t| t.klass),
                origin: best.map(|t| t.origin.clone()),
                alternatives: it.cloned().collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fold_examples() {
        assert_eq!(fold_alias(130.0, 422.0), 130.0);
        assert_eq!(fold_alias(390.0, 422.0), 32.0);
        assert_eq!(fold_alias(780.0, 422.0), 64.0);
        assert_eq!(fold_alias(260.0, 422.0), 162.0);
        assert_eq!(fold_alias(910.0, 422.0), 66.0);
        assert_eq!(fold_alias(211.0, 422.0), 211.0);
        assert_eq!(fold_alias(0.0, 422.0), 0.0);
    }

    #[test]
    fn ssh_examples() {
        assert_eq!(predict_ssh(130.0, 1), vec![130.0]);
        assert_eq!(predict_ssh(130.0, 3), vec![130.0, 260.0, 390.0]);
        assert_eq!(*predict_ssh(130.0, 10).last().unwrap(), 1300.0);
    }

    #[test]
    fn ash_examples() {
        let t = predict_ash(130.0, 422.0, 6);
        let ash: Vec<f64> = t.iter().filter(|t| t.klass == ArtifactClass::Ash).map(|t| t.freq).collect();
        assert!(ash.contains(&32.0));
        assert!(ash.contains(&64.0));

        let one = predict_ash(130.0, 422.0, 1);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].klass, ArtifactClass::Ssh);
        assert_eq!(one[0].freq, 130.0);

        let seven = predict_ash(130.0, 422.0, 7);
        assert!(seven.iter().any(|t| t.freq == 66.0 && t.klass == ArtifactClass::Ash));
    }

    #[test]
    fn ash_matches_fold_exhaustively() {
        // Oracle: the folding formula evaluated by hand on k * 130.
        let fs = 422.0;
        for (k, t) in predict_ash(130.0, fs, 20).iter().enumerate() {
            let f = (k + 1) as f64 * 130.0;
            let mut r = f % fs;
            if r > fs / 2.0 {
                r = fs - r;
            }
            assert_eq!(t.freq, r);
            assert_eq!(t.klass == ArtifactClass::Ash, f > fs / 2.0);
        }
    }

    #[test]
    fn imh_examples() {
        let t = predict_imh(&[130.0, 780.0], 422.0, 2).unwrap();
        let hit = t.iter().find(|t| t.freq == 66.0).expect("66 Hz product");
        assert_eq!(hit.order, 2);
        assert!(hit.origin.contains("130+780"), "{}", hit.origin);
        let six = predict_imh(&predict_ssh(130.0, 6), 422.0, 3).unwrap();
        let hit = six.iter().find(|t| t.freq == 66.0).unwrap();
        assert_eq!(hit.origin, "order-2 intermod 130+780 = 910 Hz folded");

        let t = predict_imh(&[130.0], 422.0, 2).unwrap();
        assert!(t.iter().any(|t| t.freq == 162.0));

        assert!(predict_imh(&[], 422.0, 3).unwrap().is_empty());
        assert!(predict_imh(&[130.0], 422.0, 1).is_err());
    }

    #[test]
    fn imh_excludes_base_and_keeps_lowest_order() {
        let base = [130.0, 780.0];
        let t = predict_imh(&base, 422.0, 3).unwrap();
        assert!(t.iter().all(|t| t.freq != 130.0 && t.freq != 64.0));
        // 910 Hz is reachable as 130+780 (order 2) and as 7 * 130 only at order 7.
        assert_eq!(t.iter().find(|t| t.freq == 66.0).unwrap().order, 2);
        let mut f: Vec<f64> = t.iter().map(|t| t.freq).collect();
        f.dedup();
        assert_eq!(f.len(), t.len());
    }

    #[test]
    fn predicted_set_is_sorted_and_unique() {
        let set = ArtifactSet::predict(130.0, 422.0, ArtifactParams::default()).unwrap();
        for w in set.tones.windows(2) {
            assert!(w[0].freq <= w[1].freq);
            assert!(!(w[0].klass == w[1].klass && (w[0].freq - w[1].freq).abs() < 422.0 / 1024.0));
        }
        let ash: Vec<f64> = set.of_class(ArtifactClass::Ash).map(|t| t.freq).collect();
        assert!(ash.contains(&32.0) && ash.contains(&64.0));
        assert!(set.of_class(ArtifactClass::Imh).any(|t| t.freq == 66.0));
        assert!(set.of_class(ArtifactClass::Orm).any(|t| t.freq == 105.5));
    }

    fn synthetic_psd(peaks: &[(f64, f64)]) -> Psd {
        let fs = 422.0;
        let freqs: Vec<f64> = (0..513).map(|k| k as f64 * fs / 1024.0).collect();
        let power = freqs
            .iter()
            .map(|&f| {
                let mut p = 1e-6;
                for &(pf, gain) in peaks {
                    if (f - pf).abs() < fs / 2048.0 {
                        p *= gain;
                    }
                }
                p
            })
            .collect();
        Psd {
            freqs,
            power,
            fs,
            n_segments: 1,
        }
    }

    #[test]
    fn classify_single_ash() {
        let bin32 = (32.0f64 / (422.0 / 1024.0)).round() * 422.0 / 1024.0;
        let psd = synthetic_psd(&[(bin32, 100.0)]);
        let set = ArtifactSet {
            tones: vec![ArtifactTone {
                freq: 32.0,
                klass: ArtifactClass::Ash,
                origin: "harmonic 3 (390 Hz) folded".into(),
                order: 1,
            }],
            f_t: 130.0,
            fs: 422.0,
            params: ArtifactParams::default(),
        };
        let peaks = classify_peaks(&psd, &set, 2, 6.0).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].label, Some(ArtifactClass::Ash));
        assert_eq!(peaks[0].label_name(), "ASH");
    }

    #[test]
    fn classify_flat_and_unknown() {
        let set = ArtifactSet::predict(130.0, 422.0, ArtifactParams::default()).unwrap();
        assert!(classify_peaks(&synthetic_psd(&[]), &set, 2, 6.0).unwrap().is_empty());
        let b = (20.0f64 / (422.0 / 1024.0)).round() * 422.0 / 1024.0;
        let peaks = classify_peaks(&synthetic_psd(&[(b, 1e3)]), &set, 2, 6.0).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].label_name(), "UNKNOWN");
    }

    #[test]
    fn classify_reports_collisions() {
        let params = ArtifactParams {
            n_harmonics: 7,
            ..ArtifactParams::default()
        };
        let set = ArtifactSet::predict(130.0, 422.0, params).unwrap();
        let b = (66.0f64 / (422.0 / 1024.0)).round() * 422.0 / 1024.0;
        let peaks = classify_peaks(&synthetic_psd(&[(b, 1e3)]), &set, 2, 6.0).unwrap();
        assert_eq!(peaks.len(), 1);
        let mut classes: Vec<ArtifactClass> = peaks[0].alternatives.iter().map(|t| t.klass).collect();
        classes.extend(peaks[0].label);
        assert!(classes.contains(&ArtifactClass::Ash));
        assert!(classes.contains(&ArtifactClass::Imh));
    }

    #[test]
    fn classify_rejects_rate_mismatch() {
        let set = ArtifactSet::predict(130.0, 500.0, ArtifactParams::default()).unwrap();
        assert!(classify_peaks(&synthetic_psd(&[]), &set, 2, 6.0).is_err());
    }

    proptest! {
        #[test]
        fn fold_in_range_and_periodic(f in 0.0f64..1e5, fs in 1.0f64..5000.0) {
            let r = fold_alias(f, fs);
            prop_assert!((0.0..=fs / 2.0).contains(&r));
            prop_assert!((fold_alias(f + fs, fs) - r).abs() < 1e-6 * fs.max(f));
        }

        #[test]
        fn fold_idempotent_and_mirror(u in 0.0f64..=1.0, fs in 1.0f64..5000.0) {
            let f = u * fs / 2.0;
            prop_assert!((fold_alias(f, fs) - f).abs() < 1e-9 * fs);
            prop_assert!((fold_alias(fs - f, fs) - f).abs() < 1e-9 * fs);
        }

        #[test]
        fn classification_is_total(gains in proptest::collection::vec((1.0f64..200.0, 10.0f64..1e4), 0..6)) {
            let set = ArtifactSet::predict(130.0, 422.0, ArtifactParams::default()).unwrap();
            let peaks = gains.iter().map(|&(f, g)| ((f / (422.0 / 1024.0)).round() * 422.0 / 1024.0, g)).collect::<Vec<_>>();
            let psd = synthetic_psd(&peaks);
            for p in classify_peaks(&psd, &set, 2, 6.0).unwrap() {
                let name = p.label_name();
                prop_assert!(["SSH", "ASH", "IMH", "ORM", "UNKNOWN"].contains(&name));
                prop_assert_eq!(p.label.is_some(), p.origin.is_some());
            }
        }
    }
}
