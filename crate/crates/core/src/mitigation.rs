//! Mismatch-compression mitigation.
//!
//! Compression raises a broadband pedestal and sprinkles narrowband artifacts
//! across the spectrum. The pipeline here removes the pedestal with a
//! low-order polynomial fit to the log spectrum, reads band power as a median
//! over frequency windows chosen to miss the artifact tones, and scores each
//! recording with the gain compression ratio
//!
//! ```text
//! GCr = P_IMH / (P_ASH + P_IMH)
//! ```
//!
//! where the powers are narrowband tone powers at the aliased harmonic and
//! intermodulation frequencies. GCr is zero for a linear channel, since
//! intermodulation needs a nonlinearity, and grows as the amplifier
//! compresses.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recording::Recording;
use crate::spectral::{log_transform, welch_psd, LogPsd, Psd, WelchParams, FLOOR_DB};
use crate::stats::median;

/// Identifier written into reports so old outputs can be told apart if the formula changes.
pub const GCR_FORMULA: &str = "p_imh/(p_ash+p_imh)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandName {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl BandName {
    pub const ALL: [BandName; 5] = [
        BandName::Delta,
        BandName::Theta,
        BandName::Alpha,
        BandName::Beta,
        BandName::Gamma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BandName::Delta => "delta",
            BandName::Theta => "theta",
            BandName::Alpha => "alpha",
            BandName::Beta => "beta",
            BandName::Gamma => "gamma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandVariant {
    Standard,
    Adjusted,
    /// Reports over a user-supplied mix of bands.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandDef {
    pub name: BandName,
    pub lo: f64,
    pub hi: f64,
    pub variant: BandVariant,
}

impl BandDef {
    pub const fn new(name: BandName, lo: f64, hi: f64, variant: BandVariant) -> Self {
        BandDef { name, lo, hi, variant }
    }

    /// Half-open membership `lo <= f < hi`.
    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f < self.hi
    }
}

pub fn standard_bands() -> Vec<BandDef> {
    use BandName::*;
    let v = BandVariant::Standard;
    vec![
        BandDef::new(Delta, 1.0, 4.0, v),
        BandDef::new(Theta, 4.0, 8.0, v),
        BandDef::new(Alpha, 8.0, 14.0, v),
        BandDef::new(Beta, 14.0, 30.0, v),
        BandDef::new(Gamma, 30.0, 50.0, v),
    ]
}

/// Standard bands with beta and gamma narrowed away from the 32/64/66 Hz artifacts.
pub fn adjusted_bands() -> Vec<BandDef> {
    use BandName::*;
    let v = BandVariant::Adjusted;
    vec![
        BandDef::new(Delta, 1.0, 4.0, v),
        BandDef::new(Theta, 4.0, 8.0, v),
        BandDef::new(Alpha, 8.0, 14.0, v),
        BandDef::new(Beta, 14.0, 20.0, v),
        BandDef::new(Gamma, 40.0, 50.0, v),
    ]
}

/// Closed frequency interval in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRange {
    pub lo: f64,
    pub hi: f64,
}

impl FitRange {
    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationConfig {
    pub poly_order: usize,
    pub fit_range: FitRange,
    pub bands: Vec<BandDef>,
    pub gcr_threshold: f64,
    pub ash_freqs: Vec<f64>,
    pub imh_freqs: Vec<f64>,
    /// Integration half-width around each tone, Hz.
    pub peak_halfwidth: f64,
    /// Inner and outer offsets of the background shoulders, Hz.
    pub shoulder: (f64, f64),
    /// A tone counts only if its strongest bin clears the background by this much.
    pub detect_db: f64,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        MitigationConfig {
            poly_order: 4,
            fit_range: FitRange { lo: 1.0, hi: 211.0 },
            bands: adjusted_bands(),
            gcr_threshold: 0.25,
            ash_freqs: vec![32.0, 64.0],
            imh_freqs: vec![66.0],
            peak_halfwidth: 1.0,
            shoulder: (2.0, 4.0),
            detect_db: 6.0,
        }
    }
}

impl MitigationConfig {
    /// Checks that do not depend on the sampling rate.
    pub fn validate(&self) -> Result<()> {
        let r = self.fit_range;
        if !(r.lo.is_finite() && r.hi.is_finite() && r.lo >= 0.0 && r.lo < r.hi) {
            return Err(Error::validation(
                "mitigation.fit_range",
                format!("need 0 <= lo < hi, got {}..{}", r.lo, r.hi),
            ));
        }
        if self.bands.is_empty() {
            return Err(Error::validation("mitigation.bands", "at least one band is required"));
        }
        for (i, b) in self.bands.iter().enumerate() {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo > 0.0 && b.lo < b.hi) {
                return Err(Error::validation(
                    format!("mitigation.bands[{i}]"),
                    format!("need 0 < lo < hi, got {}..{}", b.lo, b.hi),
                ));
            }
        }
        for (i, a) in self.bands.iter().enumerate() {
            for (j, b) in self.bands.iter().enumerate().skip(i + 1) {
                if a.lo < b.hi && b.lo < a.hi {
                    return Err(Error::validation(
                        format!("mitigation.bands[{j}]"),
                        format!("overlaps {} ({}..{} Hz)", a.name.as_str(), a.lo, a.hi),
                    ));
                }
            }
        }
        let t = self.gcr_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::validation(
                "mitigation.gcr_threshold",
                format!("must lie in (0, 1], got {t}"),
            ));
        }
        if !(self.peak_halfwidth.is_finite() && self.peak_halfwidth > 0.0) {
            return Err(Error::validation("mitigation.peak_halfwidth", "must be > 0"));
        }
        let (inner, outer) = self.shoulder;
        if !(inner >= self.peak_halfwidth && inner < outer && outer.is_finite()) {
            return Err(Error::validation(
                "mitigation.shoulder",
                format!("need peak_halfwidth <= inner < outer, got ({inner}, {outer})"),
            ));
        }
        if !self.detect_db.is_finite() || self.detect_db < 0.0 {
            return Err(Error::validation("mitigation.detect_db", "must be >= 0"));
        }
        for (field, freqs) in [("mitigation.ash_freqs", &self.ash_freqs), ("mitigation.imh_freqs", &self.imh_freqs)] {
            if let Some(f) = freqs.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
                return Err(Error::validation(field, format!("frequency {f} must be > 0")));
            }
        }
        Ok(())
    }

    /// Everything in [`validate`](Self::validate) plus the Nyquist limit for `fs`.
    pub fn validate_for(&self, fs: f64) -> Result<()> {
        self.validate()?;
        let nyq = fs / 2.0;
        for (i, b) in self.bands.iter().enumerate() {
            if b.hi > nyq {
                return Err(Error::validation(
                    format!("mitigation.bands[{i}]"),
                    format!("upper edge {} Hz exceeds Nyquist {nyq} Hz", b.hi),
                ));
            }
        }
        let reach = self.shoulder.1;
        for (field, freqs) in [("mitigation.ash_freqs", &self.ash_freqs), ("mitigation.imh_freqs", &self.imh_freqs)] {
            if let Some(f) = freqs.iter().find(|&&f| f + reach > nyq) {
                return Err(Error::validation(
                    field,
                    format!("{f} Hz and its shoulders do not fit below Nyquist {nyq} Hz"),
                ));
            }
        }
        Ok(())
    }
}

fn band_variant(bands: &[BandDef]) -> BandVariant {
    let first = bands[0].variant;
    if bands.iter().all(|b| b.variant == first) {
        first
    } else {
        BandVariant::Custom
    }
}

/// Fit a polynomial in frequency to `lp.db` over `fit_range` and subtract it everywhere.
///
/// Coefficients are returned lowest order first, in dB per Hz^k.
pub fn detrend_polynomial(lp: &LogPsd, order: usize, fit_range: FitRange) -> Result<(LogPsd, Vec<f64>)> {
    let idx: Vec<usize> = (0..lp.freqs.len()).filter(|&i| fit_range.contains(lp.freqs[i])).collect();
    let ncoef = order + 1;
    if idx.len() < ncoef {
        return Err(Error::DegenerateFit {
            order,
            bins: idx.len(),
        });
    }
    // Fit in u = f / scale so the Vandermonde columns stay comparable in size.
    let scale = idx.iter().map(|&i| lp.freqs[i].abs()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let a = DMatrix::from_fn(idx.len(), ncoef, |r, c| (lp.freqs[idx[r]] / scale).powi(c as i32));
    let b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| lp.db[i]));
    let qr = a.qr();
    let r = qr.r();
    let diag_max = (0..ncoef).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..ncoef).any(|i| r[(i, i)].abs() <= 1e-12 * diag_max) || diag_max == 0.0 {
        return Err(Error::DegenerateFit {
            order,
            bins: idx.len(),
        });
    }
    let qtb = qr.q().transpose() * b;
    let cu = r.solve_upper_triangular(&qtb).ok_or(Error::DegenerateFit {
        order,
        bins: idx.len(),
    })?;

    let db = lp
        .freqs
        .iter()
        .zip(&lp.db)
        .map(|(&f, &d)| {
            let u = f / scale;
            let fit = cu.iter().rev().fold(0.0, |acc, c| acc * u + c);
            d - fit
        })
        .collect();
    let coeffs = cu
        .iter()
        .enumerate()
        .map(|(k, c)| c / scale.powi(k as i32))
        .collect();
    Ok((
        LogPsd {
            freqs: lp.freqs.clone(),
            db,
            fs: lp.fs,
        },
        coeffs,
    ))
}

/// Median dB over bins with `lo <= f < hi`.
pub fn band_power_median(lp: &LogPsd, band: &BandDef) -> Result<f64> {
    let mut vals: Vec<f64> = lp
        .freqs
        .iter()
        .zip(&lp.db)
        .filter(|(f, _)| band.contains(**f))
        .map(|(_, d)| *d)
        .collect();
    if vals.is_empty() {
        return Err(Error::EmptyBand {
            band: band.name.as_str().to_string(),
            lo: band.lo,
            hi: band.hi,
        });
    }
    Ok(median(&mut vals))
}

/// Background-subtracted power of a narrowband tone at `freq`, in V^2.
///
/// The background is the median density over both shoulders
/// `halfwidth_inner <= |f - freq| <= halfwidth_outer`. Tones whose strongest
/// bin is less than `detect_db` above it contribute nothing.
pub fn tone_power(psd: &Psd, freq: f64, halfwidth: f64, shoulder: (f64, f64), detect_db: f64) -> f64 {
    let df = psd.df();
    let mut peak = f64::NEG_INFINITY;
    let mut body = Vec::new();
    let mut bg = Vec::new();
    for (&f, &p) in psd.freqs.iter().zip(&psd.power) {
        let d = (f - freq).abs();
        if d <= halfwidth {
            body.push(p);
            peak = peak.max(p);
        } else if d >= shoulder.0 && d <= shoulder.1 {
            bg.push(p);
        }
    }
    if body.is_empty() || bg.is_empty() {
        return 0.0;
    }
    let background = median(&mut bg);
    if peak < background * 10f64.powf(detect_db / 10.0) {
        return 0.0;
    }
    let excess: f64 = body.iter().map(|p| p - background).sum();
    (excess * df).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcrReport {
    pub gcr: f64,
    pub p_ash: f64,
    pub p_imh: f64,
    pub threshold: f64,
    pub flagged: bool,
}

impl GcrReport {
    pub fn from_powers(p_ash: f64, p_imh: f64, threshold: f64) -> Self {
        let total = p_ash + p_imh;
        let gcr = if total > 0.0 { p_imh / total } else { 0.0 };
        GcrReport {
            gcr,
            p_ash,
            p_imh,
            threshold,
            flagged: gcr > threshold,
        }
    }
}

pub fn compute_gcr(psd: &Psd, config: &MitigationConfig) -> Result<GcrReport> {
    config.validate_for(psd.fs)?;
    let power = |freqs: &[f64]| -> f64 {
        freqs
            .iter()
            .map(|&f| tone_power(psd, f, config.peak_halfwidth, config.shoulder, config.detect_db))
            .sum()
    };
    Ok(GcrReport::from_powers(
        power(&config.ash_freqs),
        power(&config.imh_freqs),
        config.gcr_threshold,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPower {
    pub name: BandName,
    pub lo: f64,
    pub hi: f64,
    pub median_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPowerReport {
    pub variant: BandVariant,
    pub bands: Vec<BandPower>,
    pub meta: BTreeMap<String, String>,
}

impl BandPowerReport {
    pub fn compute(lp: &LogPsd, bands: &[BandDef], meta: BTreeMap<String, String>) -> Result<Self> {
        let bands_out = bands
            .iter()
            .map(|b| {
                Ok(BandPower {
                    name: b.name,
                    lo: b.lo,
                    hi: b.hi,
                    median_db: band_power_median(lp, b)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BandPowerReport {
            variant: if bands.is_empty() { BandVariant::Custom } else { band_variant(bands) },
            bands: bands_out,
            meta,
        })
    }

    pub fn get(&self, name: BandName) -> Option<f64> {
        self.bands.iter().find(|b| b.name == name).map(|b| b.median_db)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationResult {
    pub detrended: LogPsd,
    pub poly_coeffs: Vec<f64>,
    pub band_report: BandPowerReport,
    /// Standard bands on the log spectrum before any correction, kept as the
    /// unmitigated comparison.
    pub raw_band_report: BandPowerReport,
    pub gcr_report: GcrReport,
}

/// Welch, log, detrend, band medians and GCr in one pass.
pub fn mitigate(rec: &Recording, welch: &WelchParams, config: &MitigationConfig) -> Result<MitigationResult> {
    config.validate_for(rec.fs())?;
    let psd = welch_psd(rec, welch)?;
    let lp = log_transform(&psd, FLOOR_DB);
    let (detrended, poly_coeffs) = detrend_polynomial(&lp, config.poly_order, config.fit_range)?;
    let band_report = BandPowerReport::compute(&detrended, &config.bands, rec.meta.clone())?;
    let raw_band_report = BandPowerReport::compute(&lp, &standard_bands(), rec.meta.clone())?;
    let gcr_report = compute_gcr(&psd, config)?;
    Ok(MitigationResult {
        detrended,
        poly_coeffs,
        band_report,
        raw_band_report,
        gcr_report,
    })
}
