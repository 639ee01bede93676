//! Welch power spectral density and the decibel transform.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recording::Recording;

/// Power below this value is clamped before taking the logarithm.
pub const POWER_FLOOR: f64 = 1e-20;
/// `10 * log10(POWER_FLOOR)`.
pub const FLOOR_DB: f64 = -200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    BlackmanHarris,
    Hann,
    Rect,
}

impl Window {
    /// Periodic (DFT-even) coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let len = n as f64;
        (0..n)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / len;
                match self {
                    Window::BlackmanHarris => {
                        0.35875 - 0.48829 * x.cos() + 0.14128 * (2.0 * x).cos()
                            - 0.01168 * (3.0 * x).cos()
                    }
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Rect => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchParams {
    pub nfft: usize,
    pub overlap_fraction: f64,
    pub segment_len: usize,
    pub window: Window,
}

impl Default for WelchParams {
    fn default() -> Self {
        WelchParams {
            nfft: 1024,
            overlap_fraction: 0.0,
            segment_len: 844,
            window: Window::BlackmanHarris,
        }
    }
}

impl WelchParams {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len == 0 {
            return Err(Error::validation("welch.segment_len", "must be >= 1"));
        }
        if self.segment_len > self.nfft {
            return Err(Error::validation(
                "welch.segment_len",
                format!("{} exceeds nfft {}", self.segment_len, self.nfft),
            ));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::validation(
                "welch.overlap_fraction",
                format!("must lie in [0, 1), got {}", self.overlap_fraction),
            ));
        }
        Ok(())
    }

    /// Hop between segment starts, in samples.
    pub fn step(&self) -> usize {
        let hop = (self.segment_len as f64 * (1.0 - self.overlap_fraction)).round() as usize;
        hop.max(1)
    }
}

/// One-sided power spectral density in V^2/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub fs: f64,
    pub n_segments: usize,
}

impl Psd {
    pub fn df(&self) -> f64 {
        self.freqs[1] - self.freqs[0]
    }

    /// Index of the bin nearest to `f`.
    pub fn bin_of(&self, f: f64) -> usize {
        let k = (f / self.df()).round();
        (k.max(0.0) as usize).min(self.freqs.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogPsd {
    pub freqs: Vec<f64>,
    pub db: Vec<f64>,
    pub fs: f64,
}

impl LogPsd {
    /// Same spectrum with a constant added to every bin.
    pub fn shifted(&self, offset_db: f64) -> LogPsd {
        LogPsd {
            freqs: self.freqs.clone(),
            db: self.db.iter().map(|d| d + offset_db).collect(),
            fs: self.fs,
        }
    }
}

/// Average of windowed periodograms. A trailing partial segment is dropped and
/// segments are not detrended.
pub fn welch_psd(rec: &Recording, params: &WelchParams) -> Result<Psd> {
    params.validate()?;
    let x = rec.samples();
    let seg = params.segment_len;
    if x.len() < seg {
        return Err(Error::TooShort {
            len: x.len(),
            needed: seg,
        });
    }
    let fs = rec.fs();
    let nfft = params.nfft;
    let win = params.window.coefficients(seg);
    let win_power: f64 = win.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let n_bins = nfft / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let step = params.step();
    let n_segments = (x.len() - seg) / step + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];

    for s in 0..n_segments {
        let chunk = &x[s * step..s * step + seg];
        for (b, (v, w)) in buf.iter_mut().zip(chunk.iter().zip(&win)) {
            *b = Complex::new(v * w, 0.0);
        }
        for b in &mut buf[seg..] {
            *b = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }

    let scale = 1.0 / (fs * win_power * n_segments as f64);
    let last = nfft / 2;
    let even = nfft.is_multiple_of(2);
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let doubled = k != 0 && !(even && k == last);
            a * scale * if doubled { 2.0 } else { 1.0 }
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * fs / nfft as f64).collect();
    Ok(Psd {
        freqs,
        power,
        fs,
        n_segments,
    })
}

/// `10 log10(power)`, clamped below at `floor_db`.
pub fn log_transform(psd: &Psd, floor_db: f64) -> LogPsd {
    let db = psd
        .power
        .iter()
        .map(|&p| {
            let d = 10.0 * p.log10();
            if d.is_nan() || d < floor_db {
                floor_db
            } else {
                d
            }
        })
        .collect();
    LogPsd {
        freqs: psd.freqs.clone(),
        db,
        fs: psd.fs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sine(f: f64, a: f64, fs: f64, n: usize) -> Recording {
        let x = (0..n).map(|i| a * (2.0 * PI * f * i as f64 / fs).sin()).collect();
        Recording::new(x, fs).unwrap()
    }

    #[test]
    fn sine_parseval() {
        // Oracle: a sinusoid of amplitude A carries A^2/2 of power; window-power
        // normalisation makes the integrated density match it.
        let a = 0.7;
        let rec = sine(15.0, a, 422.0, 844 * 20);
        let psd = welch_psd(&rec, &WelchParams::default()).unwrap();
        let total: f64 = psd.power.iter().sum::<f64>() * psd.df();
        assert!((total / (a * a / 2.0) - 1.0).abs() < 0.01, "{total}");
        let peak = psd
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((psd.freqs[peak] - 15.0).abs() <= psd.df());
    }

    #[test]
    fn zero_input_zero_power() {
        let rec = Recording::new(vec![0.0; 2000], 422.0).unwrap();
        let psd = welch_psd(&rec, &WelchParams::default()).unwrap();
        assert!(psd.power.iter().all(|&p| p == 0.0));
        assert_eq!(psd.n_segments, 2);
    }

    #[test]
    fn white_noise_level() {
        // Oracle: unit-variance white noise has one-sided density 2/fs.
        let fs = 422.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..844 * 500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let psd = welch_psd(&Recording::new(x, fs).unwrap(), &WelchParams::default()).unwrap();
        assert_eq!(psd.n_segments, 500);
        let inner = &psd.power[1..psd.power.len() - 1];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        assert!((mean / (2.0 / fs) - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn grid_shape() {
        let rec = sine(10.0, 1.0, 422.0, 844);
        let psd = welch_psd(&rec, &WelchParams::default()).unwrap();
        assert_eq!(psd.freqs.len(), 513);
        assert_eq!(psd.freqs[0], 0.0);
        assert_eq!(*psd.freqs.last().unwrap(), 211.0);
        assert!((psd.df() - 422.0 / 1024.0).abs() < 1e-12);
        assert_eq!(psd.n_segments, 1);
    }

    #[test]
    fn too_short_and_bad_params() {
        let rec = Recording::new(vec![0.0; 843], 422.0).unwrap();
        assert!(matches!(
            welch_psd(&rec, &WelchParams::default()),
            Err(Error::TooShort { len: 843, needed: 844 })
        ));
        let rec = Recording::new(vec![0.0; 2000], 422.0).unwrap();
        let p = WelchParams {
            segment_len: 2000,
            ..WelchParams::default()
        };
        assert!(welch_psd(&rec, &p).is_err());
        let p = WelchParams {
            overlap_fraction: 1.0,
            ..WelchParams::default()
        };
        assert!(welch_psd(&rec, &p).is_err());
    }

    #[test]
    fn overlap_counts_segments() {
        let rec = Recording::new(vec![1.0; 844 * 3], 422.0).unwrap();
        let p = WelchParams {
            overlap_fraction: 0.5,
            ..WelchParams::default()
        };
        assert_eq!(welch_psd(&rec, &p).unwrap().n_segments, 5);
    }

    #[test]
    fn windows_periodic() {
        let bh = Window::BlackmanHarris.coefficients(8);
        assert!((bh[0] - 6e-5).abs() < 1e-12);
        assert!((bh[4] - 1.0).abs() < 1e-12);
        let hann = Window::Hann.coefficients(4);
        for (h, want) in hann.iter().zip([0.0, 0.5, 1.0, 0.5]) {
            assert!((h - want).abs() < 1e-15);
        }
        assert!(Window::Rect.coefficients(5).iter().all(|&w| w == 1.0));
    }

    #[test]
    fn log_values() {
        let psd = Psd {
            freqs: vec![0.0, 1.0, 2.0],
            power: vec![1.0, 100.0, 0.0],
            fs: 4.0,
            n_segments: 1,
        };
        let lp = log_transform(&psd, FLOOR_DB);
        assert_eq!(lp.db[0], 0.0);
        assert_eq!(lp.db[1], 20.0);
        assert_eq!(lp.db[2], FLOOR_DB);
        assert!(lp.db.iter().all(|d| d.is_finite()));
    }

    proptest! {
        #[test]
        fn scaling_covariance(c in 0.01f64..100.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..1700).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = Recording::new(x, 422.0).unwrap();
            let b = a.scaled(c).unwrap();
            let pa = welch_psd(&a, &WelchParams::default()).unwrap();
            let pb = welch_psd(&b, &WelchParams::default()).unwrap();
            for (u, v) in pa.power.iter().zip(&pb.power) {
                prop_assert!((v - c * c * u).abs() <= 1e-9 * (c * c * u).abs() + 1e-300);
            }
            let la = log_transform(&pa, FLOOR_DB);
            let lb = log_transform(&pb, FLOOR_DB);
            for (u, v) in la.db.iter().zip(&lb.db) {
                prop_assert!((v - u - 20.0 * c.log10()).abs() < 1e-6);
            }
        }

        #[test]
        fn segment_additivity(seed in 0u64..1000, copies in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seg: Vec<f64> = (0..844).map(|_| StandardNormal.sample(&mut rng)).collect();
            let one = welch_psd(&Recording::new(seg.clone(), 422.0).unwrap(), &WelchParams::default()).unwrap();
            let joined: Vec<f64> = seg.iter().cycle().take(844 * copies).copied().collect();
            let many = welch_psd(&Recording::new(joined, 422.0).unwrap(), &WelchParams::default()).unwrap();
            prop_assert_eq!(many.n_segments, copies);
            for (u, v) in one.power.iter().zip(&many.power) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1e-30));
            }
        }

        #[test]
        fn power_non_negative(xs in proptest::collection::vec(-10.0f64..10.0, 844..1200)) {
            let psd = welch_psd(&Recording::new(xs, 422.0).unwrap(), &WelchParams::default()).unwrap();
            prop_assert!(psd.power.iter().all(|&p| p >= 0.0));
        }
    }
}
