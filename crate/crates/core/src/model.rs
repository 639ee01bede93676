//! Synthetic differential LFP generation.
//!
//! The signal chain is: two neural sources and a shared stimulation artifact,
//! each electrode seen through its own `Zb / (Z + Zb)` divider, a differential
//! amplifier with gain `A_d`, the over-range marker tone, a memoryless signal
//! amplifier (linear, hard clip or `tanh`) and finally decimation to the
//! device rate with no anti-alias filter. Folding at the decimator is the
//! modeled device behavior.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::recording::Recording;

/// Device sampling rate of the sensing channel (Hz).
pub const DEVICE_FS: f64 = 422.0;
/// Over-range marker frequency (Hz).
pub const ORM_FREQ: f64 = 105.5;
/// Saline-side electrode impedance used as the reference for mismatch presets.
pub const REFERENCE_IMPEDANCE: f64 = 800.0;

/// Impedance mismatch presets measured across the two recording contacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MismatchPreset {
    /// Lead in uniform saline, about 100 ohm.
    Uniform,
    /// Lead across the saline/agar interface, about 300 ohm.
    Interface,
}

impl MismatchPreset {
    pub fn ohms(self) -> f64 {
        match self {
            MismatchPreset::Uniform => 100.0,
            MismatchPreset::Interface => 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSpec {
    pub oscillation_freq: f64,
    pub oscillation_amp: f64,
    /// Pink component has a one-sided PSD of `pink_strength^2 / f` V^2/Hz.
    pub pink_strength: f64,
    pub seed: u64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec {
            oscillation_freq: 15.0,
            oscillation_amp: 2e-3,
            pink_strength: 1e-3,
            seed: 1,
        }
    }
}

impl SourceSpec {
    /// Pink noise only, as seen at the second recording contact.
    pub fn background(seed: u64) -> Self {
        SourceSpec {
            oscillation_amp: 0.0,
            seed,
            ..SourceSpec::default()
        }
    }
}

/// Weights of the harmonic series used for the stimulation waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoeffScheme {
    /// `c_k = 1 / k`.
    Reciprocal,
    /// Rectangular pulse train of the given duty cycle, normalised so `c_1 = 1`.
    Pulse { duty: f64 },
}

impl CoeffScheme {
    pub fn coefficient(self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            CoeffScheme::Reciprocal => 1.0 / k,
            CoeffScheme::Pulse { duty } => (PI * k * duty).sin() / (k * (PI * duty).sin()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimSpec {
    pub f_t: f64,
    /// Programmed amplitude in device volts (the sweep axis).
    pub amplitude: f64,
    pub n_harmonics: usize,
    pub coeff_scheme: CoeffScheme,
    /// Fraction of the programmed amplitude that reaches the recording contacts.
    pub coupling: f64,
}

impl Default for StimSpec {
    fn default() -> Self {
        StimSpec {
            f_t: 130.0,
            amplitude: 0.0,
            n_harmonics: 6,
            coeff_scheme: CoeffScheme::Pulse { duty: 0.01 },
            coupling: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmpModel {
    Linear,
    HardClip,
    SoftClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSpec {
    pub z1: f64,
    pub z3: f64,
    pub zb: f64,
    pub a_d: f64,
    pub amp_model: AmpModel,
    pub g1: f64,
    pub g2: f64,
    pub clip_level: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            z1: REFERENCE_IMPEDANCE + MismatchPreset::Uniform.ohms(),
            z3: REFERENCE_IMPEDANCE,
            zb: 1e4,
            a_d: 500.0,
            amp_model: AmpModel::SoftClip,
            g1: 1.0,
            g2: 1.0,
            clip_level: 1.0,
        }
    }
}

impl ChannelSpec {
    /// Z1 - Z3.
    pub fn z_delta(&self) -> f64 {
        self.z1 - self.z3
    }

    /// Keep `z3` and move `z1` so that the mismatch equals `z_delta`.
    pub fn set_mismatch(&mut self, z_delta: f64) {
        self.z1 = self.z3 + z_delta;
    }

    fn divider(&self, z: f64) -> f64 {
        self.zb / (z + self.zb)
    }

    /// Signal amplifier transfer function for a single value.
    pub fn transfer(&self, v: f64) -> f64 {
        let x = self.g1 * v;
        let y = match self.amp_model {
            AmpModel::Linear => x,
            AmpModel::HardClip => x.clamp(-self.clip_level, self.clip_level),
            AmpModel::SoftClip => x.tanh(),
        };
        self.g2 * y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrmSpec {
    pub freq: f64,
    pub amplitude: f64,
}

impl Default for OrmSpec {
    fn default() -> Self {
        OrmSpec {
            freq: ORM_FREQ,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub duration: f64,
    pub fs_out: f64,
    pub oversample: usize,
    pub source1: SourceSpec,
    pub source3: SourceSpec,
    pub stim: StimSpec,
    pub channel: ChannelSpec,
    pub orm: OrmSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 60.0,
            fs_out: DEVICE_FS,
            oversample: 10,
            source1: SourceSpec::default(),
            source3: SourceSpec::background(2),
            stim: StimSpec::default(),
            channel: ChannelSpec::default(),
            orm: OrmSpec::default(),
        }
    }
}

/// Minimum output length so one Welch segment fits.
pub const MIN_OUTPUT_SAMPLES: usize = 844;

fn check(ok: bool, field: &str, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(field, msg()))
    }
}

fn positive(v: f64, field: &str) -> Result<()> {
    check(v.is_finite() && v > 0.0, field, || format!("must be > 0, got {v}"))
}

fn non_negative(v: f64, field: &str) -> Result<()> {
    check(v.is_finite() && v >= 0.0, field, || format!("must be >= 0, got {v}"))
}

impl SimConfig {
    pub fn internal_fs(&self) -> f64 {
        self.fs_out * self.oversample as f64
    }

    pub fn output_len(&self) -> usize {
        (self.duration * self.fs_out).round() as usize
    }

    /// Set both source seeds from one number (`seed`, `seed + 1`).
    pub fn reseed(&mut self, seed: u64) {
        self.source1.seed = seed;
        self.source3.seed = seed.wrapping_add(1);
    }

    pub fn validate(&self) -> Result<()> {
        positive(self.duration, "sim.duration")?;
        positive(self.fs_out, "sim.fs_out")?;
        check(self.oversample >= 1, "sim.oversample", || "must be >= 1".into())?;
        check(
            self.output_len() >= MIN_OUTPUT_SAMPLES,
            "sim.duration",
            || {
                format!(
                    "{} output samples is shorter than one {MIN_OUTPUT_SAMPLES}-sample analysis segment",
                    self.output_len()
                )
            },
        )?;
        let nyquist = self.fs_out / 2.0;
        for (name, s) in [("sim.source1", &self.source1), ("sim.source3", &self.source3)] {
            let f = format!("{name}.oscillation_freq");
            positive(s.oscillation_freq, &f)?;
            check(s.oscillation_freq < nyquist, &f, || {
                format!("{} Hz is not below the output Nyquist {nyquist} Hz", s.oscillation_freq)
            })?;
            non_negative(s.oscillation_amp, &format!("{name}.oscillation_amp"))?;
            non_negative(s.pink_strength, &format!("{name}.pink_strength"))?;
        }
        positive(self.stim.f_t, "sim.stim.f_t")?;
        non_negative(self.stim.amplitude, "sim.stim.amplitude")?;
        non_negative(self.stim.coupling, "sim.stim.coupling")?;
        check(self.stim.n_harmonics >= 1, "sim.stim.n_harmonics", || "must be >= 1".into())?;
        if let CoeffScheme::Pulse { duty } = self.stim.coeff_scheme {
            check(duty > 0.0 && duty < 1.0, "sim.stim.coeff_scheme.duty", || {
                format!("duty must lie in (0, 1), got {duty}")
            })?;
        }
        let c = &self.channel;
        positive(c.z1, "sim.channel.z1")?;
        positive(c.z3, "sim.channel.z3")?;
        positive(c.zb, "sim.channel.zb")?;
        check(c.a_d.is_finite(), "sim.channel.a_d", || "must be finite".into())?;
        check(c.g1.is_finite(), "sim.channel.g1", || "must be finite".into())?;
        check(c.g2.is_finite(), "sim.channel.g2", || "must be finite".into())?;
        positive(c.clip_level, "sim.channel.clip_level")?;
        positive(self.orm.freq, "sim.orm.freq")?;
        non_negative(self.orm.amplitude, "sim.orm.amplitude")?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("SimConfig serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Sinusoid plus pink noise for one contact.
pub fn gen_neural_source(spec: &SourceSpec, n: usize, fs: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one sample"));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::invalid("fs", format!("must be > 0, got {fs}")));
    }
    if spec.oscillation_freq >= fs / 2.0 {
        return Err(Error::invalid(
            "oscillation_freq",
            format!("{} Hz cannot be represented at {fs} Hz", spec.oscillation_freq),
        ));
    }
    let w = 2.0 * PI * spec.oscillation_freq / fs;
    let mut out: Vec<f64> = (0..n).map(|i| spec.oscillation_amp * (w * i as f64).sin()).collect();
    if spec.pink_strength > 0.0 {
        let pink = pink_noise(n, fs, spec.pink_strength, spec.seed);
        for (o, p) in out.iter_mut().zip(pink) {
            *o += p;
        }
    }
    Ok(out)
}

/// White Gaussian noise shaped by `1/sqrt(f)` in the frequency domain.
///
/// White noise of unit variance has a one-sided density of `2/fs`; the
/// shaping filter `strength * sqrt(fs / (2 f))` turns that into
/// `strength^2 / f`. The DC bin is zeroed.
fn pink_noise(n: usize, fs: f64, strength: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    let df = fs / n as f64;
    for (k, x) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(n - k) as f64 * df;
        *x *= strength * (fs / (2.0 * f)).sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let norm = 1.0 / n as f64;
    buf.into_iter().map(|c| c.re * norm).collect()
}

/// `amplitude * sum_k c_k sin(2 pi k f_T t)` without the coupling factor.
pub fn gen_stim_waveform(spec: &StimSpec, n: usize, fs: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one sample"));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::invalid("fs", format!("must be > 0, got {fs}")));
    }
    if spec.amplitude == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let coeffs: Vec<f64> = (1..=spec.n_harmonics)
        .map(|k| spec.coeff_scheme.coefficient(k))
        .collect();
    let w = 2.0 * PI * spec.f_t / fs;
    Ok((0..n)
        .map(|i| {
            let phase = w * i as f64;
            let s: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * (phase * (k + 1) as f64).sin())
                .sum();
            spec.amplitude * s
        })
        .collect())
}

/// `A_d * (e1 - e3)` with `e_i = Zb / (Z_i + Zb) * (x_i + S)`.
pub fn differential_stage(x1: &[f64], x3: &[f64], s: &[f64], channel: &ChannelSpec) -> Result<Vec<f64>> {
    if x1.len() != x3.len() {
        return Err(Error::LengthMismatch {
            left: x1.len(),
            right: x3.len(),
        });
    }
    if x1.len() != s.len() {
        return Err(Error::LengthMismatch {
            left: x1.len(),
            right: s.len(),
        });
    }
    let d1 = channel.divider(channel.z1);
    let d3 = channel.divider(channel.z3);
    Ok(x1
        .iter()
        .zip(x3)
        .zip(s)
        .map(|((a, b), st)| channel.a_d * (d1 * (a + st) - d3 * (b + st)))
        .collect())
}

pub fn amplifier_stage(v: &[f64], channel: &ChannelSpec) -> Vec<f64> {
    v.iter().map(|&x| channel.transfer(x)).collect()
}

/// Keep every `factor`-th sample. No anti-alias filter.
pub fn decimate_no_filter(v: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::invalid("factor", "must be >= 1"));
    }
    if !v.len().is_multiple_of(factor) {
        return Err(Error::NotDivisible {
            len: v.len(),
            factor,
        });
    }
    Ok(v.iter().step_by(factor).copied().collect())
}

/// Run the whole chain and return the device-rate recording.
pub fn simulate(config: &SimConfig) -> Result<Recording> {
    config.validate()?;
    let fs = config.internal_fs();
    let n = config.output_len() * config.oversample;

    let x1 = gen_neural_source(&config.source1, n, fs)?;
    let x3 = gen_neural_source(&config.source3, n, fs)?;
    let mut stim = gen_stim_waveform(&config.stim, n, fs)?;
    for s in &mut stim {
        *s *= config.stim.coupling;
    }

    let mut v = differential_stage(&x1, &x3, &stim, &config.channel)?;
    if config.orm.amplitude > 0.0 {
        let w = 2.0 * PI * config.orm.freq / fs;
        for (i, x) in v.iter_mut().enumerate() {
            *x += config.orm.amplitude * (w * i as f64).sin();
        }
    }
    let y = amplifier_stage(&v, &config.channel);
    let out = decimate_no_filter(&y, config.oversample)?;

    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), config.hash());
    meta.insert(
        "seed".to_string(),
        format!("{},{}", config.source1.seed, config.source3.seed),
    );
    meta.insert("channel".to_string(), "sim0".to_string());
    meta.insert("label".to_string(), "simulated".to_string());
    meta.insert("stim_volts".to_string(), config.stim.amplitude.to_string());
    meta.insert("z_delta".to_string(), config.channel.z_delta().to_string());
    meta.insert("amp_model".to_string(), format!("{:?}", config.channel.amp_model));
    Recording::with_meta(out, config.fs_out, meta)
}
