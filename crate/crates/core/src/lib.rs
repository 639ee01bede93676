//! Simulation and analysis of stimulation artifacts in differential local
//! field potential recordings.
//!
//! The crate models how an impedance mismatch between the two sensing
//! contacts leaks the stimulation waveform past common-mode rejection, how the
//! signal amplifier then compresses, and how the device's unfiltered 422 Hz
//! sampling folds the result into the recorded band. On the analysis side it
//! provides the Welch estimator, artifact frequency prediction, and the
//! detrend / adjusted band / gain compression ratio mitigation pipeline.
//!
//! ```no_run
//! use dlfp_core::{mitigate, simulate, MitigationConfig, SimConfig, WelchParams};
//!
//! let mut cfg = SimConfig::default();
//! cfg.stim.amplitude = 6.0;
//! cfg.channel.set_mismatch(300.0);
//! let rec = simulate(&cfg)?;
//! let out = mitigate(&rec, &WelchParams::default(), &MitigationConfig::default())?;
//! println!("GCr = {:.3}", out.gcr_report.gcr);
//! # Ok::<(), dlfp_core::Error>(())
//! ```

pub mod artifacts;
pub mod error;
pub mod io;
pub mod mitigation;
pub mod model;
pub mod recording;
pub mod spectral;
mod stats;
pub mod sweep;

pub use artifacts::{
    classify_peaks, fold_alias, predict_ash, predict_imh, predict_ssh, ArtifactClass, ArtifactParams,
    ArtifactSet, ArtifactTone, LabeledPeak,
};
pub use error::{Error, Result};
pub use mitigation::{
    adjusted_bands, band_power_median, compute_gcr, detrend_polynomial, mitigate, standard_bands,
    tone_power, BandDef, BandName, BandPowerReport, BandVariant, FitRange, GcrReport,
    MitigationConfig, MitigationResult,
};
pub use model::{
    amplifier_stage, decimate_no_filter, differential_stage, gen_neural_source, gen_stim_waveform,
    simulate, AmpModel, ChannelSpec, CoeffScheme, MismatchPreset, OrmSpec, SimConfig, SourceSpec,
    StimSpec,
};
pub use recording::Recording;
pub use spectral::{log_transform, welch_psd, LogPsd, Psd, WelchParams, Window};
