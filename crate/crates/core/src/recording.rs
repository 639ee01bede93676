//! The uniformly sampled trace passed between the simulator and the analyzers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voltage samples at a fixed rate plus free-form provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    samples: Vec<f64>,
    fs: f64,
    pub meta: BTreeMap<String, String>,
}

impl Recording {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        Self::with_meta(samples, fs, BTreeMap::new())
    }

    pub fn with_meta(samples: Vec<f64>, fs: f64, meta: BTreeMap<String, String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("samples", "a recording needs at least one sample"));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid("fs", format!("sampling rate must be positive, got {fs}")));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid("samples", format!("sample {i} is not finite")));
        }
        Ok(Recording { samples, fs, meta })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Multiply every sample by `gain`, keeping metadata.
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        let samples = self.samples.iter().map(|x| x * gain).collect();
        Self::with_meta(samples, self.fs, self.meta.clone())
    }
}
