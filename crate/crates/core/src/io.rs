//! File formats.
//!
//! Recordings are plain text: `# key: value` header lines followed by one
//! sample per line in scientific notation with 17 significant digits, which
//! round-trips every `f64` exactly. Recognised header keys are
//! `schema_version`, `fs` and `channel`; any other metadata is written as
//! `meta.<key>`.
//!
//! ```text
//! # schema_version: 1
//! # fs: 422
//! # channel: ch0
//! # meta.seed: 1,2
//! 1.2345678901234567e-3
//! ...
//! ```
//!
//! Configs and reports are JSON documents carrying a `schema_version`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::artifacts::ArtifactSet;
use crate::error::{Error, Result};
use crate::mitigation::{BandDef, FitRange, MitigationConfig, MitigationResult, GCR_FORMULA};
use crate::model::SimConfig;
use crate::recording::Recording;
use crate::spectral::{Psd, WelchParams};
use crate::sweep::SweepSummary;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Channel label written when the recording carries none.
pub const DEFAULT_CHANNEL: &str = "unlabeled";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn check_header_value(key: &str, value: &str) -> Result<()> {
    if value.contains('\n') || value.contains('\r') {
        return Err(Error::invalid(format!("meta.{key}"), "header values must be single-line"));
    }
    if key.is_empty() || key.contains(':') || key.contains(char::is_whitespace) {
        return Err(Error::invalid("meta", format!("unusable metadata key {key:?}")));
    }
    Ok(())
}

/// Render a recording in the text format. The `channel` metadata entry becomes
/// the channel header.
pub fn format_recording(rec: &Recording) -> Result<String> {
    let mut out = String::with_capacity(rec.len() * 25 + 128);
    let channel = rec.meta.get("channel").map_or(DEFAULT_CHANNEL, String::as_str);
    check_header_value("channel", channel)?;
    writeln!(out, "# schema_version: {SCHEMA_VERSION}").unwrap();
    writeln!(out, "# fs: {}", rec.fs()).unwrap();
    writeln!(out, "# channel: {channel}").unwrap();
    for (k, v) in rec.meta.iter().filter(|(k, _)| k.as_str() != "channel") {
        check_header_value(k, v)?;
        writeln!(out, "# meta.{k}: {v}").unwrap();
    }
    for x in rec.samples() {
        writeln!(out, "{x:.16e}").unwrap();
    }
    Ok(out)
}

/// Parse the text format. `path` is only used in error messages.
///
/// The channel header is stored under the `channel` metadata key.
pub fn parse_recording(text: &str, path: &Path) -> Result<Recording> {
    let mut fs_hz: Option<f64> = None;
    let mut meta = BTreeMap::new();
    let mut samples = Vec::new();
    let mut seen_version = false;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(h) = t.strip_prefix('#') {
            if !samples.is_empty() {
                return Err(parse_err(path, line, "header line after sample data"));
            }
            let (key, value) = h
                .split_once(':')
                .ok_or_else(|| parse_err(path, line, "header must look like `# key: value`"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "schema_version" => {
                    let v: u32 = value
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("bad schema_version {value:?}")))?;
                    if v != SCHEMA_VERSION {
                        return Err(parse_err(path, line, format!("unsupported schema_version {v}")));
                    }
                    seen_version = true;
                }
                "fs" => {
                    let v: f64 = value
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("bad sampling rate {value:?}")))?;
                    if !(v.is_finite() && v > 0.0) {
                        return Err(parse_err(path, line, format!("sampling rate must be > 0, got {v}")));
                    }
                    fs_hz = Some(v);
                }
                "channel" => {
                    meta.insert("channel".to_string(), value.to_string());
                }
                other => match other.strip_prefix("meta.") {
                    Some(k) if !k.is_empty() => {
                        meta.insert(k.to_string(), value.to_string());
                    }
                    _ => return Err(parse_err(path, line, format!("unknown header key {other:?}"))),
                },
            }
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| parse_err(path, line, format!("non-numeric sample {t:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(path, line, format!("sample {t:?} is not finite")));
        }
        samples.push(v);
    }
    let end = text.lines().count();
    if !seen_version {
        return Err(parse_err(path, 1, "missing `# schema_version` header"));
    }
    let fs_hz = fs_hz.ok_or_else(|| parse_err(path, 1, "missing `# fs` header"))?;
    if samples.is_empty() {
        return Err(parse_err(path, end, "no samples"));
    }
    Recording::with_meta(samples, fs_hz, meta)
}

pub fn write_recording(rec: &Recording, path: &Path) -> Result<()> {
    let text = format_recording(rec)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_recording(&text, path)
}

/// Two-column text: frequency in Hz and density in V^2/Hz.
pub fn format_psd(psd: &Psd) -> String {
    let mut out = String::with_capacity(psd.freqs.len() * 40);
    writeln!(out, "# fs: {}", psd.fs).unwrap();
    writeln!(out, "# n_segments: {}", psd.n_segments).unwrap();
    writeln!(out, "# freq_hz power_v2_per_hz").unwrap();
    for (f, p) in psd.freqs.iter().zip(&psd.power) {
        writeln!(out, "{f:.16e} {p:.16e}").unwrap();
    }
    out
}

pub fn write_psd(psd: &Psd, path: &Path) -> Result<()> {
    fs::write(path, format_psd(psd)).map_err(|e| Error::io(path, e))
}

/// Deserialize JSON, reporting the dotted path of the offending field.
fn from_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => Error::validation(
                if field == "." { "document".to_string() } else { field },
                inner.to_string(),
            ),
            _ => parse_err(path, inner.line(), inner.to_string()),
        }
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialise");
    s.push('\n');
    s
}

fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::validation(
            "schema_version",
            format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
        ));
    }
    Ok(())
}

/// Simulation, spectral and mitigation settings in one file. Missing sections
/// and fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDocument {
    pub schema_version: u32,
    pub sim: SimConfig,
    pub welch: WelchParams,
    pub mitigation: MitigationConfig,
}

impl Default for ConfigDocument {
    fn default() -> Self {
        ConfigDocument {
            schema_version: SCHEMA_VERSION,
            sim: SimConfig::default(),
            welch: WelchParams::default(),
            mitigation: MitigationConfig::default(),
        }
    }
}

impl ConfigDocument {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.sim.validate()?;
        self.welch.validate()?;
        self.mitigation.validate_for(self.sim.fs_out)
    }

    /// Parse and validate. Blank input yields the defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let doc: ConfigDocument = if text.trim().is_empty() {
            ConfigDocument::default()
        } else {
            from_json(text, path)?
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

pub fn read_config(path: &Path) -> Result<ConfigDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConfigDocument::parse(&text, path)
}

pub fn write_config(doc: &ConfigDocument, path: &Path) -> Result<()> {
    fs::write(path, doc.to_json()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub gcr_formula: String,
    pub poly_order: usize,
    pub fit_range: FitRange,
    pub bands: Vec<BandDef>,
    pub welch: WelchParams,
    pub result: MitigationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub gcr_formula: String,
    pub bands: Vec<BandDef>,
    pub summary: SweepSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Mitigation(MitigationReport),
    Artifacts(ArtifactSet),
    Sweep(SweepReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub tool_version: String,
    /// Hash of the simulation config that produced the input, when known.
    pub config_hash: Option<String>,
    pub seed: Option<String>,
    pub report: Report,
}

impl ReportDocument {
    fn new(meta: Option<&BTreeMap<String, String>>, report: Report) -> Self {
        ReportDocument {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            config_hash: meta.and_then(|m| m.get("config_hash").cloned()),
            seed: meta.and_then(|m| m.get("seed").cloned()),
            report,
        }
    }

    /// Provenance is taken from the metadata of the analysed recording.
    pub fn mitigation(result: MitigationResult, welch: &WelchParams, config: &MitigationConfig) -> Self {
        let meta = result.band_report.meta.clone();
        ReportDocument::new(
            Some(&meta),
            Report::Mitigation(MitigationReport {
                gcr_formula: GCR_FORMULA.to_string(),
                poly_order: config.poly_order,
                fit_range: config.fit_range,
                bands: config.bands.clone(),
                welch: welch.clone(),
                result,
            }),
        )
    }

    pub fn artifacts(set: ArtifactSet) -> Self {
        ReportDocument::new(None, Report::Artifacts(set))
    }

    pub fn sweep(summary: SweepSummary, base: &SimConfig, config: &MitigationConfig) -> Self {
        let mut doc = ReportDocument::new(
            None,
            Report::Sweep(SweepReport {
                gcr_formula: GCR_FORMULA.to_string(),
                bands: config.bands.clone(),
                summary,
            }),
        );
        doc.config_hash = Some(base.hash());
        doc.seed = Some(format!("{},{}", base.source1.seed, base.source3.seed));
        doc
    }

    pub fn kind(&self) -> &'static str {
        match self.report {
            Report::Mitigation(_) => "mitigation",
            Report::Artifacts(_) => "artifacts",
            Report::Sweep(_) => "sweep",
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let doc: ReportDocument = from_json(text, path)?;
        check_schema(doc.schema_version)?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

pub fn read_report(path: &Path) -> Result<ReportDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ReportDocument::parse(&text, path)
}

pub fn write_report(doc: &ReportDocument, path: &Path) -> Result<()> {
    fs::write(path, doc.to_json()).map_err(|e| Error::io(path, e))
}
