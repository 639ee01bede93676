//! Voltage by mismatch grids and their summary.
//!
//! [`summarize`] is a pure fold over per-cell outcomes, so a summary can be
//! rebuilt from saved cell reports without rerunning any simulation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mitigation::{mitigate, BandName, BandPowerReport, MitigationConfig, MitigationResult};
use crate::model::{simulate, SimConfig};
use crate::spectral::WelchParams;

/// Voltages used when none are given: 0 to 8 V in 1 V steps.
pub fn default_volts() -> Vec<f64> {
    (0..=8).map(f64::from).collect()
}

/// Uniform-saline and interface mismatch presets, in ohms.
pub fn default_z_deltas() -> Vec<f64> {
    vec![100.0, 300.0]
}

/// `base` with the stimulation amplitude and mismatch replaced.
pub fn cell_config(base: &SimConfig, volts: f64, z_delta: f64) -> SimConfig {
    let mut cfg = base.clone();
    cfg.stim.amplitude = volts;
    cfg.channel.set_mismatch(z_delta);
    cfg
}

pub fn run_cell(
    base: &SimConfig,
    volts: f64,
    z_delta: f64,
    welch: &WelchParams,
    config: &MitigationConfig,
) -> Result<MitigationResult> {
    let rec = simulate(&cell_config(base, volts, z_delta))?;
    mitigate(&rec, welch, config)
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub volts: f64,
    pub z_delta: f64,
    pub result: std::result::Result<MitigationResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub volts: f64,
    pub z_delta: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub volts: Vec<f64>,
    pub z_deltas: Vec<f64>,
    /// `gcr[i][j]` is the ratio at `z_deltas[i]`, `volts[j]`; `None` for failed cells.
    pub gcr: Vec<Vec<Option<f64>>>,
    pub flagged: Vec<Vec<Option<bool>>>,
    /// Number of voltage steps per row where GCr went down.
    pub gcr_violations: Vec<usize>,
    /// Largest max-minus-min across voltage of the unmitigated band medians, over all rows.
    pub pre_spread: BTreeMap<BandName, f64>,
    /// Same for the mitigated band medians.
    pub post_spread: BTreeMap<BandName, f64>,
    /// Largest absolute departure of a mitigated band median from the lowest-voltage cell of its row.
    pub post_max_deviation: BTreeMap<BandName, f64>,
    pub failures: Vec<CellFailure>,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

pub fn summarize(volts: &[f64], z_deltas: &[f64], cells: &[CellOutcome]) -> SweepSummary {
    let mut order: Vec<usize> = (0..volts.len()).collect();
    order.sort_by(|&a, &b| volts[a].total_cmp(&volts[b]));
    let volts_sorted: Vec<f64> = order.iter().map(|&i| volts[i]).collect();

    let lookup = |z: f64, v: f64| {
        cells
            .iter()
            .find(|c| same(c.z_delta, z) && same(c.volts, v))
            .and_then(|c| c.result.as_ref().ok())
    };

    let mut gcr = Vec::with_capacity(z_deltas.len());
    let mut flagged = Vec::with_capacity(z_deltas.len());
    let mut gcr_violations = Vec::with_capacity(z_deltas.len());
    let mut pre_spread = BTreeMap::new();
    let mut post_spread = BTreeMap::new();
    let mut post_max_deviation = BTreeMap::new();

    for &z in z_deltas {
        let row: Vec<Option<&MitigationResult>> = volts_sorted.iter().map(|&v| lookup(z, v)).collect();
        gcr.push(row.iter().map(|r| r.map(|r| r.gcr_report.gcr)).collect::<Vec<_>>());
        flagged.push(row.iter().map(|r| r.map(|r| r.gcr_report.flagged)).collect());
        let present: Vec<f64> = row.iter().flatten().map(|r| r.gcr_report.gcr).collect();
        gcr_violations.push(present.windows(2).filter(|w| w[1] < w[0]).count());

        let ok: Vec<&MitigationResult> = row.iter().flatten().copied().collect();
        let raw: Vec<&BandPowerReport> = ok.iter().map(|r| &r.raw_band_report).collect();
        let post: Vec<&BandPowerReport> = ok.iter().map(|r| &r.band_report).collect();
        fold_spread(&mut pre_spread, &raw);
        fold_spread(&mut post_spread, &post);
        if let Some(base) = post.first() {
            for b in &base.bands {
                let dev = post
                    .iter()
                    .filter_map(|r| r.get(b.name))
                    .map(|m| (m - b.median_db).abs())
                    .fold(0.0, f64::max);
                let e = post_max_deviation.entry(b.name).or_insert(0.0f64);
                *e = e.max(dev);
            }
        }
    }

    let failures = cells
        .iter()
        .filter_map(|c| {
            c.result.as_ref().err().map(|e| CellFailure {
                volts: c.volts,
                z_delta: c.z_delta,
                error: e.clone(),
            })
        })
        .collect();

    SweepSummary {
        volts: volts_sorted,
        z_deltas: z_deltas.to_vec(),
        gcr,
        flagged,
        gcr_violations,
        pre_spread,
        post_spread,
        post_max_deviation,
        failures,
    }
}

fn fold_spread(acc: &mut BTreeMap<BandName, f64>, reports: &[&BandPowerReport]) {
    let Some(first) = reports.first() else { return };
    for b in &first.bands {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(b.name)).collect();
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let e = acc.entry(b.name).or_insert(0.0f64);
        *e = e.max(hi - lo);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitigation::{BandPower, BandVariant, GcrReport};
    use crate::spectral::LogPsd;

    fn fake(gcr_value: f64, offset: f64) -> MitigationResult {
        let report = |variant, shift: f64| BandPowerReport {
            variant,
            bands: BandName::ALL
                .iter()
                .map(|&name| BandPower {
                    name,
                    lo: 1.0,
                    hi: 2.0,
                    median_db: shift,
                })
                .collect(),
            meta: BTreeMap::new(),
        };
        MitigationResult {
            detrended: LogPsd {
                freqs: vec![0.0, 1.0],
                db: vec![0.0, 0.0],
                fs: 2.0,
            },
            poly_coeffs: vec![0.0],
            band_report: report(BandVariant::Adjusted, offset * 0.1),
            raw_band_report: report(BandVariant::Standard, offset),
            gcr_report: GcrReport::from_powers(1.0 - gcr_value, gcr_value, 0.25),
        }
    }

    #[test]
    fn single_cell_summary() {
        let cells = vec![CellOutcome {
            volts: 0.0,
            z_delta: 300.0,
            result: Ok(fake(0.0, 0.0)),
        }];
        let s = summarize(&[0.0], &[300.0], &cells);
        assert_eq!(s.gcr, vec![vec![Some(0.0)]]);
        assert_eq!(s.gcr_violations, vec![0]);
        assert!(s.pre_spread.values().all(|&v| v == 0.0));
        assert!(s.failures.is_empty());
    }

    #[test]
    fn spreads_violations_and_failures() {
        let cells = vec![
            CellOutcome { volts: 2.0, z_delta: 100.0, result: Ok(fake(0.1, 4.0)) },
            CellOutcome { volts: 0.0, z_delta: 100.0, result: Ok(fake(0.2, 0.0)) },
            CellOutcome { volts: 4.0, z_delta: 100.0, result: Err("boom".into()) },
        ];
        let s = summarize(&[2.0, 0.0, 4.0], &[100.0], &cells);
        assert_eq!(s.volts, vec![0.0, 2.0, 4.0]);
        assert_eq!(s.gcr[0][0], Some(0.2));
        assert_eq!(s.gcr[0][2], None);
        assert_eq!(s.gcr_violations, vec![1]);
        assert_eq!(s.pre_spread[&BandName::Beta], 4.0);
        assert!((s.post_spread[&BandName::Beta] - 0.4).abs() < 1e-12);
        assert!((s.post_max_deviation[&BandName::Gamma] - 0.4).abs() < 1e-12);
        assert_eq!(s.failures.len(), 1);
        assert_eq!(s.failures[0].error, "boom");
    }
}
