//! `dlfp`: simulate differential LFP recordings, predict and label artifact
//! tones, run the mitigation pipeline, and sweep voltage by mismatch grids.
//!
//! Exit status is 0 on success, 1 for invalid input or configuration, 2 for
//! filesystem failures.

mod plot;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use dlfp_core::io::{self, ConfigDocument, ReportDocument};
use dlfp_core::mitigation::BandName;
use dlfp_core::sweep::{self, CellOutcome};
use dlfp_core::{
    classify_peaks, log_transform, mitigate, simulate, welch_psd, ArtifactParams, ArtifactSet, Error,
    WelchParams,
};
use dlfp_core::spectral::FLOOR_DB;

#[derive(Parser)]
#[command(name = "dlfp", version, about = "Differential LFP stimulation-artifact toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a recording and write it in the text recording format.
    Simulate {
        /// JSON config document; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the two noise sources (uses N and N+1).
        #[arg(long)]
        seed: Option<u64>,
        /// Programmed stimulation amplitude, volts.
        #[arg(long)]
        stim_volts: Option<f64>,
        /// Impedance mismatch Z1 - Z3, ohms.
        #[arg(long)]
        z_delta: Option<f64>,
    },
    /// Print the predicted artifact frequencies.
    Predict {
        #[arg(long, default_value_t = 130.0)]
        ft: f64,
        #[arg(long, default_value_t = 422.0)]
        fs: f64,
        #[arg(long, default_value_t = 6)]
        harmonics: usize,
        #[arg(long, default_value_t = 3)]
        imh_order: usize,
        /// Also list the over-range marker tone.
        #[arg(long)]
        with_orm: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Estimate the PSD of a recording and label its peaks.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        /// Use the built-in Welch settings even if a config is given.
        #[arg(long)]
        welch_defaults: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Two-column PSD output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// SVG plot of the log spectrum.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long, default_value_t = 130.0)]
        ft: f64,
        #[arg(long, default_value_t = 6)]
        harmonics: usize,
        #[arg(long, default_value_t = 3)]
        imh_order: usize,
        #[arg(long, default_value_t = 2)]
        tol_bins: usize,
        #[arg(long, default_value_t = 6.0)]
        prominence_db: f64,
    },
    /// Run the mitigation pipeline on a recording and write a report.
    Mitigate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Simulate and mitigate every (voltage, mismatch) cell of a grid.
    Sweep {
        /// Comma list (`0,2,4`) or inclusive range `start:stop:step`.
        #[arg(long)]
        volts: Option<String>,
        /// Comma list or range, ohms.
        #[arg(long)]
        z_deltas: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

/// Output is collected and written once so a closed pipe never aborts a run.
macro_rules! say {
    ($o:expr) => { $o.push('\n') };
    ($o:expr, $($t:tt)*) => { writeln!($o, $($t)*).unwrap() };
}

macro_rules! put {
    ($o:expr, $($t:tt)*) => { write!($o, $($t)*).unwrap() };
}

fn usage(field: &str, msg: impl Into<String>) -> Error {
    Error::Validation {
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigDocument, Error> {
    match path {
        Some(p) => io::read_config(p),
        None => Ok(ConfigDocument::default()),
    }
}

fn parse_list(field: &str, text: &str) -> Result<Vec<f64>, Error> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| usage(field, format!("not a number: {s:?}")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    let out = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h) = (num(start)?, num(stop)?, num(step)?);
            if h <= 0.0 || b < a {
                return Err(usage(field, "range needs start <= stop and step > 0"));
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            (0..=n).map(|i| a + i as f64 * h).collect()
        }
        [_] => text.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(usage(field, "expected a comma list or start:stop:step")),
    };
    if out.is_empty() {
        return Err(usage(field, "list is empty"));
    }
    Ok(out)
}

fn create_parent(path: &Path) -> Result<(), Error> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn run(cli: Cli, o: &mut String) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            stim_volts,
            z_delta,
        } => {
            let mut sim = load_config(config.as_deref())?.sim;
            if let Some(s) = seed {
                sim.reseed(s);
            }
            if let Some(v) = stim_volts {
                sim.stim.amplitude = v;
            }
            if let Some(z) = z_delta {
                sim.channel.set_mismatch(z);
            }
            let rec = simulate(&sim)?;
            create_parent(&out)?;
            io::write_recording(&rec, &out)?;
            say!(o, "config_hash {}", sim.hash());
            say!(o, "wrote {} samples at {} Hz to {}", rec.len(), rec.fs(), out.display());
        }
        Command::Predict {
            ft,
            fs,
            harmonics,
            imh_order,
            with_orm,
            format,
        } => {
            let params = ArtifactParams {
                n_harmonics: harmonics,
                imh_order,
                include_orm: with_orm,
            };
            let set = ArtifactSet::predict(ft, fs, params)?;
            match format {
                Format::Json => put!(o, "{}", ReportDocument::artifacts(set).to_json()),
                Format::Text => {
                    say!(o, "{:>10}  {:<5}  origin", "freq_hz", "class");
                    for t in &set.tones {
                        say!(o, "{:>10.3}  {:<5}  {}", t.freq, t.klass.as_str(), t.origin);
                    }
                }
            }
        }
        Command::Analyze {
            input,
            welch_defaults,
            config,
            out,
            plot,
            ft,
            harmonics,
            imh_order,
            tol_bins,
            prominence_db,
        } => {
            let rec = io::read_recording(&input)?;
            let welch = if welch_defaults {
                WelchParams::default()
            } else {
                load_config(config.as_deref())?.welch
            };
            let psd = welch_psd(&rec, &welch)?;
            let params = ArtifactParams {
                n_harmonics: harmonics,
                imh_order,
                include_orm: true,
            };
            let set = ArtifactSet::predict(ft, rec.fs(), params)?;
            let peaks = classify_peaks(&psd, &set, tol_bins, prominence_db)?;
            if let Some(p) = &out {
                create_parent(p)?;
                io::write_psd(&psd, p)?;
            }
            if let Some(p) = &plot {
                create_parent(p)?;
                let lp = log_transform(&psd, FLOOR_DB);
                let title = format!("{} ({} segments)", input.display(), psd.n_segments);
                fs::write(p, plot::render(&lp, &peaks, &title)).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
            }
            say!(o, "{:>10}  {:>9}  {:>8}  {:<7}  origin", "freq_hz", "db", "prom_db", "label");
            for p in &peaks {
                let mut origin = p.origin.clone().unwrap_or_default();
                for alt in &p.alternatives {
                    origin.push_str(&format!(" | or {} {}", alt.klass.as_str(), alt.origin));
                }
                say!(o, 
                    "{:>10.3}  {:>9.2}  {:>8.2}  {:<7}  {}",
                    p.freq,
                    p.db,
                    p.prominence_db,
                    p.label_name(),
                    origin
                );
            }
        }
        Command::Mitigate { input, config, report } => {
            let doc = load_config(config.as_deref())?;
            let rec = io::read_recording(&input)?;
            let result = mitigate(&rec, &doc.welch, &doc.mitigation)?;
            let g = result.gcr_report.clone();
            let bands = result.band_report.clone();
            let out = ReportDocument::mitigation(result, &doc.welch, &doc.mitigation);
            create_parent(&report)?;
            io::write_report(&out, &report)?;
            say!(o, 
                "gcr {:.4} (p_ash {:.3e}, p_imh {:.3e}) threshold {} flagged {}",
                g.gcr, g.p_ash, g.p_imh, g.threshold, g.flagged
            );
            for b in &bands.bands {
                say!(o, "{:<6} {:>5}-{:<5} Hz {:>8.3} dB", b.name.as_str(), b.lo, b.hi, b.median_db);
            }
        }
        Command::Sweep {
            volts,
            z_deltas,
            config,
            out_dir,
        } => {
            let doc = load_config(config.as_deref())?;
            let volts = match volts {
                Some(v) => parse_list("volts", &v)?,
                None => sweep::default_volts(),
            };
            let z_deltas = match z_deltas {
                Some(z) => parse_list("z_deltas", &z)?,
                None => sweep::default_z_deltas(),
            };
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            let grid: Vec<(f64, f64)> = z_deltas
                .iter()
                .flat_map(|&z| volts.iter().map(move |&v| (v, z)))
                .collect();
            let outcomes: Vec<(CellOutcome, bool)> = grid
                .par_iter()
                .map(|&(v, z)| {
                    let res = sweep::run_cell(&doc.sim, v, z, &doc.welch, &doc.mitigation).and_then(|r| {
                        let path = out_dir.join(format!("cell_{v}V_{z}ohm.json"));
                        let report = ReportDocument::mitigation(r.clone(), &doc.welch, &doc.mitigation);
                        io::write_report(&report, &path)?;
                        Ok(r)
                    });
                    let io_failure = res.as_ref().err().is_some_and(Error::is_io);
                    (
                        CellOutcome {
                            volts: v,
                            z_delta: z,
                            result: res.map_err(|e| e.to_string()),
                        },
                        io_failure,
                    )
                })
                .collect();
            let any_io = outcomes.iter().any(|(_, io)| *io);
            let cells: Vec<CellOutcome> = outcomes.into_iter().map(|(c, _)| c).collect();
            let summary = sweep::summarize(&volts, &z_deltas, &cells);
            let report = ReportDocument::sweep(summary.clone(), &doc.sim, &doc.mitigation);
            io::write_report(&report, &out_dir.join("summary.json"))?;

            put!(o, "{:>10}", "z\\V");
            for v in &summary.volts {
                put!(o, " {v:>7}");
            }
            say!(o);
            for (z, row) in summary.z_deltas.iter().zip(&summary.gcr) {
                put!(o, "{z:>10}");
                for g in row {
                    match g {
                        Some(g) => put!(o, " {g:>7.4}"),
                        None => put!(o, " {:>7}", "fail"),
                    }
                }
                say!(o);
            }
            for b in BandName::ALL {
                if let (Some(pre), Some(post)) = (summary.pre_spread.get(&b), summary.post_spread.get(&b)) {
                    say!(o, "{:<6} spread {pre:>7.3} dB -> {post:>7.3} dB", b.as_str());
                }
            }
            for f in &summary.failures {
                eprintln!("cell {} V / {} ohm failed: {}", f.volts, f.z_delta, f.error);
            }
            if !summary.failures.is_empty() {
                let n = summary.failures.len();
                return Err(if any_io {
                    Error::Io {
                        path: out_dir,
                        source: std::io::Error::other(format!("{n} sweep cell(s) failed")),
                    }
                } else {
                    usage("sweep", format!("{n} cell(s) failed"))
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut out = String::new();
    let result = run(cli, &mut out);
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(out.as_bytes()).and_then(|()| stdout.flush());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_list;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list("v", "0,2.5,4").unwrap(), vec![0.0, 2.5, 4.0]);
        assert_eq!(parse_list("v", "0:8:1").unwrap().len(), 9);
        assert_eq!(parse_list("v", "0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_list("v", "1:0:1").is_err());
        assert!(parse_list("v", "a,b").is_err());
        assert!(parse_list("v", "1:2").is_err());
    }
}
