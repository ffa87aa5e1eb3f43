//! The `probevol` command line.
//!
//! Results go to stdout as JSON; failures go to stderr as a JSON object with
//! a distinct exit code per failure class.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::calibration::{fit_through_origin, CalibrationPair, Method};
use crate::distribution::{self, ConvolutionMethod, DEFAULT_GRID_STEP};
use crate::error::{Error, Result};
use crate::estimator::estimate_probe_volume;
use crate::footprint::{crop_to_cordon, read_footprints_file, write_footprints, CordonSpec};
use crate::optimizer::{self, ObjectiveKind};
use crate::simulator::{self, run_scenario, ScenarioConfig};
use crate::speed_model::{preset_or_inline, SpeedDistribution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_COMPUTE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "probevol", version, about = "Probe traffic volume from fixed-interval point footprints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate probe volume from a footprint CSV.
    Estimate {
        #[arg(long)]
        footprints: PathBuf,
        /// Cordon start; the cordon is (start, start + d].
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        #[arg(long)]
        d: f64,
        #[arg(long)]
        t: f64,
        /// Keep only records with this label.
        #[arg(long)]
        label: Option<String>,
        /// Fail on the first malformed row instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Theoretical variance, VMR and CV of the estimator.
    Precision {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        d: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        dist: String,
    },
    /// Exact density of the estimator for m probes.
    Pdf {
        #[arg(long)]
        m: u32,
        #[arg(long)]
        d: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        dist: String,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
        /// Also report an equal-tailed interval at this level.
        #[arg(long)]
        level: Option<f64>,
        #[arg(long, default_value = "auto")]
        method: String,
        /// Write `m_hat,density` rows here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search the cordon length minimizing VMR or CV.
    Optimize {
        #[arg(long)]
        dmax: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        dist: String,
        #[arg(long, default_value = "cv")]
        objective: String,
        #[arg(long, default_value_t = 1)]
        m: u64,
        #[arg(long, default_value_t = optimizer::DEFAULT_STEP)]
        step: f64,
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Monte Carlo runs of a single-cordon scenario.
    Simulate {
        /// `s1`, `s2`, or a JSON file with `d`, `t` and `dist`.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        m: u64,
        #[arg(long)]
        trials: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        hist_out: Option<PathBuf>,
        /// Write the footprints of trial 0 here.
        #[arg(long)]
        emit_footprints: Option<PathBuf>,
    },
    /// Multi-site OLS vs WLS calibration experiment.
    Experiment {
        /// `table2` or a JSON file of site configs.
        #[arg(long)]
        sites: String,
        #[arg(long)]
        trials: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit volume = beta·m̂ from a CSV of `m_hat,adt[,weight]`.
    Calibrate {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "ols")]
        method: String,
    },
    /// Apply a fitted beta to a probe volume.
    Apply {
        #[arg(long)]
        beta: f64,
        #[arg(long = "m-hat")]
        m_hat: f64,
    },
}

/// Writes every float with 17 significant digits.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Nine significant digits, printed as short as possible.
pub fn plot_number(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for row in rows {
        let line: Vec<String> = row.into_iter().map(plot_number).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ScenarioFile {
    d: f64,
    t: f64,
    #[serde(deserialize_with = "preset_or_inline")]
    dist: SpeedDistribution,
}

#[derive(Deserialize)]
struct PairRow {
    m_hat: f64,
    adt: f64,
    weight: Option<f64>,
}

fn convolution_method(name: &str) -> Result<ConvolutionMethod> {
    match name {
        "auto" => Ok(ConvolutionMethod::Auto),
        "direct" => Ok(ConvolutionMethod::Direct),
        "spectral" => Ok(ConvolutionMethod::Spectral),
        _ => Err(Error::param("method", format!("expected auto, direct or spectral, got `{name}`"))),
    }
}

fn execute(command: Command) -> Result<String> {
    match command {
        Command::Estimate { footprints, start, d, t, label, strict } => {
            let table = read_footprints_file(&footprints, strict)?;
            let mut cordon = CordonSpec::new(start, d)?;
            if let Some(label) = label {
                cordon = cordon.with_label_filter(label);
            }
            let crop = crop_to_cordon(&table.records, &cordon, t)?;
            let est = estimate_probe_volume(&crop.sample);
            to_json(&json!({
                "m_hat": est.m_hat,
                "n": est.n,
                "d": est.d,
                "t": est.t,
                "dropped_bad_speed": crop.dropped_bad_speed,
                "warnings": table.issues.len(),
                "issues": table.issues,
            }))
        }
        Command::Precision { m, d, t, dist } => {
            let dist = SpeedDistribution::from_preset_or_path(&dist)?;
            to_json(&distribution::precision(m, d, t, &dist)?)
        }
        Command::Pdf { m, d, t, dist, grid_step, level, method, out } => {
            let method = convolution_method(&method)?;
            let dist = SpeedDistribution::from_preset_or_path(&dist)?;
            let single = distribution::single_probe_pdf(d, t, &dist, grid_step)?;
            let folded = distribution::m_fold_pdf_with(&single, m, method)?;
            let pdf = &folded.pdf;
            let (mean, variance) = distribution::pdf_moments(pdf);
            let interval = level.map(|l| distribution::interval_estimate(pdf, l)).transpose()?;
            if let Some(path) = &out {
                write_rows(
                    path,
                    "m_hat,density",
                    pdf.densities.iter().enumerate().map(|(i, &v)| vec![pdf.node(i), v]),
                )?;
            }
            to_json(&json!({
                "m": m,
                "d": d,
                "t": t,
                "grid_step": grid_step,
                "points": pdf.densities.len(),
                "atom_at_zero": pdf.atom_at_zero,
                "mass": pdf.mass(),
                "mean": mean,
                "variance": variance,
                "multimodal": pdf.is_multimodal(0.1),
                "interval": interval.map(|(lo, hi)| json!({ "level": level, "lower": lo, "upper": hi })),
                "warnings": folded.warnings,
            }))
        }
        Command::Optimize { dmax, t, dist, objective, m, step, curve_out } => {
            let kind: ObjectiveKind = objective.parse()?;
            let dist = SpeedDistribution::from_preset_or_path(&dist)?;
            let report = optimizer::optimize_cordon(dmax, t, &dist, kind, m, step)?;
            if let Some(path) = &curve_out {
                write_rows(path, "d,objective", report.curve.iter().map(|&(d, v)| vec![d, v]))?;
            }
            to_json(&report)
        }
        Command::Simulate { scenario, m, trials, seed, hist_out, emit_footprints } => {
            let config = match scenario.as_str() {
                "s1" | "s2" => ScenarioConfig::preset(&scenario, m, trials, seed)?,
                path => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    let file: ScenarioFile = serde_json::from_str(&text)?;
                    ScenarioConfig { d: file.d, t: file.t, m, dist: file.dist, trials, seed }
                }
            };
            let (_, summary) = run_scenario(&config)?;
            if let Some(path) = &hist_out {
                let h = &summary.histogram;
                write_rows(
                    path,
                    "bin_lower,bin_upper,count",
                    h.counts.iter().enumerate().map(|(j, &c)| {
                        let lo = h.origin + h.width * j as f64;
                        vec![lo, lo + h.width, c as f64]
                    }),
                )?;
            }
            if let Some(path) = &emit_footprints {
                let file = File::create(path).map_err(|e| Error::io(path, e))?;
                write_footprints(BufWriter::new(file), &config.trial_footprints(0))?;
            }
            let theory = if m > 0 { Some(distribution::precision(m, config.d, config.t, &config.dist)?) } else { None };
            to_json(&json!({
                "d": config.d,
                "t": config.t,
                "m": m,
                "trials": trials,
                "seed": seed,
                "mean": summary.mean,
                "variance": summary.variance,
                "cv": summary.cv,
                "trial0_m_hat": config.trial_estimate(0),
                "theory": theory,
            }))
        }
        Command::Experiment { sites, trials, seed, out } => {
            let sites = simulator::load_sites(&sites)?;
            let report = simulator::run_regression_experiment(&sites, trials, seed)?;
            let text = to_json(&report)?;
            match out {
                Some(path) => {
                    write_text(&path, &text)?;
                    to_json(&json!({
                        "mean_ols_mape": report.mean_ols_mape,
                        "mean_wls_mape": report.mean_wls_mape,
                        "wls_better_fraction": report.wls_better_fraction,
                        "out": path,
                    }))
                }
                None => Ok(text),
            }
        }
        Command::Calibrate { pairs, method } => {
            let method: Method = method.parse()?;
            let file = File::open(&pairs).map_err(|e| Error::io(&pairs, e))?;
            let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
            let rows = rdr.deserialize::<PairRow>().collect::<std::result::Result<Vec<_>, _>>()?;
            let pairs: Vec<CalibrationPair> = rows
                .iter()
                .map(|r| CalibrationPair::weighted(r.m_hat, r.adt, r.weight.unwrap_or(1.0)))
                .collect();
            let model = fit_through_origin(&pairs, method)?;
            to_json(&json!({ "beta": model.beta, "method": model.method, "zero_pairs": model.zero_pairs, "pairs": pairs.len() }))
        }
        Command::Apply { beta, m_hat } => {
            if !beta.is_finite() || !m_hat.is_finite() {
                return Err(Error::param("beta", "beta and m-hat must be finite"));
            }
            to_json(&(beta * m_hat))
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter { .. }
        | Error::InvalidDistribution(_)
        | Error::UnknownPreset(_)
        | Error::GridTooCoarse { .. }
        | Error::GridMismatch(_)
        | Error::Unnormalized { .. } => EXIT_INVALID,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) | Error::Parse { .. } => EXIT_IO,
        Error::NonFiniteIntegrand { .. } | Error::NoFit(_) => EXIT_COMPUTE,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::InvalidDistribution(_) => "invalid_distribution",
        Error::UnknownPreset(_) => "unknown_preset",
        Error::GridTooCoarse { .. } => "grid_too_coarse",
        Error::GridMismatch(_) => "grid_mismatch",
        Error::Unnormalized { .. } => "unnormalized",
        Error::Io { .. } => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
        Error::Parse { .. } => "parse",
        Error::NonFiniteIntegrand { .. } => "non_finite_integrand",
        Error::NoFit(_) => "no_fit",
    }
}

fn report_error(stderr: &mut dyn Write, kind: &str, message: &str) {
    let body = json!({ "error": { "kind": kind, "message": message } });
    let _ = writeln!(stderr, "{body}");
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    report_error(stderr, "usage", e.to_string().trim_end());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            let _ = writeln!(stdout, "{text}");
            EXIT_OK
        }
        Err(err) => {
            report_error(stderr, error_kind(&err), &err.to_string());
            exit_code(&err)
        }
    }
}
