//! Command-line driver: `bound`, `keyrate`, `sweep`, `simulate` and
//! `appendix-demo` modes over a TOML run configuration.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 bad configuration or scenario,
//! 3 source conditions not met, 4 numerical domain or coverage failure
//! (including a simulated bound that exceeds the truth).

pub mod config;
pub mod tally;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use serde_json::{json, Value};

use crate::adversary_sim::{self, Source, PHOTON_BUCKETS};
use crate::decoy_bounds::{self, ObservedTallies};
use crate::key_rate::{self, RateOptions, SweepSpec};
use crate::source_model::{ConditionReport, SourceBounds};
use crate::Error;

pub use config::{Format, Mode, RunConfig, SourceSpec};

/// A configuration problem tied to the key (dotted path or CSV row) that
/// caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self { code: 2, message: format!("config: {e}") }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: 1, message: format!("io: {e}") }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self { code: 1, message: format!("io: {e}") }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInterval(_) | Error::Scenario(_) => 2,
        Error::ConditionFailure(_) | Error::Monotonicity(_) => 3,
        Error::Domain(_) | Error::Coverage(_) => 4,
    }
}

trait InModule<T> {
    fn in_module(self, module: &str) -> Result<T, CliError>;
}

impl<T> InModule<T> for crate::Result<T> {
    fn in_module(self, module: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError { code: exit_code(&e), message: format!("{module}: {e}") })
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "decoy-qkd", version, about = "Decoy-state key-rate bounds with imperfect sources")]
pub struct Args {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Fluctuation multiplier; 0 gives the asymptotic bound.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Number of D0 grid points.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Tally CSV, replacing `[tallies]` from the config.
    #[arg(long)]
    pub tallies: Option<PathBuf>,
    /// Where `simulate` writes its tally CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Merges command-line overrides into the configuration.
pub fn resolve(args: &Args) -> Result<(Mode, RunConfig), CliError> {
    let mut cfg = match &args.config {
        Some(path) => config::parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.sigma {
        if s.is_nan() || s < 0.0 {
            return Err(ConfigError::new("--sigma", "must be non-negative").into());
        }
        cfg.sigma_mult = s;
    }
    if let Some(g) = args.grid {
        if g < 2 {
            return Err(ConfigError::new("--grid", "must be at least 2").into());
        }
        cfg.grid_n = g;
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
        if let Some(sim) = cfg.simulation.as_mut() {
            sim.seed = seed;
        }
    }
    if let Some(path) = &args.tallies {
        let file = std::fs::File::open(path)
            .map_err(|e| ConfigError::new("--tallies", format!("cannot open {}: {e}", path.display())))?;
        cfg.tallies = Some(tally::read_tally_csv(file, &path.display().to_string())?);
    }
    let mode = args
        .mode
        .or(cfg.mode)
        .ok_or_else(|| ConfigError::new("mode", "not given in the config or with --mode"))?;
    Ok((mode, cfg))
}

/// Parses `argv`, runs, and returns the process exit code.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match run_with_output(&args, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code
        }
    }
}

pub fn run_with_output(args: &Args, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let (mode, cfg) = resolve(args)?;
    match mode {
        Mode::Bound => run_bound(&cfg, out),
        Mode::Keyrate => run_keyrate(&cfg, out),
        Mode::Sweep => run_sweep(&cfg, out),
        Mode::Simulate => run_simulate(&cfg, args.out.as_ref(), out, err),
        Mode::AppendixDemo => run_appendix(&cfg, out),
    }
}

fn need_tallies(cfg: &RunConfig) -> Result<&ObservedTallies, CliError> {
    cfg.tallies
        .as_ref()
        .ok_or_else(|| ConfigError::new("tallies", "this mode needs [tallies] or --tallies").into())
}

fn need_bounds(cfg: &RunConfig) -> Result<SourceBounds, CliError> {
    cfg.source
        .as_ref()
        .ok_or_else(|| CliError::from(ConfigError::new("source", "this mode needs a [source] section")))?
        .bounds()
        .in_module("source_model")
}

type Record = Vec<(&'static str, Value)>;

fn write_record(format: Format, rec: &Record, out: &mut dyn Write) -> Result<(), CliError> {
    match format {
        Format::Human => {
            let width = rec.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (k, v) in rec {
                let shown = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                writeln!(out, "{k:<width$}  {shown}")?;
            }
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record(rec.iter().map(|(k, _)| *k)).map_err(csv_err)?;
            w.write_record(rec.iter().map(|(_, v)| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }))
            .map_err(csv_err)?;
            w.flush()?;
        }
        Format::Jsonl => {
            let obj: serde_json::Map<String, Value> = rec.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
            writeln!(out, "{}", Value::Object(obj))?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError { code: 1, message: format!("io: {e}") }
}

fn condition_summary(report: &ConditionReport) -> String {
    report
        .checks
        .iter()
        .map(|c| format!("{}={}", c.name, c.status))
        .collect::<Vec<_>>()
        .join(" ")
}

fn run_bound(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let tallies = need_tallies(cfg)?;
    let bounds = need_bounds(cfg)?;
    let report = bounds.require_admissible().in_module("source_model")?;
    let intervals = decoy_bounds::expectation_intervals(tallies, &bounds, cfg.sigma_mult).in_module("decoy_bounds")?;
    let fb = decoy_bounds::worst_fraction_bound(tallies, &bounds, cfg.sigma_mult).in_module("decoy_bounds")?;
    let rec: Record = vec![
        ("conditions", json!(condition_summary(&report))),
        ("sigma_mult", json!(cfg.sigma_mult)),
        ("d0_lo", json!(intervals.d0.lo)),
        ("d0_hi", json!(intervals.d0.hi)),
        ("d0_worst", json!(fb.d0_used)),
        ("d1_lo", json!(fb.d1_lo)),
        ("n1_signal_lo", json!(fb.n1s_obs_lo)),
        ("n1_decoy_lo", json!(fb.n1d_obs_lo)),
        ("delta1_signal_lo", json!(fb.delta1_signal_lo)),
        ("delta1_decoy_lo", json!(fb.delta1_decoy_lo)),
    ];
    write_record(cfg.format, &rec, out)
}

fn rate_options(cfg: &RunConfig) -> RateOptions {
    RateOptions { sigma_mult: cfg.sigma_mult, grid_n: cfg.grid_n, ns_reading: cfg.ns_reading }
}

fn run_keyrate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let tallies = need_tallies(cfg)?;
    let bounds = need_bounds(cfg)?;
    let report = bounds.require_admissible().in_module("source_model")?;
    let r = key_rate::worst_case_rate(tallies, &bounds, &rate_options(cfg)).in_module("key_rate")?;
    let rec: Record = vec![
        ("conditions", json!(condition_summary(&report))),
        ("sigma_mult", json!(cfg.sigma_mult)),
        ("rate", json!(r.rate)),
        ("raw_rate", json!(r.raw_rate)),
        ("key_fraction", json!(r.key_fraction)),
        ("d0_lo", json!(r.d0_interval.lo)),
        ("d0_hi", json!(r.d0_interval.hi)),
        ("d0_worst", json!(r.d0_worst)),
        ("delta1", json!(r.delta1_used)),
        ("t1", json!(r.t1_used)),
        ("t", json!(r.t_used)),
        ("grid_points", json!(r.grid_points)),
        ("aliasing_gap", json!(r.aliasing_gap)),
        ("sifted_bits", json!(r.sifted_bits)),
        ("final_bits", json!(r.final_bits)),
    ];
    write_record(cfg.format, &rec, out)
}

fn run_sweep(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let tallies = need_tallies(cfg)?;
    let (decoy_mu, signal_mu) = match cfg.source {
        Some(SourceSpec::Intensities { decoy_mu, signal_mu, .. }) => (decoy_mu, signal_mu),
        Some(SourceSpec::Explicit(_)) => {
            return Err(ConfigError::new("source", "sweep needs decoy_mu and signal_mu, not explicit bounds").into())
        }
        None => return Err(ConfigError::new("source", "this mode needs a [source] section").into()),
    };
    let spec = SweepSpec {
        decoy_mu,
        signal_mu,
        delta_m: cfg.sweep_delta_m.clone(),
        vacuum_caps: cfg.sweep_vacuum_caps.clone(),
        sigma_mult: cfg.sigma_mult,
        grid_n: cfg.grid_n,
        ns_reading: cfg.ns_reading,
    };
    let start = Instant::now();
    let cells = key_rate::sweep_delta_m(tallies, &spec).in_module("key_rate")?;
    let elapsed = start.elapsed();
    match cfg.format {
        Format::Human => {
            write!(out, "{:<16}", "delta_m")?;
            for dm in &spec.delta_m {
                write!(out, "{dm:>12}")?;
            }
            writeln!(out)?;
            for row in cells.chunks(spec.delta_m.len()) {
                let label = if row[0].row == "R" {
                    "R".to_string()
                } else {
                    format!("{} (cap {})", row[0].row, row[0].vacuum_cap)
                };
                write!(out, "{label:<16}")?;
                for c in row {
                    write!(out, "{:>12.4e}", c.report.rate)?;
                }
                writeln!(out)?;
            }
            writeln!(out, "{} cells in {:.3} s", cells.len(), elapsed.as_secs_f64())?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record(["row", "delta_m", "vacuum_cap", "sigma_mult", "rate", "key_fraction", "d0_worst"])
                .map_err(csv_err)?;
            for c in &cells {
                w.write_record([
                    c.row.clone(),
                    c.delta_m.to_string(),
                    c.vacuum_cap.to_string(),
                    c.sigma_mult.to_string(),
                    c.report.rate.to_string(),
                    c.report.key_fraction.to_string(),
                    c.report.d0_worst.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush()?;
        }
        Format::Jsonl => {
            for c in &cells {
                writeln!(out, "{}", serde_json::to_string(c)?)?;
            }
        }
    }
    Ok(())
}

fn run_simulate(
    cfg: &RunConfig,
    out_path: Option<&PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let sc = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::from(ConfigError::new("simulation", "this mode needs a [simulation] section")))?;
    let outcome = adversary_sim::run_simulation(sc).in_module("adversary_sim")?;
    let verification = match &cfg.source {
        Some(spec) => {
            let bounds = spec.bounds().in_module("source_model")?;
            bounds.require_admissible().in_module("source_model")?;
            Some(adversary_sim::verify_bound(&outcome, &bounds, cfg.sigma_mult).in_module("adversary_sim")?)
        }
        None => None,
    };

    if let Some(path) = out_path {
        let file = std::fs::File::create(path)?;
        tally::write_tally_csv(&outcome.tallies, file)?;
    }

    let t = &outcome.tallies;
    let mut rec: Record = vec![
        ("seed", json!(sc.seed)),
        ("pulses", json!(t.pulses)),
        ("n0", json!(t.n0)),
        ("nd", json!(t.nd)),
        ("ns", json!(t.ns)),
        ("t0_signal", json!(t.t0_signal)),
        ("t0_decoy", json!(t.t0_decoy)),
        ("truth_delta1_signal", json!(outcome.truth_delta1_signal)),
    ];
    const YIELD_KEYS: [&str; 4] = ["yield_signal_k0", "yield_signal_k1", "yield_signal_k2", "yield_signal_k3"];
    for (k, key) in YIELD_KEYS.iter().enumerate().take(PHOTON_BUCKETS) {
        rec.push((key, json!(outcome.yield_of(k, Source::Signal).0)));
    }
    if let Some(v) = &verification {
        rec.push(("bound_delta1_signal", json!(v.bound)));
        rec.push(("margin", json!(v.margin)));
        rec.push(("verification", json!(if v.pass { "PASS" } else { "FAIL" })));
    }

    match cfg.format {
        Format::Csv => {
            if out_path.is_none() {
                tally::write_tally_csv(&outcome.tallies, &mut *out)?;
            }
            write_record(Format::Human, &rec, err)?;
        }
        f => write_record(f, &rec, out)?,
    }

    match verification {
        Some(v) if !v.pass => Err(CliError {
            code: 4,
            message: format!("adversary_sim: bound {:.6e} exceeds simulated truth {:.6e}", v.bound, v.truth),
        }),
        _ => Ok(()),
    }
}

fn run_appendix(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let a = cfg.appendix;
    let ratio =
        adversary_sim::appendix_yield_ratio(a.lambda_d, a.lambda_s, a.m, a.eps, a.eta_ratio).in_module("adversary_sim")?;
    let rec: Record = vec![
        ("lambda_d", json!(a.lambda_d)),
        ("lambda_s", json!(a.lambda_s)),
        ("m", json!(a.m)),
        ("eps", json!(a.eps)),
        ("eta_ratio", json!(a.eta_ratio)),
        ("yield_ratio", json!(ratio)),
    ];
    write_record(cfg.format, &rec, out)
}
