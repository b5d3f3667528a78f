//! Run configuration in TOML. See `configs/` for worked examples.
//!
//! ```toml
//! mode = "keyrate"          # bound | keyrate | sweep | simulate | appendix-demo
//! sigma_mult = 10.0
//! grid_n = 1001
//! format = "human"          # human | csv | jsonl
//! ns_reading = "raw"        # raw | sifted
//!
//! [source]                  # either intensities ...
//! decoy_mu = 0.2
//! signal_mu = 0.6
//! delta_m = 0.01
//! vacuum_cap = 0.005
//! # [source.bounds]         # ... or explicit coefficient bounds
//! # a0_lo = ... (a0..a2, ap0..ap2 lo/hi), b0_lo = ..., tail_ratio_decoy, tail_ratio_signal
//!
//! [tallies]                 # p0, p, pp, t0_signal, t0_decoy, pulses plus exactly one of
//! pulses = 5222000000       #   counts (n0, nd, ns), rates (s0, s, sp) or csv = "file.csv"
//! s0 = 6.711e-6
//! ```
//!
//! Probabilities and fractions are plain decimals; strings with `%` are
//! rejected.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Deserialize;

use crate::adversary_sim::{ChannelLaw, IntensityLaw, SimScenario};
use crate::decoy_bounds::{ObservedTallies, Selection, DEFAULT_SIGMA_MULT};
use crate::interval::Interval;
use crate::key_rate::{NsReading, SweepSpec, DEFAULT_GRID_N};
use crate::source_model::{coherent_bounds, FockBounds, IntensityInterval, SourceBounds};

use super::{tally, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Bound,
    Keyrate,
    Sweep,
    Simulate,
    AppendixDemo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Human,
    Csv,
    Jsonl,
}

/// Where the coefficient bounds come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Intensities { decoy_mu: f64, signal_mu: f64, delta_m: f64, vacuum_cap: f64 },
    Explicit(SourceBounds),
}

impl SourceSpec {
    pub fn bounds(&self) -> crate::Result<SourceBounds> {
        match *self {
            Self::Intensities { decoy_mu, signal_mu, delta_m, vacuum_cap } => coherent_bounds(
                IntensityInterval::relative(decoy_mu, delta_m)?,
                IntensityInterval::relative(signal_mu, delta_m)?,
                IntensityInterval::new(0.0, vacuum_cap)?,
            ),
            Self::Explicit(b) => Ok(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixParams {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub m: u64,
    pub eps: f64,
    pub eta_ratio: f64,
}

impl Default for AppendixParams {
    fn default() -> Self {
        Self { lambda_d: 0.01, lambda_s: 0.05, m: 10, eps: 0.01, eta_ratio: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub sigma_mult: f64,
    pub grid_n: usize,
    pub format: Format,
    pub seed: Option<u64>,
    pub ns_reading: NsReading,
    pub source: Option<SourceSpec>,
    pub tallies: Option<ObservedTallies>,
    pub sweep_delta_m: Vec<f64>,
    pub sweep_vacuum_caps: Vec<f64>,
    pub simulation: Option<SimScenario>,
    pub appendix: AppendixParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let layout = SweepSpec::table_layout(0.0, 0.0);
        Self {
            mode: None,
            sigma_mult: DEFAULT_SIGMA_MULT,
            grid_n: DEFAULT_GRID_N,
            format: Format::Human,
            seed: None,
            ns_reading: NsReading::Raw,
            source: None,
            tallies: None,
            sweep_delta_m: layout.delta_m,
            sweep_vacuum_caps: layout.vacuum_caps,
            simulation: None,
            appendix: AppendixParams::default(),
        }
    }
}

/// Integer that may be written as a float literal such as `5.222e9`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Whole {
    Int(u64),
    Float(f64),
}

impl Whole {
    fn get(self, key: &str) -> Result<u64, ConfigError> {
        match self {
            Self::Int(n) => Ok(n),
            Self::Float(x) if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 => Ok(x as u64),
            Self::Float(x) => Err(ConfigError::new(key, format!("{x} is not a non-negative integer"))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    sigma_mult: Option<f64>,
    grid_n: Option<usize>,
    format: Option<Format>,
    seed: Option<u64>,
    ns_reading: Option<NsReading>,
    source: Option<RawSource>,
    tallies: Option<RawTallies>,
    sweep: Option<RawSweep>,
    simulation: Option<RawSimulation>,
    appendix: Option<RawAppendix>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    decoy_mu: Option<f64>,
    signal_mu: Option<f64>,
    delta_m: Option<f64>,
    vacuum_cap: Option<f64>,
    bounds: Option<RawBounds>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    a0_lo: f64,
    a0_hi: f64,
    a1_lo: f64,
    a1_hi: f64,
    a2_lo: f64,
    a2_hi: f64,
    ap0_lo: f64,
    ap0_hi: f64,
    ap1_lo: f64,
    ap1_hi: f64,
    ap2_lo: f64,
    ap2_hi: f64,
    b0_lo: f64,
    tail_ratio_decoy: Option<f64>,
    tail_ratio_signal: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTallies {
    pulses: Option<Whole>,
    p0: Option<f64>,
    p: Option<f64>,
    pp: Option<f64>,
    t0_signal: Option<f64>,
    t0_decoy: Option<f64>,
    n0: Option<Whole>,
    nd: Option<Whole>,
    ns: Option<Whole>,
    s0: Option<f64>,
    s: Option<f64>,
    sp: Option<f64>,
    csv: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    delta_m: Option<Vec<f64>>,
    vacuum_caps: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    pulses: Whole,
    p0: f64,
    p: f64,
    pp: f64,
    decoy_mu: f64,
    signal_mu: f64,
    #[serde(default)]
    vacuum_mu: f64,
    intensity_law: Option<IntensityLaw>,
    channel_law: ChannelLaw,
    #[serde(default)]
    dark_rate: f64,
    #[serde(default)]
    misalignment: f64,
    block_len: Whole,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAppendix {
    lambda_d: Option<f64>,
    lambda_s: Option<f64>,
    m: Option<Whole>,
    eps: Option<f64>,
    eta_ratio: Option<f64>,
}

fn reject_percent(value: &toml::Value, path: &str) -> Result<(), ConfigError> {
    match value {
        toml::Value::String(s) if s.contains('%') => Err(ConfigError::new(
            path,
            format!("`{s}`: percent signs are not accepted, write a plain decimal"),
        )),
        toml::Value::Table(t) => t.iter().try_for_each(|(k, v)| {
            let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            reject_percent(v, &key)
        }),
        toml::Value::Array(items) => items.iter().try_for_each(|v| reject_percent(v, path)),
        _ => Ok(()),
    }
}

/// Reads and validates a configuration file. Relative paths inside it are
/// resolved against the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::new("config", e.message().to_string()))?;
    reject_percent(&toml::Value::Table(table.clone()), "")?;
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let key = table_key_hint(&msg).unwrap_or_else(|| "config".to_string());
        ConfigError::new(key, msg)
    })?;

    let defaults = RunConfig::default();
    let sweep = raw.sweep;
    let cfg = RunConfig {
        mode: raw.mode,
        sigma_mult: raw.sigma_mult.unwrap_or(defaults.sigma_mult),
        grid_n: raw.grid_n.unwrap_or(defaults.grid_n),
        format: raw.format.unwrap_or_default(),
        seed: raw.seed,
        ns_reading: raw.ns_reading.unwrap_or_default(),
        source: raw.source.map(convert_source).transpose()?,
        tallies: raw.tallies.map(|t| convert_tallies(t, base_dir)).transpose()?,
        sweep_delta_m: sweep.as_ref().and_then(|s| s.delta_m.clone()).unwrap_or(defaults.sweep_delta_m),
        sweep_vacuum_caps: sweep.and_then(|s| s.vacuum_caps).unwrap_or(defaults.sweep_vacuum_caps),
        simulation: raw.simulation.map(|s| convert_simulation(s, raw.seed)).transpose()?,
        appendix: raw.appendix.map(convert_appendix).transpose()?.unwrap_or_default(),
    };
    if cfg.sigma_mult.is_nan() || cfg.sigma_mult < 0.0 {
        return Err(ConfigError::new("sigma_mult", "must be non-negative"));
    }
    if cfg.grid_n < 2 {
        return Err(ConfigError::new("grid_n", "must be at least 2"));
    }
    Ok(cfg)
}

fn table_key_hint(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let end = start + msg[start..].find('`')?;
    Some(msg[start..end].to_string())
}

fn convert_source(raw: RawSource) -> Result<SourceSpec, ConfigError> {
    let has_intensity = raw.decoy_mu.is_some() || raw.signal_mu.is_some() || raw.delta_m.is_some() || raw.vacuum_cap.is_some();
    match (has_intensity, raw.bounds) {
        (true, Some(_)) => Err(ConfigError::new(
            "source",
            "give either intensities (decoy_mu, signal_mu, delta_m, vacuum_cap) or [source.bounds], not both",
        )),
        (false, None) => Err(ConfigError::new("source", "needs intensities or [source.bounds]")),
        (false, Some(b)) => {
            let iv = |key: &str, lo: f64, hi: f64| {
                Interval::new(lo, hi).map_err(|e| ConfigError::new(format!("source.bounds.{key}"), e.to_string()))
            };
            let decoy = FockBounds {
                zero: iv("a0", b.a0_lo, b.a0_hi)?,
                one: iv("a1", b.a1_lo, b.a1_hi)?,
                two: iv("a2", b.a2_lo, b.a2_hi)?,
            };
            let signal = FockBounds {
                zero: iv("ap0", b.ap0_lo, b.ap0_hi)?,
                one: iv("ap1", b.ap1_lo, b.ap1_hi)?,
                two: iv("ap2", b.ap2_lo, b.ap2_hi)?,
            };
            SourceBounds::new(decoy, signal, b.b0_lo, b.tail_ratio_decoy, b.tail_ratio_signal)
                .map(SourceSpec::Explicit)
                .map_err(|e| ConfigError::new("source.bounds", e.to_string()))
        }
        (true, None) => {
            let decoy_mu = raw.decoy_mu.ok_or_else(|| ConfigError::new("source.decoy_mu", "missing"))?;
            let signal_mu = raw.signal_mu.ok_or_else(|| ConfigError::new("source.signal_mu", "missing"))?;
            let delta_m = raw.delta_m.unwrap_or(0.0);
            if !(0.0..1.0).contains(&delta_m) {
                return Err(ConfigError::new("source.delta_m", format!("{delta_m} outside [0, 1)")));
            }
            let vacuum_cap = raw.vacuum_cap.unwrap_or(0.0);
            if vacuum_cap < 0.0 {
                return Err(ConfigError::new("source.vacuum_cap", "must be non-negative"));
            }
            Ok(SourceSpec::Intensities { decoy_mu, signal_mu, delta_m, vacuum_cap })
        }
    }
}

fn require<T>(v: Option<T>, key: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::new(format!("tallies.{key}"), "missing"))
}

fn convert_tallies(raw: RawTallies, base_dir: &Path) -> Result<ObservedTallies, ConfigError> {
    let has_counts = raw.n0.is_some() || raw.nd.is_some() || raw.ns.is_some();
    let has_rates = raw.s0.is_some() || raw.s.is_some() || raw.sp.is_some();
    let has_csv = raw.csv.is_some();
    match [has_counts, has_rates, has_csv].iter().filter(|x| **x).count() {
        0 => return Err(ConfigError::new("tallies", "needs counts (n0, nd, ns), rates (s0, s, sp) or csv")),
        1 => {}
        _ => {
            return Err(ConfigError::new(
                "tallies",
                "counts (n0, nd, ns), rates (s0, s, sp) and csv are mutually exclusive",
            ))
        }
    }
    if let Some(rel) = raw.csv {
        let path = base_dir.join(rel);
        let file = std::fs::File::open(&path)
            .map_err(|e| ConfigError::new("tallies.csv", format!("cannot open {}: {e}", path.display())))?;
        return tally::read_tally_csv(file, &path.display().to_string());
    }

    let selection = Selection::new(require(raw.p0, "p0")?, require(raw.p, "p")?, require(raw.pp, "pp")?)
        .map_err(|e| ConfigError::new("tallies.p0", e.to_string()))?;
    let pulses = require(raw.pulses, "pulses")?.get("tallies.pulses")?;
    let (n0, nd, ns) = if has_counts {
        (
            require(raw.n0, "n0")?.get("tallies.n0")?,
            require(raw.nd, "nd")?.get("tallies.nd")?,
            require(raw.ns, "ns")?.get("tallies.ns")?,
        )
    } else {
        let m = pulses as f64;
        (
            rate_to_count(require(raw.s0, "s0")?, selection.p0, m, "s0")?,
            rate_to_count(require(raw.s, "s")?, selection.p, m, "s")?,
            rate_to_count(require(raw.sp, "sp")?, selection.pp, m, "sp")?,
        )
    };
    let tallies = ObservedTallies {
        pulses,
        selection,
        n0,
        nd,
        ns,
        t0_signal: require(raw.t0_signal, "t0_signal")?,
        t0_decoy: require(raw.t0_decoy, "t0_decoy")?,
    };
    tallies.validate().map_err(|e| ConfigError::new("tallies", e.to_string()))?;
    Ok(tallies)
}

/// `N = round(S p M)`.
pub fn rate_to_count(rate: f64, prob: f64, pulses: f64, key: &str) -> Result<u64, ConfigError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(ConfigError::new(format!("tallies.{key}"), format!("rate {rate} outside [0, 1]")));
    }
    Ok((rate * prob * pulses).round() as u64)
}

fn convert_simulation(raw: RawSimulation, top_seed: Option<u64>) -> Result<SimScenario, ConfigError> {
    let selection = Selection::new(raw.p0, raw.p, raw.pp).map_err(|e| ConfigError::new("simulation.p0", e.to_string()))?;
    let sc = SimScenario {
        pulses: raw.pulses.get("simulation.pulses")?,
        selection,
        decoy_mu: raw.decoy_mu,
        signal_mu: raw.signal_mu,
        vacuum_mu: raw.vacuum_mu,
        intensity_law: raw.intensity_law.unwrap_or(IntensityLaw::Stable),
        channel_law: raw.channel_law,
        dark_rate: raw.dark_rate,
        misalignment: raw.misalignment,
        block_len: raw.block_len.get("simulation.block_len")?,
        seed: raw.seed.or(top_seed).unwrap_or(0),
    };
    sc.validate().map_err(|e| ConfigError::new("simulation", e.to_string()))?;
    Ok(sc)
}

fn convert_appendix(raw: RawAppendix) -> Result<AppendixParams, ConfigError> {
    let d = AppendixParams::default();
    Ok(AppendixParams {
        lambda_d: raw.lambda_d.unwrap_or(d.lambda_d),
        lambda_s: raw.lambda_s.unwrap_or(d.lambda_s),
        m: raw.m.map(|m| m.get("appendix.m")).transpose()?.unwrap_or(d.m),
        eps: raw.eps.unwrap_or(d.eps),
        eta_ratio: raw.eta_ratio.unwrap_or(d.eta_ratio),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE2: &str = r#"
mode = "sweep"
[source]
decoy_mu = 0.2
signal_mu = 0.6
[tallies]
pulses = 5.222e9
p0 = 0.1
p = 0.4
pp = 0.5
t0_signal = 0.0358
t0_decoy = 0.09098
s0 = 6.711e-6
s = 4.611e-5
sp = 1.262e-4
"#;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config_str(text, Path::new("."))
    }

    #[test]
    fn table2_rates_become_counts() {
        let cfg = parse(TABLE2).unwrap();
        let t = cfg.tallies.unwrap();
        assert_eq!(t.pulses, 5_222_000_000);
        assert_eq!(t.selection, Selection { p0: 0.1, p: 0.4, pp: 0.5 });
        assert_eq!(t.t0_signal, 0.0358);
        // 6.711e-6 * 0.1 * 5.222e9 = 3504.49
        assert_eq!(t.n0, 3504);
        assert_eq!(t.nd, 96_315);
        assert_eq!(t.ns, 329_508);
        assert_eq!(cfg.mode, Some(Mode::Sweep));
    }

    #[test]
    fn counts_and_rates_conflict() {
        let text = TABLE2.replace("s0 = 6.711e-6", "s0 = 6.711e-6\nn0 = 3504");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.key, "tallies");
        assert!(e.message.contains("mutually exclusive"));
    }

    #[test]
    fn percent_rejected_with_key() {
        let text = TABLE2.replace("t0_signal = 0.0358", "t0_signal = \"3.580%\"");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.key, "tallies.t0_signal");
    }

    #[test]
    fn missing_field_named() {
        let text = TABLE2.replace("p0 = 0.1\n", "");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.key, "tallies.p0");
    }

    #[test]
    fn intensities_and_bounds_conflict() {
        let text = TABLE2.replace(
            "signal_mu = 0.6",
            "signal_mu = 0.6\n[source.bounds]\na0_lo=0.8\na0_hi=0.8\na1_lo=0.1\na1_hi=0.1\na2_lo=0.01\na2_hi=0.01\nap0_lo=0.5\nap0_hi=0.5\nap1_lo=0.3\nap1_hi=0.3\nap2_lo=0.1\nap2_hi=0.1\nb0_lo=1.0",
        );
        assert_eq!(parse(&text).unwrap_err().key, "source");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = TABLE2.replace("mode = \"sweep\"", "mode = \"sweep\"\nsigma = 3");
        assert!(parse(&text).is_err());
    }
}
