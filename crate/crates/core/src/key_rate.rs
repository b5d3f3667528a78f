//! Key rate from the single-photon bounds, worst-cased over `D0`.
//!
//! The per-count key fraction is `Delta1' [1 - H(t1)] - H(t)`. Reported rates
//! are per signal pulse, i.e. the fraction times the signal counting rate
//! `S' = Ns / (p' M)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoy_bounds::{self, ExpectationIntervals, FractionBound, ObservedTallies};
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::source_model::{coherent_bounds, IntensityInterval, SourceBounds};

pub const DEFAULT_GRID_N: usize = 1001;

/// Points used to re-scan the neighbourhood of the grid argmin.
const REFINE_POINTS: usize = 101;

/// Reading of the signal-count normalisation in the vacuum-error subtraction
/// of `t1'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NsReading {
    /// All signal counts, `Ns`.
    #[default]
    Raw,
    /// Signal counts after basis sifting, `Ns / 2`.
    Sifted,
}

impl NsReading {
    fn apply(self, ns: f64) -> f64 {
        match self {
            Self::Raw => ns,
            Self::Sifted => 0.5 * ns,
        }
    }
}

/// Shannon binary entropy in bits.
pub fn binary_entropy(t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("binary entropy argument {t} outside [0, 1]")));
    }
    if t == 0.0 || t == 1.0 {
        return Ok(0.0);
    }
    Ok(-t * t.log2() - (1.0 - t) * (1.0 - t).log2())
}

/// Single-photon QBER estimate `t1 = t1' + sigma_mult sqrt(4 t1' / n1s)`
/// with `t1' = (t0 - p' a'_0^L D0 / (2 Ns')) / Delta1'`, clamped to
/// `[0, 0.5]`.
#[allow(clippy::too_many_arguments)]
pub fn t1_estimate(
    t0: f64,
    d0: f64,
    delta1: f64,
    n1s_obs_lo: f64,
    bounds: &SourceBounds,
    pp: f64,
    ns: f64,
    sigma_mult: f64,
    reading: NsReading,
) -> Result<f64> {
    if delta1 <= 0.0 || n1s_obs_lo <= 0.0 {
        return Err(Error::Domain("no single-photon credit: Delta1' or n1s is zero, no key".into()));
    }
    if ns <= 0.0 {
        return Err(Error::Domain("no signal counts".into()));
    }
    if !(0.0..=0.5).contains(&t0) {
        return Err(Error::Domain(format!("observed QBER {t0} outside [0, 0.5]")));
    }
    let vacuum_errors = pp * bounds.signal.zero.lo * d0 / (2.0 * reading.apply(ns));
    let t1_prime = ((t0 - vacuum_errors) / delta1).max(0.0);
    let t1 = t1_prime + sigma_mult * (4.0 * t1_prime / n1s_obs_lo).sqrt();
    Ok(t1.clamp(0.0, 0.5))
}

/// Per-count key fraction `delta1 [1 - H(t1)] - H(t)`.
pub fn key_rate(delta1: f64, t1: f64, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta1) {
        return Err(Error::Domain(format!("Delta1' = {delta1} outside [0, 1]")));
    }
    if !(0.0..=0.5).contains(&t1) {
        return Err(Error::Domain(format!("t1 = {t1} outside [0, 0.5]")));
    }
    Ok(delta1 * (1.0 - binary_entropy(t1)?) - binary_entropy(t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    pub sigma_mult: f64,
    pub grid_n: usize,
    pub ns_reading: NsReading,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            sigma_mult: decoy_bounds::DEFAULT_SIGMA_MULT,
            grid_n: DEFAULT_GRID_N,
            ns_reading: NsReading::Raw,
        }
    }
}

impl RateOptions {
    pub fn asymptotic() -> Self {
        Self { sigma_mult: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateReport {
    /// Final bits per signal pulse, clamped at 0 ("no key").
    pub rate: f64,
    /// Unclamped final bits per signal pulse.
    pub raw_rate: f64,
    /// Per-count key fraction at the worst case; never below `-H(t)`.
    pub key_fraction: f64,
    pub d0_worst: f64,
    pub d0_interval: Interval,
    pub delta1_used: f64,
    pub t1_used: f64,
    pub t_used: f64,
    pub grid_points: usize,
    /// Grid minimum minus the minimum of a finer scan around the argmin.
    pub aliasing_gap: f64,
    /// Signal raw bits left after sifting and error testing (`Ns / 4`).
    pub sifted_bits: f64,
    /// Final bits distilled from `sifted_bits`.
    pub final_bits: f64,
}

#[derive(Debug, Clone, Copy)]
struct Evaluation {
    d0: f64,
    key_fraction: f64,
    delta1: f64,
    t1: f64,
}

fn evaluate(
    tallies: &ObservedTallies,
    bounds: &SourceBounds,
    intervals: &ExpectationIntervals,
    opts: &RateOptions,
    d0: f64,
) -> Result<Evaluation> {
    let t = tallies.t0_signal;
    let fb: FractionBound = decoy_bounds::fraction_bound(tallies, bounds, intervals, d0)?;
    if fb.delta1_signal_lo <= 0.0 || fb.n1s_obs_lo <= 0.0 {
        return Ok(Evaluation { d0, key_fraction: -binary_entropy(t)?, delta1: 0.0, t1: 0.5 });
    }
    let t1 = t1_estimate(
        t,
        d0,
        fb.delta1_signal_lo,
        fb.n1s_obs_lo,
        bounds,
        tallies.selection.pp,
        tallies.ns as f64,
        intervals.sigma_mult,
        opts.ns_reading,
    )?;
    Ok(Evaluation { d0, key_fraction: key_rate(fb.delta1_signal_lo, t1, t)?, delta1: fb.delta1_signal_lo, t1 })
}

fn argmin(evals: &[Evaluation]) -> usize {
    let mut best = 0;
    for (i, e) in evals.iter().enumerate() {
        if e.key_fraction < evals[best].key_fraction {
            best = i;
        }
    }
    best
}

/// Minimum key rate over `grid_n` evenly spaced `D0` values spanning the
/// certified `D0` interval.
pub fn worst_case_rate(tallies: &ObservedTallies, bounds: &SourceBounds, opts: &RateOptions) -> Result<RateReport> {
    if opts.grid_n < 2 {
        return Err(Error::Domain(format!("grid_n = {} must be at least 2", opts.grid_n)));
    }
    bounds.require_admissible()?;
    let intervals = decoy_bounds::expectation_intervals(tallies, bounds, opts.sigma_mult)?;
    let grid = intervals.d0.grid(opts.grid_n);
    let evals = grid
        .iter()
        .map(|&d0| evaluate(tallies, bounds, &intervals, opts, d0))
        .collect::<Result<Vec<_>>>()?;
    let best_idx = argmin(&evals);
    let best = evals[best_idx];

    let aliasing_gap = if grid.len() > 1 {
        let lo = grid[best_idx.saturating_sub(1)];
        let hi = grid[(best_idx + 1).min(grid.len() - 1)];
        let fine = Interval { lo, hi }
            .grid(REFINE_POINTS)
            .into_iter()
            .map(|d0| evaluate(tallies, bounds, &intervals, opts, d0))
            .collect::<Result<Vec<_>>>()?;
        (best.key_fraction - fine[argmin(&fine)].key_fraction).max(0.0)
    } else {
        0.0
    };

    let signal_rate = tallies.signal_rate();
    let raw_rate = best.key_fraction * signal_rate;
    let sifted_bits = tallies.ns as f64 / 4.0;
    Ok(RateReport {
        rate: raw_rate.max(0.0),
        raw_rate,
        key_fraction: best.key_fraction,
        d0_worst: best.d0,
        d0_interval: intervals.d0,
        delta1_used: best.delta1,
        t1_used: best.t1,
        t_used: tallies.t0_signal,
        grid_points: grid.len(),
        aliasing_gap: aliasing_gap * signal_rate,
        sifted_bits,
        final_bits: best.key_fraction.max(0.0) * sifted_bits,
    })
}

/// Intensity-error sweep laid out as rows `R` (asymptotic, pure vacuum
/// source) and `R1..Rn` (finite statistics, one row per vacuum cap).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub decoy_mu: f64,
    pub signal_mu: f64,
    pub delta_m: Vec<f64>,
    pub vacuum_caps: Vec<f64>,
    pub sigma_mult: f64,
    pub grid_n: usize,
    pub ns_reading: NsReading,
}

impl SweepSpec {
    /// The published layout: seven intensity errors from 3% down to 0 and
    /// vacuum caps 0, 0.5%, 1%.
    pub fn table_layout(decoy_mu: f64, signal_mu: f64) -> Self {
        Self {
            decoy_mu,
            signal_mu,
            delta_m: vec![0.03, 0.025, 0.02, 0.015, 0.01, 0.005, 0.0],
            vacuum_caps: vec![0.0, 0.005, 0.01],
            sigma_mult: decoy_bounds::DEFAULT_SIGMA_MULT,
            grid_n: DEFAULT_GRID_N,
            ns_reading: NsReading::Raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    /// `R` for the asymptotic row, `R1`, `R2`, ... for the vacuum caps.
    pub row: String,
    pub delta_m: f64,
    pub vacuum_cap: f64,
    pub sigma_mult: f64,
    pub report: RateReport,
}

/// Evaluates every (row, intensity error) cell. Cells run in parallel; the
/// output order is row-major and independent of scheduling.
pub fn sweep_delta_m(tallies: &ObservedTallies, spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    for &dm in &spec.delta_m {
        if !(0.0..=0.05).contains(&dm) {
            return Err(Error::Domain(format!("intensity error {dm} outside [0, 0.05]")));
        }
    }
    let mut rows: Vec<(String, f64, f64)> = vec![("R".to_string(), 0.0, 0.0)];
    rows.extend(
        spec.vacuum_caps
            .iter()
            .enumerate()
            .map(|(i, &cap)| (format!("R{}", i + 1), cap, spec.sigma_mult)),
    );
    let cells: Vec<(String, f64, f64, f64)> = rows
        .iter()
        .flat_map(|(row, cap, sigma)| spec.delta_m.iter().map(move |&dm| (row.clone(), dm, *cap, *sigma)))
        .collect();

    cells
        .into_par_iter()
        .map(|(row, dm, cap, sigma)| {
            let bounds = coherent_bounds(
                IntensityInterval::relative(spec.decoy_mu, dm)?,
                IntensityInterval::relative(spec.signal_mu, dm)?,
                IntensityInterval::new(0.0, cap)?,
            )?;
            let opts = RateOptions { sigma_mult: sigma, grid_n: spec.grid_n, ns_reading: spec.ns_reading };
            let report = worst_case_rate(tallies, &bounds, &opts)?;
            Ok(SweepCell { row, delta_m: dm, vacuum_cap: cap, sigma_mult: sigma, report })
        })
        .collect()
}
