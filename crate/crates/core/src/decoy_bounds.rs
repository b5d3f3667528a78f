//! Lower bounds on the fraction of counts caused by single-photon pulses.
//!
//! The bounds are written in terms of the pivots
//! `D_k = sum_{i in c_k} 1 / (p0 b_ki + p a_ki + p' a'_ki)` over the counted
//! `k`-photon pulses. `D0` is bracketed from the vacuum and decoy counts;
//! `D1` is then bounded below for any admissible `D0`. Callers scan `D0`
//! themselves (see [`crate::key_rate::worst_case_rate`]) because the key rate,
//! not the fraction, decides which `D0` is worst.
//!
//! Observed counts are related to their expectations with `sigma_mult`
//! standard deviations, using `sqrt(N)` for the standard deviation of `<N>`.
//! The signal-count interval is derived from the fixed total population
//! `<N0> + <Nd> + <Ns> = N0 + Nd + Ns` rather than from an independent
//! `sqrt(Ns)` term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::source_model::SourceBounds;

/// Default confidence radius in standard deviations.
pub const DEFAULT_SIGMA_MULT: f64 = 10.0;

/// Relative slack allowed when checking that a `D0` value lies in its
/// certified interval (grid endpoints are computed in floating point).
const D0_MEMBERSHIP_TOL: f64 = 1e-9;

/// Probabilities of picking the vacuum, decoy and signal source per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub p0: f64,
    pub p: f64,
    pub pp: f64,
}

impl Selection {
    pub fn new(p0: f64, p: f64, pp: f64) -> Result<Self> {
        for (name, v) in [("p0", p0), ("p", p), ("pp", pp)] {
            if !(0.0..=1.0).contains(&v) || v.is_nan() {
                return Err(Error::Domain(format!("selection probability {name} = {v} outside [0, 1]")));
            }
        }
        if ((p0 + p + pp) - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("selection probabilities sum to {}, not 1", p0 + p + pp)));
        }
        Ok(Self { p0, p, pp })
    }

    fn require_positive(&self) -> Result<()> {
        if self.p0 <= 0.0 || self.p <= 0.0 || self.pp <= 0.0 {
            return Err(Error::Domain("all three selection probabilities must be positive".into()));
        }
        Ok(())
    }
}

/// Directly observed counts of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedTallies {
    /// Total number of pulses `M`.
    pub pulses: u64,
    pub selection: Selection,
    /// Counts caused by vacuum-source pulses.
    pub n0: u64,
    /// Counts caused by decoy pulses.
    pub nd: u64,
    /// Counts caused by signal pulses.
    pub ns: u64,
    /// QBER of signal counts.
    pub t0_signal: f64,
    /// QBER of decoy counts.
    pub t0_decoy: f64,
}

impl ObservedTallies {
    pub fn validate(&self) -> Result<()> {
        let s = Selection::new(self.selection.p0, self.selection.p, self.selection.pp)?;
        let m = self.pulses as f64;
        for (name, n, prob) in [("N0", self.n0, s.p0), ("Nd", self.nd, s.p), ("Ns", self.ns, s.pp)] {
            // One count of slack absorbs rounding of rate-derived counts.
            if n as f64 > prob * m + 1.0 {
                return Err(Error::Domain(format!("{name} = {n} exceeds the {} pulses sent", prob * m)));
            }
        }
        for (name, t) in [("t0_signal", self.t0_signal), ("t0_decoy", self.t0_decoy)] {
            if !(0.0..=0.5).contains(&t) {
                return Err(Error::Domain(format!("{name} = {t} outside [0, 0.5]")));
            }
        }
        Ok(())
    }

    pub fn total_counts(&self) -> u64 {
        self.n0 + self.nd + self.ns
    }

    /// Counting rate `S0 = N0 / (p0 M)`.
    pub fn vacuum_rate(&self) -> f64 {
        self.n0 as f64 / (self.selection.p0 * self.pulses as f64)
    }

    /// Counting rate `S = Nd / (p M)`.
    pub fn decoy_rate(&self) -> f64 {
        self.nd as f64 / (self.selection.p * self.pulses as f64)
    }

    /// Counting rate `S' = Ns / (p' M)`.
    pub fn signal_rate(&self) -> f64 {
        self.ns as f64 / (self.selection.pp * self.pulses as f64)
    }
}

/// Confidence intervals on the expected counts and on `D0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectationIntervals {
    pub n0: Interval,
    pub nd: Interval,
    pub ns: Interval,
    pub d0: Interval,
    pub sigma_mult: f64,
}

/// Single-photon bounds evaluated at one value of `D0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FractionBound {
    /// Lower bound on `D1`.
    pub d1_lo: f64,
    /// Lower bound on the expected single-photon signal counts.
    pub n1s_expect_lo: f64,
    /// Lower bound on the realized single-photon signal counts.
    pub n1s_obs_lo: f64,
    pub n1d_expect_lo: f64,
    pub n1d_obs_lo: f64,
    pub delta1_signal_lo: f64,
    pub delta1_decoy_lo: f64,
    pub d0_used: f64,
}

/// Brackets the expected decoy and signal counts among counted vacuum
/// pulses: `p a_0 D0` and `p' a'_0 D0` with the coefficient bounds.
pub fn fact1_interval(d0: f64, bounds: &SourceBounds, sel: Selection) -> Result<(Interval, Interval)> {
    if d0.is_nan() || d0 < 0.0 {
        return Err(Error::Domain(format!("D0 = {d0} must be non-negative")));
    }
    bounds.require_admissible()?;
    Ok((
        bounds.decoy.zero.scale(sel.p * d0),
        bounds.signal.zero.scale(sel.pp * d0),
    ))
}

/// Interval for `D0` given intervals on `<N0>` and `<Nd>`.
///
/// Upper end `<N0>^U / (b0^L p0)`; lower end
/// `a_1^L / (p0 [a_1^L - a_0^L (1 - b0^L)]) * (<N0>^L - p0 (1 - b0^L) / (p a_1^L) <Nd>^U)`,
/// clamped at 0.
pub fn d0_interval(n0: Interval, nd: Interval, bounds: &SourceBounds, sel: Selection) -> Result<Interval> {
    sel.require_positive()?;
    let den = bounds.fact2_denominator();
    if den <= 0.0 {
        return Err(Error::ConditionFailure(format!(
            "a_1^L - a_0^L (1 - b0^L) = {den:.6e} <= 0: vacuum source too noisy relative to a_1^L"
        )));
    }
    if bounds.b0_lo <= 0.0 {
        return Err(Error::Domain("b0_lo must be positive to bound D0 from above".into()));
    }
    let a1l = bounds.decoy.one.lo;
    let leak = 1.0 - bounds.b0_lo;
    let hi = n0.hi / (bounds.b0_lo * sel.p0);
    let lo = (a1l / (sel.p0 * den) * (n0.lo - sel.p0 * leak / (sel.p * a1l) * nd.hi)).max(0.0);
    if lo > hi * (1.0 + D0_MEMBERSHIP_TOL) {
        return Err(Error::Domain(format!(
            "D0 interval is empty ([{lo:.6e}, {hi:.6e}]): vacuum and decoy counts are inconsistent with the source bounds"
        )));
    }
    Ok(Interval { lo: lo.min(hi), hi })
}

/// Lower bound on `D1` from expected decoy and signal counts at a given
/// `D0`, clamped at 0.
pub fn d1_lower(nd: f64, ns: f64, d0: f64, bounds: &SourceBounds, sel: Selection) -> Result<f64> {
    bounds.require_admissible()?;
    if sel.p <= 0.0 || sel.pp <= 0.0 {
        return Err(Error::Domain("decoy and signal selection probabilities must be positive".into()));
    }
    if d0.is_nan() || d0 < 0.0 {
        return Err(Error::Domain(format!("D0 = {d0} must be non-negative")));
    }
    let (a, ap) = (&bounds.decoy, &bounds.signal);
    let num = ap.two.lo * nd / sel.p
        - a.two.hi * ns / sel.pp
        - (ap.two.lo * a.zero.hi - a.two.hi * ap.zero.lo) * d0;
    Ok((num / bounds.fact3_denominator()).max(0.0))
}

/// Asymptotic fraction bounds `(delta1_decoy, delta1_signal)` from counting
/// rates, with `D0` at its largest value `S0 / b0^L`.
pub fn delta1_asymptotic(s0: f64, s: f64, sp: f64, bounds: &SourceBounds) -> Result<(f64, f64)> {
    for (name, r) in [("S0", s0), ("S", s), ("S'", sp)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(format!("counting rate {name} = {r} outside [0, 1]")));
        }
    }
    bounds.require_admissible()?;
    if bounds.b0_lo <= 0.0 {
        return Err(Error::Domain("b0_lo must be positive".into()));
    }
    let (a, ap) = (&bounds.decoy, &bounds.signal);
    let num = ap.two.lo * s
        - a.two.hi * sp
        - (ap.two.lo * a.zero.hi - a.two.hi * ap.zero.lo) * s0 / bounds.b0_lo;
    let den = bounds.fact3_denominator();
    let frac = |coef: f64, rate: f64| {
        if rate > 0.0 {
            (coef * num / (rate * den)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };
    Ok((frac(a.one.lo, s), frac(ap.one.lo, sp)))
}

fn sigma_interval(center: f64, radius: f64) -> Interval {
    Interval { lo: (center - radius).max(0.0), hi: center + radius }
}

/// Confidence intervals on `<N0>`, `<Nd>`, `<Ns>` and the resulting `D0`
/// interval.
pub fn expectation_intervals(
    tallies: &ObservedTallies,
    bounds: &SourceBounds,
    sigma_mult: f64,
) -> Result<ExpectationIntervals> {
    if sigma_mult.is_nan() || sigma_mult < 0.0 {
        return Err(Error::Domain(format!("sigma_mult = {sigma_mult} must be non-negative")));
    }
    tallies.validate()?;
    let n0 = tallies.n0 as f64;
    let nd = tallies.nd as f64;
    let ns = tallies.ns as f64;
    let delta_d = sigma_mult * nd.sqrt();
    let delta_0 = sigma_mult * n0.sqrt();

    let n0_iv = sigma_interval(n0, delta_0);
    let nd_iv = sigma_interval(nd, delta_d);
    let ns_iv = sigma_interval(ns, delta_d + delta_0);
    let d0 = d0_interval(n0_iv, nd_iv, bounds, tallies.selection)?;
    Ok(ExpectationIntervals { n0: n0_iv, nd: nd_iv, ns: ns_iv, d0, sigma_mult })
}

/// Lower bound on realized counts: `n - sigma_mult sqrt(n)`, clamped at 0.
pub fn observed_lower(expect_lo: f64, sigma_mult: f64) -> f64 {
    (expect_lo - sigma_mult * expect_lo.max(0.0).sqrt()).max(0.0)
}

/// Single-photon bounds at `d0` using precomputed intervals. The worst-case
/// endpoints are the smallest `<Nd>` and the largest `<Ns>`.
pub fn fraction_bound(
    tallies: &ObservedTallies,
    bounds: &SourceBounds,
    intervals: &ExpectationIntervals,
    d0: f64,
) -> Result<FractionBound> {
    if !intervals.d0.contains_with_tol(d0, D0_MEMBERSHIP_TOL) {
        return Err(Error::Domain(format!(
            "D0 = {d0:.6e} outside its certified interval [{:.6e}, {:.6e}]",
            intervals.d0.lo, intervals.d0.hi
        )));
    }
    let sel = tallies.selection;
    let sigma = intervals.sigma_mult;
    let d1 = d1_lower(intervals.nd.lo, intervals.ns.hi, d0, bounds, sel)?;

    let n1s_expect = sel.pp * bounds.signal.one.lo * d1;
    let n1s_obs = observed_lower(n1s_expect, sigma);
    let n1d_expect = sel.p * bounds.decoy.one.lo * d1;
    let n1d_obs = observed_lower(n1d_expect, sigma);

    let fraction = |obs: f64, total: u64| if total == 0 { 0.0 } else { (obs / total as f64).min(1.0) };
    Ok(FractionBound {
        d1_lo: d1,
        n1s_expect_lo: n1s_expect,
        n1s_obs_lo: n1s_obs,
        n1d_expect_lo: n1d_expect,
        n1d_obs_lo: n1d_obs,
        delta1_signal_lo: fraction(n1s_obs, tallies.ns),
        delta1_decoy_lo: fraction(n1d_obs, tallies.nd),
        d0_used: d0,
    })
}

/// Non-asymptotic single-photon bounds at a given `d0`.
pub fn delta1_nonasymptotic(
    tallies: &ObservedTallies,
    bounds: &SourceBounds,
    sigma_mult: f64,
    d0: f64,
) -> Result<FractionBound> {
    let intervals = expectation_intervals(tallies, bounds, sigma_mult)?;
    fraction_bound(tallies, bounds, &intervals, d0)
}

/// Fraction bound at the `D0` in the certified interval that minimizes the
/// signal fraction. The bound is monotone in `D0`, so only the endpoints are
/// evaluated.
pub fn worst_fraction_bound(
    tallies: &ObservedTallies,
    bounds: &SourceBounds,
    sigma_mult: f64,
) -> Result<FractionBound> {
    let intervals = expectation_intervals(tallies, bounds, sigma_mult)?;
    let lo = fraction_bound(tallies, bounds, &intervals, intervals.d0.lo)?;
    let hi = fraction_bound(tallies, bounds, &intervals, intervals.d0.hi)?;
    Ok(if hi.delta1_signal_lo <= lo.delta1_signal_lo { hi } else { lo })
}
