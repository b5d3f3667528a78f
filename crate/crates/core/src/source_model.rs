//! Photon-number coefficient bounds for the three sources.
//!
//! Every source emits a diagonal mixture of Fock states whose coefficients may
//! drift from pulse to pulse. Only bounds on those coefficients are assumed
//! known: `a_k` for the decoy source, `a'_k` for the signal source and the
//! vacuum coefficient `b_0` of the vacuum source. Coefficients are carried
//! explicitly up to `k = 2`; higher photon numbers enter only through the
//! ratio conditions checked by [`validate_conditions`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;

/// Relative slack used when comparing ratio chains that may hold with equality.
const RATIO_TOL: f64 = 1e-12;

/// Poisson photon-number probability `mu^k e^{-mu} / k!`.
pub fn poisson_coefficient(mu: f64, k: u32) -> f64 {
    let mut term = (-mu).exp();
    for j in 1..=k {
        term *= mu / f64::from(j);
    }
    term
}

/// Mean photon number range `[mu_lo, mu_hi]` of a weak coherent source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityInterval {
    pub mu_lo: f64,
    pub mu_hi: f64,
}

impl IntensityInterval {
    pub fn new(mu_lo: f64, mu_hi: f64) -> Result<Self> {
        if !(mu_lo.is_finite() && mu_hi.is_finite()) || mu_lo < 0.0 || mu_lo > mu_hi {
            return Err(Error::InvalidInterval(format!(
                "intensity interval [{mu_lo}, {mu_hi}] must satisfy 0 <= lo <= hi"
            )));
        }
        Ok(Self { mu_lo, mu_hi })
    }

    /// `[mu (1 - rel_err), mu (1 + rel_err)]`.
    pub fn relative(mu: f64, rel_err: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rel_err) {
            return Err(Error::InvalidInterval(format!(
                "relative intensity error {rel_err} outside [0, 1)"
            )));
        }
        Self::new(mu * (1.0 - rel_err), mu * (1.0 + rel_err))
    }

    pub fn exact(mu: f64) -> Result<Self> {
        Self::new(mu, mu)
    }
}

/// Bounds on the `k = 0, 1, 2` Fock coefficients of one source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FockBounds {
    pub zero: Interval,
    pub one: Interval,
    pub two: Interval,
}

impl FockBounds {
    /// Coefficient bounds of a coherent source whose intensity lies in
    /// `mu`. Requires `mu.mu_hi < 1` so `k = 1, 2` coefficients are increasing
    /// in the intensity.
    pub fn coherent(mu: IntensityInterval) -> Self {
        Self {
            zero: Interval { lo: (-mu.mu_hi).exp(), hi: (-mu.mu_lo).exp() },
            one: Interval {
                lo: poisson_coefficient(mu.mu_lo, 1),
                hi: poisson_coefficient(mu.mu_hi, 1),
            },
            two: Interval {
                lo: poisson_coefficient(mu.mu_lo, 2),
                hi: poisson_coefficient(mu.mu_hi, 2),
            },
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        for (k, iv) in [(0, self.zero), (1, self.one), (2, self.two)] {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo < 0.0 || iv.hi > 1.0 || iv.lo > iv.hi {
                return Err(Error::InvalidInterval(format!(
                    "{name} coefficient k={k}: [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                    iv.lo, iv.hi
                )));
            }
        }
        Ok(())
    }

    /// True when `other` lies inside `self` on every coefficient.
    pub fn covers(&self, other: &FockBounds, rel_tol: f64) -> bool {
        [(self.zero, other.zero), (self.one, other.one), (self.two, other.two)]
            .iter()
            .all(|(outer, inner)| {
                outer.contains_with_tol(inner.lo, rel_tol) && outer.contains_with_tol(inner.hi, rel_tol)
            })
    }
}

/// Intensity intervals a [`SourceBounds`] was derived from, kept for
/// diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentIntensities {
    pub decoy: IntensityInterval,
    pub signal: IntensityInterval,
    pub vacuum: IntensityInterval,
}

/// Bounds on the photon-number coefficients of the vacuum, decoy and signal
/// sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceBounds {
    /// `a_k` bounds of the decoy source.
    pub decoy: FockBounds,
    /// `a'_k` bounds of the signal source.
    pub signal: FockBounds,
    /// Lower bound on the vacuum coefficient `b_0` of the vacuum source.
    pub b0_lo: f64,
    /// `inf_{k>=2} a_k^L / b_k^U`, when known.
    pub tail_ratio_decoy: Option<f64>,
    /// `inf_{k>=3} a'_k^L / a_k^U`, when known.
    pub tail_ratio_signal: Option<f64>,
    pub coherent: Option<CoherentIntensities>,
}

impl SourceBounds {
    /// Structurally validated bounds from explicit coefficient intervals.
    pub fn new(
        decoy: FockBounds,
        signal: FockBounds,
        b0_lo: f64,
        tail_ratio_decoy: Option<f64>,
        tail_ratio_signal: Option<f64>,
    ) -> Result<Self> {
        decoy.check("decoy")?;
        signal.check("signal")?;
        if !(0.0..=1.0).contains(&b0_lo) {
            return Err(Error::InvalidInterval(format!("b0_lo = {b0_lo} outside [0, 1]")));
        }
        for (name, r) in [("tail_ratio_decoy", tail_ratio_decoy), ("tail_ratio_signal", tail_ratio_signal)] {
            if let Some(r) = r {
                if r.is_nan() || r < 0.0 {
                    return Err(Error::InvalidInterval(format!("{name} = {r} must be non-negative")));
                }
            }
        }
        Ok(Self { decoy, signal, b0_lo, tail_ratio_decoy, tail_ratio_signal, coherent: None })
    }

    /// Exact (zero-width) Poisson bounds; vacuum source emits pure vacuum.
    pub fn exact_poisson(mu: f64, mu_signal: f64) -> Result<Self> {
        coherent_bounds(
            IntensityInterval::exact(mu)?,
            IntensityInterval::exact(mu_signal)?,
            IntensityInterval::exact(0.0)?,
        )
    }

    /// Denominator `a_1^U a'_2^L - a'_1^L a_2^U` of the single-photon bound.
    pub fn fact3_denominator(&self) -> f64 {
        self.decoy.one.hi * self.signal.two.lo - self.signal.one.lo * self.decoy.two.hi
    }

    /// Denominator `a_1^L - a_0^L (1 - b_0^L)` of the `D0` lower bound.
    pub fn fact2_denominator(&self) -> f64 {
        self.decoy.one.lo - self.decoy.zero.lo * (1.0 - self.b0_lo)
    }

    /// Runs [`validate_conditions`] and turns any failing check into an error.
    pub fn require_admissible(&self) -> Result<ConditionReport> {
        let report = validate_conditions(self);
        if report.passes() {
            Ok(report)
        } else {
            Err(Error::ConditionFailure(report.failure_summary()))
        }
    }
}

/// Builds coefficient bounds from intensity intervals of three coherent
/// sources.
pub fn coherent_bounds(
    decoy: IntensityInterval,
    signal: IntensityInterval,
    vacuum: IntensityInterval,
) -> Result<SourceBounds> {
    for (name, iv) in [("decoy", decoy), ("signal", signal), ("vacuum", vacuum)] {
        IntensityInterval::new(iv.mu_lo, iv.mu_hi)
            .map_err(|e| Error::InvalidInterval(format!("{name}: {e}")))?;
        if iv.mu_hi >= 1.0 {
            return Err(Error::Monotonicity(format!(
                "{name} intensity upper end {} >= 1; mu^k e^-mu is not monotone on the interval",
                iv.mu_hi
            )));
        }
    }

    // a'_k^L / a_k^U = (mu'^L / mu^U)^k e^{mu^U - mu'^L}, increasing in k iff
    // mu'^L >= mu^U; otherwise it decays to 0.
    let tail_ratio_signal = if decoy.mu_hi == 0.0 {
        f64::INFINITY
    } else {
        let r = signal.mu_lo / decoy.mu_hi;
        if r >= 1.0 {
            r.powi(3) * (decoy.mu_hi - signal.mu_lo).exp()
        } else {
            0.0
        }
    };
    // a_k^L / b_k^U with b_k^U = (nu^U)^k e^{-nu^U} / k!.
    let tail_ratio_decoy = if vacuum.mu_hi == 0.0 {
        f64::INFINITY
    } else {
        let q = decoy.mu_lo / vacuum.mu_hi;
        if q >= 1.0 {
            q.powi(2) * (vacuum.mu_hi - decoy.mu_lo).exp()
        } else {
            0.0
        }
    };

    let mut bounds = SourceBounds::new(
        FockBounds::coherent(decoy),
        FockBounds::coherent(signal),
        (-vacuum.mu_hi).exp(),
        Some(tail_ratio_decoy),
        Some(tail_ratio_signal),
    )?;
    bounds.coherent = Some(CoherentIntensities { decoy, signal, vacuum });
    Ok(bounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConditionStatus {
    Pass,
    Fail,
    Unverified,
}

impl fmt::Display for ConditionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
            Self::Unverified => "UNVERIFIED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub status: ConditionStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub checks: Vec<ConditionCheck>,
    pub diagnostics: Vec<String>,
}

impl ConditionReport {
    /// No check failed. Unverified tail checks do not block.
    pub fn passes(&self) -> bool {
        self.checks.iter().all(|c| c.status != ConditionStatus::Fail)
    }

    pub fn fully_verified(&self) -> bool {
        self.checks.iter().all(|c| c.status == ConditionStatus::Pass)
    }

    pub fn status(&self, name: &str) -> Option<ConditionStatus> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.status)
    }

    fn failure_summary(&self) -> String {
        let mut parts: Vec<String> = self
            .checks
            .iter()
            .filter(|c| c.status == ConditionStatus::Fail)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        parts.extend(self.diagnostics.iter().cloned());
        parts.join("; ")
    }
}

fn at_least(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs - RATIO_TOL * rhs.abs().max(lhs.abs())
}

/// Checks the conditions the `D0` and `D1` bounds rest on:
///
/// - vacuum dominance: `a_k^L / b_k^U >= a_1^L / b_1^U` for `k >= 2`, with
///   `b_1^U` relaxed to `1 - b_0^L`;
/// - yield-ratio chain: `a'_k^L / a_k^U >= a'_2^L / a_2^U >= a'_1^L / a_1^U`;
/// - both bound denominators strictly positive.
pub fn validate_conditions(bounds: &SourceBounds) -> ConditionReport {
    let mut checks = Vec::with_capacity(5);
    let mut diagnostics = Vec::new();
    let a = &bounds.decoy;
    let ap = &bounds.signal;

    let vacuum = if bounds.b0_lo >= 1.0 {
        ConditionCheck {
            name: "vacuum-dominance",
            status: ConditionStatus::Pass,
            detail: "vacuum source is pure vacuum (b0_lo = 1)".into(),
        }
    } else {
        let threshold = a.one.lo / (1.0 - bounds.b0_lo);
        match bounds.tail_ratio_decoy {
            Some(t) if at_least(t, threshold) => ConditionCheck {
                name: "vacuum-dominance",
                status: ConditionStatus::Pass,
                detail: format!("inf a_k^L/b_k^U = {t:.6e} >= a_1^L/(1-b0^L) = {threshold:.6e}"),
            },
            Some(t) => ConditionCheck {
                name: "vacuum-dominance",
                status: ConditionStatus::Fail,
                detail: format!("inf a_k^L/b_k^U = {t:.6e} < a_1^L/(1-b0^L) = {threshold:.6e}"),
            },
            None => ConditionCheck {
                name: "vacuum-dominance",
                status: ConditionStatus::Unverified,
                detail: "no tail_ratio_decoy supplied for k >= 2".into(),
            },
        }
    };
    checks.push(vacuum);

    let d2 = bounds.fact2_denominator();
    checks.push(ConditionCheck {
        name: "d0-denominator",
        status: if d2 > 0.0 { ConditionStatus::Pass } else { ConditionStatus::Fail },
        detail: format!("a_1^L - a_0^L (1 - b0^L) = {d2:.6e}"),
    });

    // Cross-multiplied form of a'_2^L / a_2^U >= a'_1^L / a_1^U.
    let lhs = ap.two.lo * a.one.hi;
    let rhs = ap.one.lo * a.two.hi;
    checks.push(ConditionCheck {
        name: "yield-ratio-chain",
        status: if at_least(lhs, rhs) { ConditionStatus::Pass } else { ConditionStatus::Fail },
        detail: format!("a'_2^L a_1^U = {lhs:.6e} vs a'_1^L a_2^U = {rhs:.6e}"),
    });

    let d3 = bounds.fact3_denominator();
    checks.push(ConditionCheck {
        name: "d1-denominator",
        status: if d3 > 0.0 { ConditionStatus::Pass } else { ConditionStatus::Fail },
        detail: format!("a_1^U a'_2^L - a'_1^L a_2^U = {d3:.6e}"),
    });

    let tail = match bounds.tail_ratio_signal {
        Some(t) if at_least(t * a.two.hi, ap.two.lo) => ConditionCheck {
            name: "yield-ratio-tail",
            status: ConditionStatus::Pass,
            detail: format!("inf_{{k>=3}} a'_k^L/a_k^U = {t:.6e}"),
        },
        Some(t) => ConditionCheck {
            name: "yield-ratio-tail",
            status: ConditionStatus::Fail,
            detail: format!(
                "inf_{{k>=3}} a'_k^L/a_k^U = {t:.6e} below a'_2^L/a_2^U = {:.6e}",
                ap.two.lo / a.two.hi
            ),
        },
        None => ConditionCheck {
            name: "yield-ratio-tail",
            status: ConditionStatus::Unverified,
            detail: "no tail_ratio_signal supplied for k >= 3".into(),
        },
    };
    checks.push(tail);

    if let Some(c) = bounds.coherent {
        if c.decoy.mu_hi > c.signal.mu_lo {
            diagnostics.push(format!(
                "intensity overlap: decoy upper end {} exceeds signal lower end {}",
                c.decoy.mu_hi, c.signal.mu_lo
            ));
        }
        if c.vacuum.mu_hi > c.decoy.mu_lo {
            diagnostics.push(format!(
                "vacuum source upper intensity {} exceeds decoy lower end {}",
                c.vacuum.mu_hi, c.decoy.mu_lo
            ));
        }
    }

    ConditionReport { checks, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64) -> IntensityInterval {
        IntensityInterval::new(lo, hi).unwrap()
    }

    #[test]
    fn exact_intervals_give_poisson_points() {
        let b = coherent_bounds(iv(0.2, 0.2), iv(0.6, 0.6), iv(0.0, 0.0)).unwrap();
        assert_eq!(b.decoy.one.lo, b.decoy.one.hi);
        assert!((b.decoy.one.lo - 0.2 * (-0.2f64).exp()).abs() < 1e-16);
        assert!((b.signal.one.lo - 0.6 * (-0.6f64).exp()).abs() < 1e-16);
        assert_eq!(b.b0_lo, 1.0);
        assert!(validate_conditions(&b).fully_verified());
    }

    #[test]
    fn vacuum_cap_sets_b0() {
        let b = coherent_bounds(iv(0.2, 0.2), iv(0.6, 0.6), iv(0.0, 0.01)).unwrap();
        assert!((b.b0_lo - 0.990_049_833_749_168).abs() < 1e-14);
        assert!(validate_conditions(&b).fully_verified());
    }

    #[test]
    fn three_percent_decoy_interval() {
        let b = coherent_bounds(IntensityInterval::relative(0.2, 0.03).unwrap(), iv(0.6, 0.6), iv(0.0, 0.0))
            .unwrap();
        // Hand-evaluated: 0.194 e^-0.194, 0.206 e^-0.206, e^-0.206, e^-0.194.
        assert!((b.decoy.one.lo - 0.159_789_633_428_103_93).abs() < 1e-12);
        assert!((b.decoy.one.hi - 0.167_649_613_714_281_64).abs() < 1e-12);
        assert!((b.decoy.zero.lo - 0.813_833_076_282_920_7).abs() < 1e-12);
        assert!((b.decoy.zero.hi - 0.823_657_904_268_576_9).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_monotone_signal() {
        let err = coherent_bounds(iv(0.2, 0.2), iv(0.9, 1.1), iv(0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Monotonicity(_)));
        assert!(matches!(IntensityInterval::new(0.3, 0.2), Err(Error::InvalidInterval(_))));
    }

    #[test]
    fn chain_violation_fails() {
        let good = SourceBounds::exact_poisson(0.2, 0.6).unwrap();
        let mut bad = good;
        // Push a'_2^L / a_2^U below a'_1^L / a_1^U.
        bad.signal.two.lo = 0.5 * good.signal.one.lo * good.decoy.two.hi / good.decoy.one.hi;
        bad.tail_ratio_signal = None;
        let report = validate_conditions(&bad);
        assert_eq!(report.status("yield-ratio-chain"), Some(ConditionStatus::Fail));
        assert!(bad.require_admissible().is_err());
    }

    #[test]
    fn overlap_is_reported() {
        let b = coherent_bounds(iv(0.2, 0.5), iv(0.4, 0.6), iv(0.0, 0.0)).unwrap();
        let report = validate_conditions(&b);
        assert!(!report.passes());
        assert_eq!(report.status("yield-ratio-tail"), Some(ConditionStatus::Fail));
        assert!(report.diagnostics.iter().any(|d| d.contains("overlap")));
    }

    #[test]
    fn user_bounds_without_tails_are_unverified() {
        let mut b = SourceBounds::exact_poisson(0.2, 0.6).unwrap();
        b.tail_ratio_signal = None;
        b.b0_lo = 0.99;
        b.tail_ratio_decoy = None;
        let report = validate_conditions(&b);
        assert!(report.passes());
        assert!(!report.fully_verified());
        assert_eq!(report.status("yield-ratio-tail"), Some(ConditionStatus::Unverified));
        assert_eq!(report.status("vacuum-dominance"), Some(ConditionStatus::Unverified));
    }

    #[test]
    fn noisy_vacuum_fails_dominance() {
        // Vacuum source as bright as the decoy.
        let b = coherent_bounds(iv(0.2, 0.2), iv(0.6, 0.6), iv(0.0, 0.3)).unwrap();
        assert_eq!(validate_conditions(&b).status("vacuum-dominance"), Some(ConditionStatus::Fail));
    }

    proptest! {
        #[test]
        fn coherent_outputs_satisfy_invariants(
            mu in 0.01f64..0.4,
            gap in 0.01f64..0.5,
            dm in 0.0f64..0.05,
            cap in 0.0f64..0.005,
        ) {
            let mup = (mu + gap).min(0.9);
            prop_assume!(mu * (1.0 + dm) < mup * (1.0 - dm));
            let b = coherent_bounds(
                IntensityInterval::relative(mu, dm).unwrap(),
                IntensityInterval::relative(mup, dm).unwrap(),
                iv(0.0, cap),
            ).unwrap();
            prop_assert!(b.fact3_denominator() > 0.0);
            prop_assert!(b.fact2_denominator() > 0.0);
            for f in [b.decoy, b.signal] {
                for x in [f.zero, f.one, f.two] {
                    prop_assert!(0.0 <= x.lo && x.lo <= x.hi && x.hi <= 1.0);
                }
            }
            prop_assert!(validate_conditions(&b).fully_verified());
        }

        #[test]
        fn shrinking_never_widens(mu in 0.05f64..0.9, dm in 0.0f64..0.1, shrink in 0.0f64..1.0) {
            let wide = FockBounds::coherent(IntensityInterval::relative(mu.min(0.9 / 1.1), dm).unwrap());
            let narrow = FockBounds::coherent(IntensityInterval::relative(mu.min(0.9 / 1.1), dm * shrink).unwrap());
            prop_assert!(wide.covers(&narrow, 0.0));
        }

        #[test]
        fn zero_width_matches_poisson(mu in 0.0f64..0.99) {
            let f = FockBounds::coherent(IntensityInterval::exact(mu).unwrap());
            for (k, x) in [(0u32, f.zero), (1, f.one), (2, f.two)] {
                let expect = mu.powi(k as i32) * (-mu).exp() / [1.0, 1.0, 2.0][k as usize];
                prop_assert_eq!(x.lo, x.hi);
                prop_assert!((x.lo - expect).abs() <= 1e-14 * expect.max(f64::MIN_POSITIVE));
            }
        }
    }
}
