use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidInterval(format!("non-finite endpoint in [{lo}, {hi}]")));
        }
        if lo > hi {
            return Err(Error::InvalidInterval(format!("lower end {lo} exceeds upper end {hi}")));
        }
        Ok(Self { lo, hi })
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    /// Containment with a relative slack of `rel_tol` on both ends.
    pub fn contains_with_tol(&self, x: f64, rel_tol: f64) -> bool {
        let slack = rel_tol * self.lo.abs().max(self.hi.abs()).max(1.0);
        x >= self.lo - slack && x <= self.hi + slack
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Lower end raised to `floor`; the upper end is raised too if needed so
    /// the result stays well-formed.
    pub fn clamp_below(self, floor: f64) -> Self {
        let lo = self.lo.max(floor);
        Self { lo, hi: self.hi.max(lo) }
    }

    /// `n` evenly spaced points including both endpoints. A zero-width
    /// interval yields a single point.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        if self.is_point() || n < 2 {
            return vec![self.lo];
        }
        let step = self.width() / (n - 1) as f64;
        (0..n)
            .map(|i| if i + 1 == n { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }

    pub fn scale(&self, factor: f64) -> Self {
        debug_assert!(factor >= 0.0);
        Self { lo: self.lo * factor, hi: self.hi * factor }
    }
}
