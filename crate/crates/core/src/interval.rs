//! Closed real intervals, possibly empty.
//!
//! Every feasibility set in the pipeline (transient/steady current sets, the
//! realizable current and acceleration sets, kinematic envelopes, the command
//! set) is a single closed interval, so this type is the common currency.

use std::fmt;

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`. Empty iff `lo > hi` (or either end is NaN).
#[derive(Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub const EMPTY: Interval = Interval {
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
    };

    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    /// `[lo, hi]`, or the empty interval when `lo > hi`.
    pub fn new(lo: f64, hi: f64) -> Self {
        if lo <= hi {
            Interval { lo, hi }
        } else {
            Self::EMPTY
        }
    }

    pub fn point(x: f64) -> Self {
        Self::new(x, x)
    }

    /// Symmetric interval `[-r, r]`.
    pub fn symmetric(r: f64) -> Self {
        Self::new(-r, r)
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_nan() || self.hi.is_nan() || self.lo > self.hi
    }

    pub fn lo(&self) -> Option<f64> {
        (!self.is_empty()).then_some(self.lo)
    }

    pub fn hi(&self) -> Option<f64> {
        (!self.is_empty()).then_some(self.hi)
    }

    /// Endpoints, or `None` for the empty interval.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        (!self.is_empty()).then_some((self.lo, self.hi))
    }

    /// Lower end, NaN when empty. Used for CSV output.
    pub fn lo_or_nan(&self) -> f64 {
        self.lo().unwrap_or(f64::NAN)
    }

    pub fn hi_or_nan(&self) -> f64 {
        self.hi().unwrap_or(f64::NAN)
    }

    pub fn width(&self) -> f64 {
        match self.bounds() {
            Some((lo, hi)) => hi - lo,
            None => 0.0,
        }
    }

    pub fn midpoint(&self) -> Option<f64> {
        self.bounds().map(|(lo, hi)| 0.5 * (lo + hi))
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Containment with an absolute slack on both ends.
    pub fn contains_with_tol(&self, x: f64, tol: f64) -> bool {
        !self.is_empty() && self.lo - tol <= x && x <= self.hi + tol
    }

    /// `self ⊆ other`. The empty interval is a subset of everything.
    pub fn is_subset_of(&self, other: &Interval) -> bool {
        self.is_empty() || (other.lo <= self.lo && self.hi <= other.hi)
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        if self.is_empty() || other.is_empty() {
            return Self::EMPTY;
        }
        Self::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    /// Image under `x -> scale * x + offset`. Orientation is kept for
    /// `scale >= 0` and flipped otherwise; emptiness is preserved.
    pub fn affine(&self, scale: f64, offset: f64) -> Interval {
        match self.bounds() {
            None => Self::EMPTY,
            Some((lo, hi)) => {
                let a = scale * lo + offset;
                let b = scale * hi + offset;
                if a <= b {
                    Self::new(a, b)
                } else {
                    Self::new(b, a)
                }
            }
        }
    }

    /// Clamp `x` into the interval.
    pub fn clamp(&self, x: f64) -> Result<f64> {
        match self.bounds() {
            None => Err(Error::EmptyInterval("clamp")),
            Some((lo, hi)) => Ok(x.max(lo).min(hi)),
        }
    }

    /// Largest endpoint magnitude, 0 when empty.
    pub fn max_abs(&self) -> f64 {
        match self.bounds() {
            Some((lo, hi)) => lo.abs().max(hi.abs()),
            None => 0.0,
        }
    }
}

impl Default for Interval {
    fn default() -> Self {
        Self::EMPTY
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bounds() {
            Some((lo, hi)) => write!(f, "[{lo}, {hi}]"),
            None => write!(f, "∅"),
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
