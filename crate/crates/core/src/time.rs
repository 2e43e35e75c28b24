//! Simulated time.
//!
//! All scheduling happens on an integer nanosecond timeline so that event
//! ordering and latency sums are exact. Values cross the public API as
//! milliseconds.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

const NANOS_PER_MS: u64 = 1_000_000;

/// A point on (or a span of) the simulated timeline, in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * NANOS_PER_MS)
    }

    /// Rounds to the nearest nanosecond. Negative and non-finite inputs clamp to zero.
    pub fn from_ms_f64(ms: f64) -> Self {
        if !ms.is_finite() || ms <= 0.0 {
            return SimTime(0);
        }
        SimTime((ms * NANOS_PER_MS as f64).round() as u64)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        Self::from_ms_f64(s * 1000.0)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / NANOS_PER_MS as f64
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    /// Exact decimal rendering in milliseconds with six fractional digits.
    pub fn fmt_ms(self) -> String {
        format!("{}.{:06}", self.0 / NANOS_PER_MS, self.0 % NANOS_PER_MS)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 = self.0.saturating_add(rhs.0);
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.fmt_ms())
    }
}
