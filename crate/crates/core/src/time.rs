//! Integer-tick time.
//!
//! All durations are counted in ticks. Scenario files express times in the
//! same unit as `d`, and one tick is `d / 1000`, so every bound that is a
//! multiple of `d` is an exact integer.
//!
//! Local clocks are 64-bit counters that may wrap. Only differences between
//! readings carry meaning; they are computed with wrapping subtraction and
//! interpreted as signed, which is exact as long as compared readings are
//! less than 2^63 ticks apart.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

/// Ticks per `d`.
pub const TICKS_PER_D: i64 = 1000;

/// A signed duration in ticks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Span(pub i64);

impl Span {
    pub const ZERO: Span = Span(0);

    pub const fn ticks(self) -> i64 {
        self.0
    }

    /// `k` multiples of `d` where `d` is the given span.
    pub const fn times(self, k: i64) -> Span {
        Span(self.0 * k)
    }
}

impl Add for Span {
    type Output = Span;
    fn add(self, rhs: Span) -> Span {
        Span(self.0 + rhs.0)
    }
}

impl Sub for Span {
    type Output = Span;
    fn sub(self, rhs: Span) -> Span {
        Span(self.0 - rhs.0)
    }
}

impl Neg for Span {
    type Output = Span;
    fn neg(self) -> Span {
        Span(-self.0)
    }
}

impl Mul<i64> for Span {
    type Output = Span;
    fn mul(self, rhs: i64) -> Span {
        Span(self.0 * rhs)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", fmt_ticks(self.0 as i128))
    }
}

/// Renders a tick count as a decimal number of `d / 1000` units, e.g. `13.5`.
pub fn fmt_ticks(t: i128) -> String {
    let per = TICKS_PER_D as i128;
    let sign = if t < 0 { "-" } else { "" };
    let a = t.abs();
    let (whole, frac) = (a / per, a % per);
    if frac == 0 {
        format!("{sign}{whole}")
    } else {
        let s = format!("{frac:03}");
        format!("{sign}{whole}.{}", s.trim_end_matches('0'))
    }
}

/// Simulated real time, in ticks since the start of the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RealTime(pub u64);

impl RealTime {
    pub fn plus(self, s: Span) -> RealTime {
        RealTime((self.0 as i64 + s.0).max(0) as u64)
    }

    pub fn since(self, earlier: RealTime) -> Span {
        Span(self.0 as i64 - earlier.0 as i64)
    }
}

/// A reading of some node's local clock. Wraps at 2^64.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LocalTime(pub u64);

impl LocalTime {
    /// Signed distance `self - earlier`, wrap-safe.
    pub fn since(self, earlier: LocalTime) -> Span {
        Span(self.0.wrapping_sub(earlier.0) as i64)
    }

    pub fn plus(self, s: Span) -> LocalTime {
        LocalTime(self.0.wrapping_add(s.0 as u64))
    }

    pub fn minus(self, s: Span) -> LocalTime {
        LocalTime(self.0.wrapping_sub(s.0 as u64))
    }

    /// True when `self` is strictly later than `other`.
    pub fn after(self, other: LocalTime) -> bool {
        self.since(other).0 > 0
    }

    /// True when `self` is strictly earlier than `other`.
    pub fn before(self, other: LocalTime) -> bool {
        self.since(other).0 < 0
    }

    /// Wrap-safe maximum relative to each other.
    pub fn max(self, other: LocalTime) -> LocalTime {
        if other.after(self) {
            other
        } else {
            self
        }
    }
}

/// Affine clock `local = floor(rate * real) + offset` (mod 2^64).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockModel {
    pub owner: u32,
    pub rate: Ratio<i64>,
    pub offset: u64,
}

impl ClockModel {
    pub fn identity(owner: u32) -> Self {
        ClockModel { owner, rate: Ratio::from_integer(1), offset: 0 }
    }

    pub fn read(&self, t: RealTime) -> LocalTime {
        let num = t.0 as i128 * *self.rate.numer() as i128;
        let scaled = num.div_euclid(*self.rate.denom() as i128);
        LocalTime((scaled as u64).wrapping_add(self.offset))
    }

    /// The exact real time at which the unfloored clock shows `tau`, resolving
    /// the wrap ambiguity around the reading taken at `near`.
    pub fn real_of(&self, tau: LocalTime, near: RealTime) -> Ratio<i128> {
        let at_near = self.read(near);
        let diff = tau.since(at_near).0 as i128;
        let rate = Ratio::new(*self.rate.numer() as i128, *self.rate.denom() as i128);
        // Continuous reading at `near` is rate*near + offset; the floor drops
        // the fractional part, which we add back so the inverse is exact.
        let cont_near = rate * Ratio::from_integer(near.0 as i128);
        let frac = cont_near - Ratio::from_integer(cont_near.floor().to_integer());
        Ratio::from_integer(near.0 as i128) + (Ratio::from_integer(diff) - frac) / rate
    }
}
