//! Integer time.
//!
//! All instants and lengths are whole ticks. A [`TickUnit`] says how long a
//! tick is; it only matters when talking to humans or converting files.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An instant, in ticks since time zero.
pub type Time = u64;

/// A length of time, in ticks.
pub type Duration = u64;

/// Physical length of one tick, stored in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TickUnit {
    nanos: u64,
}

impl TickUnit {
    pub const NANOSECOND: TickUnit = TickUnit { nanos: 1 };
    pub const MICROSECOND: TickUnit = TickUnit { nanos: 1_000 };
    pub const MILLISECOND: TickUnit = TickUnit { nanos: 1_000_000 };

    pub fn from_nanos(nanos: u64) -> Option<Self> {
        (nanos > 0).then_some(TickUnit { nanos })
    }

    pub fn nanos(self) -> u64 {
        self.nanos
    }

    /// Ticks in one millisecond, if a millisecond is a whole number of ticks.
    pub fn ticks_per_ms(self) -> Option<u64> {
        (1_000_000 % self.nanos == 0).then(|| 1_000_000 / self.nanos)
    }

    pub fn to_ms(self, ticks: u64) -> f64 {
        ticks as f64 * self.nanos as f64 / 1e6
    }
}

impl Default for TickUnit {
    fn default() -> Self {
        TickUnit::MICROSECOND
    }
}

impl fmt::Display for TickUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.nanos;
        if n.is_multiple_of(1_000_000_000) {
            write!(f, "{}s", n / 1_000_000_000)
        } else if n.is_multiple_of(1_000_000) {
            write!(f, "{}ms", n / 1_000_000)
        } else if n.is_multiple_of(1_000) {
            write!(f, "{}us", n / 1_000)
        } else {
            write!(f, "{n}ns")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid tick unit `{0}`: expected a positive integer followed by ns, us, ms or s")]
pub struct ParseTickUnitError(String);

impl FromStr for TickUnit {
    type Err = ParseTickUnitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseTickUnitError(s.to_string());
        let s = s.trim();
        let split = s.find(|c: char| !c.is_ascii_digit()).ok_or_else(err)?;
        let (num, unit) = s.split_at(split);
        let num: u64 = if num.is_empty() { 1 } else { num.parse().map_err(|_| err())? };
        let scale = match unit.trim() {
            "ns" => 1,
            "us" | "µs" => 1_000,
            "ms" => 1_000_000,
            "s" => 1_000_000_000,
            _ => return Err(err()),
        };
        num.checked_mul(scale).and_then(TickUnit::from_nanos).ok_or_else(err)
    }
}

impl Serialize for TickUnit {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TickUnit {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print() {
        assert_eq!("1us".parse::<TickUnit>().unwrap(), TickUnit::MICROSECOND);
        assert_eq!("ms".parse::<TickUnit>().unwrap(), TickUnit::MILLISECOND);
        assert_eq!("100ns".parse::<TickUnit>().unwrap().to_string(), "100ns");
        assert_eq!(TickUnit::MICROSECOND.to_string(), "1us");
        assert!("0us".parse::<TickUnit>().is_err());
        assert!("12".parse::<TickUnit>().is_err());
        assert!("3 parsecs".parse::<TickUnit>().is_err());
    }

    #[test]
    fn half_millisecond_is_500_ticks() {
        let unit = TickUnit::default();
        assert_eq!(unit.ticks_per_ms(), Some(1000));
        assert_eq!(unit.to_ms(500), 0.5);
    }
}
