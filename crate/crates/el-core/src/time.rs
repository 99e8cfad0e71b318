//! Engine time.
//!
//! All timing is expressed in whole milliseconds since the *engine epoch*
//! (the instant the run was initialized). Timers that must never expire
//! use the distinguished [`Timeout::Infinite`] / [`Timestamp::Infinity`]
//! values, which compare greater than every finite instant.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// A non-negative span of time in milliseconds.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DurationMs(u64);

impl DurationMs {
    pub const ZERO: DurationMs = DurationMs(0);

    pub fn new(millis: u64) -> Self {
        DurationMs(millis)
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for DurationMs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// How long a node may sit in the active set before it is withdrawn.
///
/// The default for every node is [`Timeout::Infinite`]: once active, it
/// waits forever. A finite timeout bounds how long the node's watchpoint
/// stays armed.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Timeout {
    Finite(DurationMs),
    #[default]
    Infinite,
}

impl Timeout {
    pub fn millis(ms: u64) -> Self {
        Timeout::Finite(DurationMs::new(ms))
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Timeout::Infinite)
    }
}

impl fmt::Display for Timeout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timeout::Finite(d) => write!(f, "{d}"),
            Timeout::Infinite => write!(f, "inf"),
        }
    }
}

/// An instant on the engine clock.
///
/// Ordering puts [`Timestamp::Infinity`] after every finite instant, so
/// expiry comparisons (`expires_at <= now`) never collect entries that
/// were scheduled to live forever.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Timestamp {
    Millis(u64),
    Infinity,
}

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp::Millis(0);

    pub fn millis(self) -> Option<u64> {
        match self {
            Timestamp::Millis(ms) => Some(ms),
            Timestamp::Infinity => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Timestamp::Millis(_))
    }

    /// The instant `delay` after `self`. Saturates instead of wrapping.
    pub fn plus_delay(self, delay: DurationMs) -> Timestamp {
        match self {
            Timestamp::Millis(ms) => Timestamp::Millis(ms.saturating_add(delay.millis())),
            Timestamp::Infinity => Timestamp::Infinity,
        }
    }

    /// The instant at which a timer started at `self` with the given
    /// timeout expires; infinite timeouts never do.
    pub fn plus_timeout(self, timeout: Timeout) -> Timestamp {
        match timeout {
            Timeout::Finite(d) => self.plus_delay(d),
            Timeout::Infinite => Timestamp::Infinity,
        }
    }

    /// Milliseconds elapsed since `earlier`, zero if `earlier` is later.
    /// Returns `None` whenever either endpoint is infinite.
    pub fn since(self, earlier: Timestamp) -> Option<u64> {
        match (self, earlier) {
            (Timestamp::Millis(a), Timestamp::Millis(b)) => Some(a.saturating_sub(b)),
            _ => None,
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timestamp::Millis(ms) => write!(f, "{ms}"),
            Timestamp::Infinity => write!(f, "inf"),
        }
    }
}

// Timestamps and timeouts serialize as a plain number of milliseconds or
// the string "inf", matching the graph and snapshot file formats.

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Timestamp::Millis(ms) => serializer.serialize_u64(*ms),
            Timestamp::Infinity => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match MillisOrInf::deserialize(deserializer)?.into_millis()? {
            Some(ms) => Ok(Timestamp::Millis(ms)),
            None => Ok(Timestamp::Infinity),
        }
    }
}

impl Serialize for Timeout {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Timeout::Finite(d) => serializer.serialize_u64(d.millis()),
            Timeout::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Timeout {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match MillisOrInf::deserialize(deserializer)?.into_millis()? {
            Some(ms) => Ok(Timeout::millis(ms)),
            None => Ok(Timeout::Infinite),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MillisOrInf {
    Millis(u64),
    Word(String),
}

impl MillisOrInf {
    /// `Ok(Some(ms))` for a finite value, `Ok(None)` for `"inf"`.
    fn into_millis<E: de::Error>(self) -> Result<Option<u64>, E> {
        match self {
            MillisOrInf::Millis(ms) => Ok(Some(ms)),
            MillisOrInf::Word(w) if w == "inf" => Ok(None),
            MillisOrInf::Word(w) => Err(E::custom(format!(
                "expected a millisecond count or \"inf\", got {w:?}"
            ))),
        }
    }
}
