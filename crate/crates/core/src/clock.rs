//! Time sources. Durations in results and reports are read through a [`Clock`]
//! so that runs can be replayed with a frozen clock and compared byte for byte.

use std::time::Instant;

pub trait Clock: Send + Sync {
    /// Monotonic seconds since an arbitrary origin.
    fn now(&self) -> f64;

    /// Wall-clock timestamp, RFC 3339.
    fn timestamp(&self) -> String;
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn timestamp(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }
}

/// A clock that never advances. Every measured duration is zero.
#[derive(Debug, Clone)]
pub struct FrozenClock {
    pub stamp: String,
}

impl FrozenClock {
    pub fn new() -> Self {
        Self { stamp: "1970-01-01T00:00:00.000Z".to_owned() }
    }
}

impl Default for FrozenClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for FrozenClock {
    fn now(&self) -> f64 {
        0.0
    }

    fn timestamp(&self) -> String {
        self.stamp.clone()
    }
}
