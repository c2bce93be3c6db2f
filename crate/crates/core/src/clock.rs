use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, TimeZone, Utc};

/// Source of timestamps for every persisted record.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock: starts at a fixed instant and advances one second per reading.
#[derive(Debug)]
pub struct SteppingClock {
    next: AtomicI64,
}

impl SteppingClock {
    pub fn starting_at(epoch_seconds: i64) -> Self {
        Self {
            next: AtomicI64::new(epoch_seconds),
        }
    }
}

impl Default for SteppingClock {
    fn default() -> Self {
        // 2025-01-01T00:00:00Z
        Self::starting_at(1_735_689_600)
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let secs = self.next.fetch_add(1, Ordering::SeqCst);
        Utc.timestamp_opt(secs, 0)
            .single()
            .expect("clock stays within chrono's range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stepping_clock_is_monotone() {
        let c = SteppingClock::default();
        let a = c.now();
        let b = c.now();
        assert_eq!((b - a).num_seconds(), 1);
        assert_eq!(a.to_rfc3339(), "2025-01-01T00:00:00+00:00");
    }
}
