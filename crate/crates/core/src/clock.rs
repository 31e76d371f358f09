//! Time and identifier sources.
//!
//! Everything that stamps a record goes through a [`Clock`] and everything that
//! names one goes through an [`IdGenerator`], so scripted runs can be replayed
//! with identical payloads.

use std::fmt;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};

use chrono::{DateTime, Duration as ChronoDuration, TimeZone, Utc};

pub trait Clock: Send + Sync + fmt::Debug {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that starts at a fixed instant and advances by a fixed step on every read.
#[derive(Debug)]
pub struct ManualClock {
    base: DateTime<Utc>,
    step_ms: i64,
    ticks: AtomicI64,
}

impl ManualClock {
    pub fn new(base: DateTime<Utc>, step_ms: i64) -> Self {
        Self { base, step_ms, ticks: AtomicI64::new(0) }
    }

    /// 2025-01-01T00:00:00Z, one millisecond per read.
    pub fn fixed() -> Self {
        Self::new(Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(), 1)
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        let t = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.base + ChronoDuration::milliseconds(t * self.step_ms)
    }
}

/// Source of fresh identifiers for calls, runs and sessions.
#[derive(Debug, Default)]
pub enum IdGenerator {
    #[default]
    Random,
    Sequential {
        prefix: String,
        next: AtomicU64,
    },
}

impl IdGenerator {
    pub fn sequential(prefix: impl Into<String>) -> Self {
        IdGenerator::Sequential { prefix: prefix.into(), next: AtomicU64::new(1) }
    }

    pub fn next_id(&self) -> String {
        match self {
            IdGenerator::Random => uuid::Uuid::new_v4().simple().to_string(),
            IdGenerator::Sequential { prefix, next } => {
                format!("{prefix}-{}", next.fetch_add(1, Ordering::SeqCst))
            }
        }
    }
}
