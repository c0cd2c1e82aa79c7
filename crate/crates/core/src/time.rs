//! Microsecond timestamps and the simulation clock.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

/// Microseconds since mission start (virtual clock) or the UNIX epoch (realtime clock).
pub type Micros = u64;

pub const MICROS_PER_SEC: u64 = 1_000_000;
pub const MICROS_PER_MS: u64 = 1_000;

pub fn micros_to_secs(us: Micros) -> f64 {
    us as f64 / MICROS_PER_SEC as f64
}

pub fn secs_to_micros(s: f64) -> Micros {
    (s * MICROS_PER_SEC as f64).round().max(0.0) as Micros
}

pub fn ms_to_micros(ms: f64) -> Micros {
    (ms * MICROS_PER_MS as f64).round().max(0.0) as Micros
}

pub fn micros_to_ms(us: Micros) -> f64 {
    us as f64 / MICROS_PER_MS as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("cannot step a realtime clock")]
    InvalidMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Virtual,
    Realtime,
}

#[derive(Debug, Clone)]
enum Source {
    Virtual(Micros),
    Realtime { epoch_at_start: Micros, start: Instant },
}

/// Virtual clocks only move through [`Clock::advance`]; realtime clocks read
/// a monotonic source anchored to the UNIX epoch at construction.
#[derive(Debug, Clone)]
pub struct Clock {
    source: Source,
}

impl Clock {
    pub fn virtual_at(now: Micros) -> Self {
        Self { source: Source::Virtual(now) }
    }

    pub fn realtime() -> Self {
        let epoch_at_start = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as Micros)
            .unwrap_or(0);
        Self { source: Source::Realtime { epoch_at_start, start: Instant::now() } }
    }

    pub fn mode(&self) -> ClockMode {
        match self.source {
            Source::Virtual(_) => ClockMode::Virtual,
            Source::Realtime { .. } => ClockMode::Realtime,
        }
    }

    pub fn now(&self) -> Micros {
        match &self.source {
            Source::Virtual(t) => *t,
            Source::Realtime { epoch_at_start, start } => {
                epoch_at_start + start.elapsed().as_micros() as Micros
            }
        }
    }

    pub fn advance(&mut self, dt: Micros) -> Result<Micros, ClockError> {
        match &mut self.source {
            Source::Virtual(t) => {
                *t += dt;
                Ok(*t)
            }
            Source::Realtime { .. } => Err(ClockError::InvalidMode),
        }
    }

    /// Moves a virtual clock forward to `t`; earlier targets leave it unchanged.
    pub fn advance_to(&mut self, t: Micros) -> Result<Micros, ClockError> {
        let now = self.now();
        self.advance(t.saturating_sub(now))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advance_adds_exactly() {
        let mut c = Clock::virtual_at(0);
        assert_eq!(c.advance(5000), Ok(5000));
        assert_eq!(c.advance(0), Ok(5000));
        assert_eq!(c.now(), 5000);
    }

    #[test]
    fn two_hundred_steps_make_one_second() {
        let mut c = Clock::virtual_at(0);
        for _ in 0..200 {
            c.advance(5000).unwrap();
        }
        let oracle: u64 = std::iter::repeat_n(5000u64, 200).sum();
        assert_eq!(c.now(), oracle);
        assert_eq!(c.now(), MICROS_PER_SEC);
    }

    #[test]
    fn realtime_refuses_steps_and_is_monotonic() {
        let mut c = Clock::realtime();
        assert_eq!(c.mode(), ClockMode::Realtime);
        assert_eq!(c.advance(10), Err(ClockError::InvalidMode));
        let a = c.now();
        let b = c.now();
        assert!(b >= a);
        assert!(a > 1_500_000_000 * MICROS_PER_SEC);
    }

    #[test]
    fn identical_step_sequences_agree() {
        let steps = [3u64, 0, 17, 5000, 1, 99];
        let run = || {
            let mut c = Clock::virtual_at(42);
            steps.iter().map(|s| c.advance(*s).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn unit_conversions() {
        assert_eq!(ms_to_micros(50.0), 50_000);
        assert_eq!(secs_to_micros(0.005), 5_000);
        assert_eq!(micros_to_ms(1500), 1.5);
        assert_eq!(micros_to_secs(250_000), 0.25);
    }
}
