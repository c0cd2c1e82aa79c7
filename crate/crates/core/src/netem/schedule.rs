use thiserror::Error;

use super::{NetworkProfile, ProfileError};
use crate::time::{ms_to_micros, Micros};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("schedule is empty")]
    Empty,
    #[error("switch times must be strictly increasing (at entry {0})")]
    NotIncreasing(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Profile { line: usize, source: ProfileError },
}

/// Time-ordered profile switch points. Before the first switch point the
/// first profile applies.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSchedule {
    switches: Vec<(Micros, NetworkProfile)>,
}

impl ProfileSchedule {
    pub fn constant(profile: NetworkProfile) -> Self {
        Self { switches: vec![(0, profile)] }
    }

    pub fn from_switches(switches: Vec<(Micros, NetworkProfile)>) -> Result<Self, ScheduleError> {
        if switches.is_empty() {
            return Err(ScheduleError::Empty);
        }
        if let Some(i) = switches.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(ScheduleError::NotIncreasing(i + 1));
        }
        Ok(Self { switches })
    }

    pub fn switches(&self) -> &[(Micros, NetworkProfile)] {
        &self.switches
    }

    pub fn profile_at(&self, t: Micros) -> NetworkProfile {
        let idx = self.switches.partition_point(|(start, _)| *start <= t);
        self.switches[idx.saturating_sub(1)].1
    }

    pub(crate) fn override_from(&mut self, t: Micros, profile: NetworkProfile) {
        self.switches.retain(|(start, _)| *start < t);
        self.switches.push((t, profile));
    }

    /// Shifts every switch point by `offset`, for schedules authored relative
    /// to a start time.
    pub fn offset_by(&self, offset: Micros) -> Self {
        Self { switches: self.switches.iter().map(|(t, p)| (t + offset, *p)).collect() }
    }
}

/// Parses `t_start_ms delay_ms jitter_ms loss` lines. Blank lines and `#`
/// comments are ignored.
pub fn parse_schedule(text: &str) -> Result<ProfileSchedule, ScheduleError> {
    let mut switches = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<f64> = content
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ScheduleError::Parse { line, msg: e.to_string() })?;
        let [t_ms, delay, jitter, loss] = fields[..] else {
            return Err(ScheduleError::Parse { line, msg: format!("expected 4 fields, got {}", fields.len()) });
        };
        if !t_ms.is_finite() || t_ms < 0.0 {
            return Err(ScheduleError::Parse { line, msg: "bad start time".into() });
        }
        let profile =
            NetworkProfile::from_ms(delay, jitter, loss).map_err(|source| ScheduleError::Profile { line, source })?;
        switches.push((ms_to_micros(t_ms), profile));
    }
    ProfileSchedule::from_switches(switches)
}
