//! Seeded delay/jitter/loss emulation for the uplink and downlink.
//!
//! Each packet independently draws a loss decision and a delay, so packets
//! can be reordered in flight, as with `tc netem` without a reorder queue.
//!
//! Sampling is reproducible across platforms. The generator is PCG64
//! (`Lcg128Xsl64`, seeded through `SeedableRng::seed_from_u64`), and every
//! packet consumes exactly two 64-bit outputs in this order:
//!
//! 1. loss: `(u >> 11) * 2^-53 < loss_prob` drops the packet;
//! 2. delay: `base - jitter + (u mod (2·jitter + 1))` microseconds, clamped at 0.

mod proxy;
mod schedule;

pub use proxy::{NetemProxy, ProxyConfig};
pub use schedule::{parse_schedule, ProfileSchedule, ScheduleError};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{ms_to_micros, Micros};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Robot to cloud (state messages).
    Uplink,
    /// Cloud to robot (control messages).
    Downlink,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("delay and jitter must be finite and non-negative")]
    BadDelay,
    #[error("loss probability {0} outside [0, 1]")]
    BadLoss(f64),
}

/// Per-direction channel characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub base_delay: Micros,
    pub jitter: Micros,
    pub loss_prob: f64,
}

impl NetworkProfile {
    pub const IDEAL: NetworkProfile = NetworkProfile { base_delay: 0, jitter: 0, loss_prob: 0.0 };

    pub fn from_ms(delay_ms: f64, jitter_ms: f64, loss_prob: f64) -> Result<Self, ProfileError> {
        if !(delay_ms.is_finite() && jitter_ms.is_finite()) || delay_ms < 0.0 || jitter_ms < 0.0 {
            return Err(ProfileError::BadDelay);
        }
        if !(0.0..=1.0).contains(&loss_prob) {
            return Err(ProfileError::BadLoss(loss_prob));
        }
        Ok(Self { base_delay: ms_to_micros(delay_ms), jitter: ms_to_micros(jitter_ms), loss_prob })
    }

    pub fn min_delay(&self) -> Micros {
        self.base_delay.saturating_sub(self.jitter)
    }

    pub fn max_delay(&self) -> Micros {
        self.base_delay + self.jitter
    }
}

/// Portable seeded source of loss decisions and delays.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    rng: Pcg64,
    draws: u64,
}

impl DelaySampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: Pcg64::seed_from_u64(seed), draws: 0 }
    }

    /// Number of 64-bit outputs consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    fn next(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform on `[base - jitter, base + jitter]`, clamped at zero.
    pub fn sample_delay(&mut self, profile: &NetworkProfile) -> Micros {
        let span = 2 * profile.jitter + 1;
        let offset = self.next() % span;
        (profile.base_delay + offset).saturating_sub(profile.jitter)
    }

    /// True when the packet should be dropped.
    pub fn sample_loss(&mut self, profile: &NetworkProfile) -> bool {
        let u = (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u < profile.loss_prob
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlightPacket {
    pub payload: Vec<u8>,
    pub t_enqueue: Micros,
    pub t_deliver: Micros,
    enqueue_index: u64,
}

impl InFlightPacket {
    pub fn delay(&self) -> Micros {
        self.t_deliver - self.t_enqueue
    }
}

// Min-heap order on (t_deliver, enqueue_index).
impl Ord for InFlightPacket {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t_deliver, other.enqueue_index).cmp(&(self.t_deliver, self.enqueue_index))
    }
}

impl PartialOrd for InFlightPacket {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Queued { t_deliver: Micros },
    Dropped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

/// One emulated direction: a profile schedule, a sampler and the packets in flight.
#[derive(Debug, Clone)]
pub struct Channel {
    direction: Direction,
    schedule: ProfileSchedule,
    sampler: DelaySampler,
    in_flight: BinaryHeap<InFlightPacket>,
    enqueued: u64,
    stats: ChannelStats,
}

impl Channel {
    pub fn new(direction: Direction, seed: u64, schedule: ProfileSchedule) -> Self {
        Self {
            direction,
            schedule,
            sampler: DelaySampler::new(seed),
            in_flight: BinaryHeap::new(),
            enqueued: 0,
            stats: ChannelStats::default(),
        }
    }

    pub fn with_profile(direction: Direction, seed: u64, profile: NetworkProfile) -> Self {
        Self::new(direction, seed, ProfileSchedule::constant(profile))
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn schedule(&self) -> &ProfileSchedule {
        &self.schedule
    }

    pub fn profile_at(&self, t: Micros) -> NetworkProfile {
        self.schedule.profile_at(t)
    }

    /// Replaces the schedule. Packets already in flight keep their delivery times.
    pub fn apply_profile_schedule(&mut self, schedule: ProfileSchedule) {
        self.schedule = schedule;
    }

    /// Switches to `profile` from `t` onwards, discarding later switch points.
    pub fn set_profile_from(&mut self, t: Micros, profile: NetworkProfile) {
        self.schedule.override_from(t, profile);
    }

    pub fn send(&mut self, payload: Vec<u8>, t_now: Micros) -> SendOutcome {
        let profile = self.schedule.profile_at(t_now);
        self.stats.sent += 1;
        let lost = self.sampler.sample_loss(&profile);
        let delay = self.sampler.sample_delay(&profile);
        if lost {
            self.stats.dropped += 1;
            return SendOutcome::Dropped;
        }
        let t_deliver = t_now + delay;
        self.in_flight.push(InFlightPacket { payload, t_enqueue: t_now, t_deliver, enqueue_index: self.enqueued });
        self.enqueued += 1;
        SendOutcome::Queued { t_deliver }
    }

    /// Removes and returns every packet due at or before `t_now`, in delivery order.
    pub fn poll(&mut self, t_now: Micros) -> Vec<InFlightPacket> {
        let mut out = Vec::new();
        while self.in_flight.peek().is_some_and(|p| p.t_deliver <= t_now) {
            out.push(self.in_flight.pop().expect("peeked"));
        }
        self.stats.delivered += out.len() as u64;
        out
    }

    pub fn next_delivery(&self) -> Option<Micros> {
        self.in_flight.peek().map(|p| p.t_deliver)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}
