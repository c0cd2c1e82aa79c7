//! Robot side: plant, inner loop and sensors behind one end of the tunnel.
//!
//! [`RobotAgent::tick`] is the unit of composition. The lockstep harness calls
//! it from its scheduler; [`run_realtime`] calls it from a socket loop.

use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::plant::{PlantError, PlantParams, PlantState, Sensor};
use crate::time::{micros_to_secs, Clock, Micros};
use crate::types::RobotState;
use crate::wire::{self, Message, TunnelEndpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotAgentConfig {
    pub plant: PlantParams<f64>,
    /// State publication period, µs.
    pub publish_period: Micros,
    /// Plant integration step, µs.
    pub step: Micros,
    /// Zero the setpoint after this long without a fresh control; `None` disables.
    pub failsafe_timeout: Option<Micros>,
    pub seed: u64,
    pub initial_position: Vec3<f64>,
}

impl Default for RobotAgentConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            publish_period: 10_000,
            step: 5_000,
            failsafe_timeout: Some(500_000),
            seed: 0,
            initial_position: Vec3::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RobotCounters {
    pub states_sent: u64,
    pub controls_applied: u64,
    pub stale_controls: u64,
    pub rejected_controls: u64,
    pub decode_errors: u64,
    pub unexpected_messages: u64,
    pub failsafe_trips: u64,
    pub encode_errors: u64,
}

#[derive(Debug, Clone)]
pub struct RobotAgent {
    cfg: RobotAgentConfig,
    plant: PlantState<f64>,
    sensor: Sensor,
    t_plant: Option<Micros>,
    next_publish: Micros,
    state_seq: u32,
    last_control_at: Option<Micros>,
    failsafe_active: bool,
    counters: RobotCounters,
}

impl RobotAgent {
    pub fn new(cfg: RobotAgentConfig) -> Result<Self, PlantError> {
        cfg.plant.validate()?;
        if cfg.publish_period == 0 {
            return Err(PlantError::BadParam("publish period must be > 0"));
        }
        if cfg.step == 0 || micros_to_secs(cfg.step) > crate::plant::MAX_STEP_SECS {
            return Err(PlantError::BadParam("plant step must be in (0, 50 ms]"));
        }
        let plant = PlantState::new(RobotState::at_rest(0, cfg.initial_position));
        Ok(Self {
            sensor: Sensor::new(cfg.seed),
            cfg,
            plant,
            t_plant: None,
            next_publish: 0,
            state_seq: 0,
            last_control_at: None,
            failsafe_active: false,
            counters: RobotCounters::default(),
        })
    }

    pub fn config(&self) -> &RobotAgentConfig {
        &self.cfg
    }

    pub fn plant(&self) -> &PlantState<f64> {
        &self.plant
    }

    pub fn counters(&self) -> RobotCounters {
        self.counters
    }

    /// Earliest time at which the agent has work to do.
    pub fn next_wakeup(&self) -> Option<Micros> {
        self.t_plant.map(|t| (t + self.cfg.step).min(self.next_publish))
    }

    fn advance_plant(&mut self, t_now: Micros) {
        let t_plant = self.t_plant.get_or_insert(t_now);
        while *t_plant < t_now {
            if let (Some(timeout), Some(last)) = (self.cfg.failsafe_timeout, self.last_control_at) {
                if !self.failsafe_active && *t_plant >= last + timeout {
                    self.plant.hold_hover();
                    self.failsafe_active = true;
                    self.counters.failsafe_trips += 1;
                }
            }
            let h = self.cfg.step.min(t_now - *t_plant);
            self.plant.step(micros_to_secs(h), &self.cfg.plant).expect("step within bounds");
            *t_plant += h;
        }
        self.plant.state.t = t_now;
    }

    fn ingest(&mut self, t_now: Micros, frame: &[u8]) {
        let control = match wire::decode(frame) {
            Ok(Message::Control(m)) => m.control,
            Ok(Message::State(_)) => {
                self.counters.unexpected_messages += 1;
                return;
            }
            Err(_) => {
                self.counters.decode_errors += 1;
                return;
            }
        };
        if self.plant.last_applied.is_some_and(|last| control.seq <= last.seq) {
            self.counters.stale_controls += 1;
            return;
        }
        match self.plant.llc_apply(control, &self.cfg.plant) {
            Ok(()) => {
                self.counters.controls_applied += 1;
                self.last_control_at = Some(t_now);
                self.failsafe_active = false;
            }
            Err(_) => self.counters.rejected_controls += 1,
        }
    }

    /// Integrates the plant up to `t_now` under the previous setpoint, applies
    /// the controls delivered at `t_now`, and emits a state frame when a
    /// publication boundary has been reached.
    pub fn tick<B: AsRef<[u8]>>(&mut self, t_now: Micros, inbound: &[B]) -> Vec<Vec<u8>> {
        if self.t_plant.is_none() {
            self.next_publish = t_now;
        }
        self.advance_plant(t_now);
        for frame in inbound {
            self.ingest(t_now, frame.as_ref());
        }
        let mut out = Vec::new();
        if t_now >= self.next_publish {
            let sensed = self.sensor.sample(&self.plant, t_now, self.cfg.plant.sensor_noise_std);
            self.state_seq = self.state_seq.wrapping_add(1);
            match wire::encode_state(&sensed, self.plant.echo(), self.state_seq, t_now) {
                Ok(frame) => {
                    out.push(frame);
                    self.counters.states_sent += 1;
                }
                Err(_) => self.counters.encode_errors += 1,
            }
            while self.next_publish <= t_now {
                self.next_publish += self.cfg.publish_period;
            }
        }
        out
    }
}

/// Runs the agent against a wall clock until `stop` is set. One thread
/// receives datagrams and feeds the simulation thread through a queue.
pub fn run_realtime(mut agent: RobotAgent, endpoint: TunnelEndpoint, stop: &AtomicBool) -> io::Result<RobotCounters> {
    let clock = Clock::realtime();
    let (tx, rx) = mpsc::channel::<Vec<u8>>();
    let receiver = endpoint.try_clone()?;
    std::thread::scope(|scope| {
        scope.spawn(|| {
            while !stop.load(Ordering::Relaxed) {
                match receiver.recv_raw(Duration::from_millis(20)) {
                    Ok(Some((_, raw))) => {
                        if tx.send(raw).is_err() {
                            break;
                        }
                    }
                    Ok(None) => {}
                    Err(_) => std::thread::sleep(Duration::from_millis(1)),
                }
            }
        });
        let mut result = Ok(());
        while !stop.load(Ordering::Relaxed) {
            let now = clock.now();
            let wait = agent.next_wakeup().map_or(0, |t| t.saturating_sub(now));
            let mut inbound = Vec::new();
            if let Ok(frame) = rx.recv_timeout(Duration::from_micros(wait.max(200))) {
                inbound.push(frame);
                inbound.extend(rx.try_iter());
            }
            for frame in agent.tick(clock.now(), &inbound) {
                if let Err(e) = endpoint.send(&frame) {
                    if e.kind() != io::ErrorKind::ConnectionRefused {
                        result = Err(e);
                        stop.store(true, Ordering::Relaxed);
                    }
                }
            }
        }
        result
    })?;
    let mut counters = agent.counters();
    counters.decode_errors += endpoint.counters().decode_errors();
    Ok(counters)
}
