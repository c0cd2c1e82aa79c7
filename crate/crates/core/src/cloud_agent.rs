//! Cloud side: delay estimation, prediction and the tracking controller
//! behind the other end of the tunnel, plus the operator command surface.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bus::Bus;
use crate::controller::{ControlConfig, Controller};
use crate::math::Vec3;
use crate::predictor::{
    measure_tau, predict, AccelEstimator, DelayEstimate, DelayMode, DelaySample, PredictorError,
};
use crate::protocol::{Command, Response, StatusReport, TelemetryFrame};
use crate::time::{micros_to_ms, Clock, Micros};
use crate::types::Waypoint;
use crate::wire::{self, Message, StateMessage, TunnelEndpoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Sliding window length for the delay mean; 0 selects the cumulative mean.
    pub window: usize,
    /// Acceleration smoothing factor; 0 disables velocity propagation.
    pub accel_alpha: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { window: 50, accel_alpha: AccelEstimator::<f64>::DEFAULT_ALPHA }
    }
}

impl PredictorConfig {
    pub fn delay_mode(&self) -> DelayMode {
        match self.window {
            0 => DelayMode::Cumulative,
            n => DelayMode::Windowed(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudAgentConfig {
    pub control: ControlConfig<f64>,
    pub predictor: PredictorConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CloudCounters {
    pub states_received: u64,
    pub stale_states: u64,
    pub controls_sent: u64,
    pub decode_errors: u64,
    pub unexpected_messages: u64,
    pub clock_skew: u64,
    pub rejected_waypoints: u64,
}

/// One round-trip measurement as seen by the cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayRecord {
    pub t: Micros,
    pub tau_n: Micros,
    pub tau_hat_us: f64,
    pub echo_seq: u32,
    pub state_seq: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("waypoint rejected: non-finite value")]
pub struct WaypointRejected;

pub struct CloudAgent {
    cfg: CloudAgentConfig,
    delay: DelayEstimate<f64>,
    accel: AccelEstimator<f64>,
    controller: Controller<f64>,
    active_wp: Option<Waypoint<f64>>,
    pending_wp: Option<Waypoint<f64>>,
    waypoint_log: Vec<Waypoint<f64>>,
    latest: Option<StateMessage>,
    last_echo_seq: Option<u32>,
    tau_raw: Option<Micros>,
    next_control: Option<Micros>,
    counters: CloudCounters,
    telemetry: Vec<TelemetryFrame>,
    delay_log: Vec<DelayRecord>,
    bus: Option<Arc<Bus<TelemetryFrame>>>,
}

impl CloudAgent {
    pub fn new(cfg: CloudAgentConfig) -> Self {
        Self {
            delay: DelayEstimate::new(cfg.predictor.delay_mode()),
            accel: AccelEstimator::new(cfg.predictor.accel_alpha),
            controller: Controller::new(cfg.control),
            cfg,
            active_wp: None,
            pending_wp: None,
            waypoint_log: Vec::new(),
            latest: None,
            last_echo_seq: None,
            tau_raw: None,
            next_control: None,
            counters: CloudCounters::default(),
            telemetry: Vec::new(),
            delay_log: Vec::new(),
            bus: None,
        }
    }

    /// Publishes every telemetry frame on `bus` in addition to buffering it.
    pub fn with_bus(mut self, bus: Arc<Bus<TelemetryFrame>>) -> Self {
        self.bus = Some(bus);
        self
    }

    pub fn config(&self) -> &CloudAgentConfig {
        &self.cfg
    }

    pub fn counters(&self) -> CloudCounters {
        self.counters
    }

    pub fn delay_estimate(&self) -> &DelayEstimate<f64> {
        &self.delay
    }

    pub fn accel_estimate(&self) -> Vec3<f64> {
        self.accel.accel()
    }

    pub fn latest_state(&self) -> Option<&StateMessage> {
        self.latest.as_ref()
    }

    pub fn active_waypoint(&self) -> Option<&Waypoint<f64>> {
        self.active_wp.as_ref()
    }

    pub fn waypoint_log(&self) -> &[Waypoint<f64>] {
        &self.waypoint_log
    }

    pub fn next_control_time(&self) -> Option<Micros> {
        self.next_control
    }

    pub fn take_telemetry(&mut self) -> Vec<TelemetryFrame> {
        std::mem::take(&mut self.telemetry)
    }

    pub fn take_delay_records(&mut self) -> Vec<DelayRecord> {
        std::mem::take(&mut self.delay_log)
    }

    /// Queues `wp` as the reference from the next control tick on. The last
    /// waypoint set before a tick wins.
    pub fn set_waypoint(&mut self, wp: Waypoint<f64>) -> Result<(), WaypointRejected> {
        if !wp.is_finite() {
            self.counters.rejected_waypoints += 1;
            return Err(WaypointRejected);
        }
        self.pending_wp = Some(wp);
        self.waypoint_log.push(wp);
        Ok(())
    }

    pub fn status(&self) -> StatusReport {
        StatusReport {
            state_received: self.latest.is_some(),
            t: self.latest.map_or(0, |m| m.state.t),
            p_measured: self.latest.map_or(Vec3::zero(), |m| m.state.p),
            p_ref: self.pending_wp.or(self.active_wp).map(|w| w.p_ref),
            tau_hat_ms: self.delay.tau_hat_us() / 1000.0,
            states_received: self.counters.states_received,
            controls_sent: self.counters.controls_sent,
            decode_errors: self.counters.decode_errors,
        }
    }

    /// Handles the operator commands the agent owns (`waypoint`, `status`).
    pub fn apply_command(&mut self, cmd: &Command, t_now: Micros) -> Response {
        match cmd {
            Command::Waypoint { p, yaw } => match self.set_waypoint(Waypoint::new(*p, *yaw, t_now)) {
                Ok(()) => Response::Ok(format!("waypoint {} {} {} {}", p.x, p.y, p.z, yaw)),
                Err(e) => Response::Error(e.to_string()),
            },
            Command::Status => Response::Status(self.status()),
            Command::NetProfile(_) => Response::Error("netprofile is handled by the gateway".into()),
        }
    }

    fn ingest_state(&mut self, t_now: Micros, msg: StateMessage) {
        self.counters.states_received += 1;
        let echo = msg.ctrl_echo;
        let fresh_echo = !echo.is_none() && self.last_echo_seq.is_none_or(|last| echo.seq > last);
        if fresh_echo {
            let sample = match measure_tau(t_now, echo) {
                Ok(s) => s,
                Err(PredictorError::ClockSkew { .. }) => {
                    self.counters.clock_skew += 1;
                    Some(DelaySample { tau_n: 0, t_measured: t_now })
                }
                Err(_) => None,
            };
            if let Some(sample) = sample {
                let tau_hat_us = self.delay.update(sample);
                self.tau_raw = Some(sample.tau_n);
                self.last_echo_seq = Some(echo.seq);
                self.delay_log.push(DelayRecord {
                    t: t_now,
                    tau_n: sample.tau_n,
                    tau_hat_us,
                    echo_seq: echo.seq,
                    state_seq: msg.header.seq,
                });
            }
        }
        let newer = self.latest.is_none_or(|l| msg.state.t > l.state.t);
        if newer {
            let _ = self.accel.update(msg.state.v, msg.state.t);
            self.latest = Some(msg);
        } else {
            self.counters.stale_states += 1;
        }
    }

    fn control_step(&mut self, t_now: Micros) -> Option<Vec<u8>> {
        let latest = self.latest?;
        if let Some(wp) = self.pending_wp.take() {
            self.active_wp = Some(wp);
        }
        let wp = *self.active_wp.get_or_insert_with(|| {
            Waypoint::new(latest.state.p, latest.state.q.yaw(), t_now)
        });
        let horizon = if self.delay.n_samples() == 0 { 0.0 } else { self.delay.tau_hat_secs() };
        let predicted = predict(&latest.state, self.accel.accel(), horizon);
        let control = self.controller.track(&predicted, &wp, self.cfg.control.period_secs(), t_now);
        let frame = wire::encode_control(&control).ok()?;
        self.counters.controls_sent += 1;
        let telemetry = TelemetryFrame {
            t: t_now,
            p_measured: latest.state.p,
            p_predicted: predicted.p_hat,
            p_ref: wp.p_ref,
            v_cmd: control.v_cmd,
            tau_hat_ms: self.delay.tau_hat_us() / 1000.0,
            tau_raw_ms: self.tau_raw.map_or(0.0, micros_to_ms),
            state_seq: latest.header.seq,
            ctrl_seq: control.seq,
        };
        if let Some(bus) = &self.bus {
            bus.publish(&telemetry);
        }
        self.telemetry.push(telemetry);
        Some(frame)
    }

    /// Ingests state frames delivered at `t_now`, then runs the controller if
    /// a control period boundary has been reached and a state is available.
    pub fn tick<B: AsRef<[u8]>>(&mut self, t_now: Micros, inbound: &[B]) -> Vec<Vec<u8>> {
        for frame in inbound {
            match wire::decode(frame.as_ref()) {
                Ok(Message::State(m)) => self.ingest_state(t_now, m),
                Ok(Message::Control(_)) => self.counters.unexpected_messages += 1,
                Err(_) => self.counters.decode_errors += 1,
            }
        }
        let next = *self.next_control.get_or_insert(t_now);
        let mut out = Vec::new();
        if t_now >= next {
            out.extend(self.control_step(t_now));
            let period = self.cfg.control.period.max(1);
            let mut n = next;
            while n <= t_now {
                n += period;
            }
            self.next_control = Some(n);
        }
        out
    }
}

/// Work items for the realtime control thread.
pub enum AgentEvent {
    Datagram(Vec<u8>),
    Request { cmd: Command, reply: Sender<Response> },
}

/// Realtime wiring for [`run_realtime`].
pub struct CloudRuntime {
    pub endpoint: TunnelEndpoint,
    /// UDP control ports of the netem proxies that receive `netprofile` commands.
    pub netem_controls: Vec<SocketAddr>,
}

/// Handle for submitting operator commands to a running agent.
#[derive(Clone)]
pub struct AgentHandle {
    tx: Sender<AgentEvent>,
}

impl AgentHandle {
    pub fn request(&self, cmd: Command, timeout: Duration) -> Response {
        let (reply, rx) = mpsc::channel();
        if self.tx.send(AgentEvent::Request { cmd, reply }).is_err() {
            return Response::Error("agent stopped".into());
        }
        rx.recv_timeout(timeout).unwrap_or_else(|_| Response::Error("agent did not answer".into()))
    }
}

pub fn event_queue() -> (AgentHandle, Sender<AgentEvent>, Receiver<AgentEvent>) {
    let (tx, rx) = mpsc::channel();
    (AgentHandle { tx: tx.clone() }, tx, rx)
}

fn forward_netprofile(targets: &[SocketAddr], cmd: &Command) -> Response {
    if targets.is_empty() {
        return Response::Error("no netem proxy control port configured".into());
    }
    let sock = match UdpSocket::bind("127.0.0.1:0") {
        Ok(s) => s,
        Err(e) => return Response::Error(e.to_string()),
    };
    let _ = sock.set_read_timeout(Some(Duration::from_millis(500)));
    let line = cmd.to_line();
    let mut buf = [0u8; 256];
    for target in targets {
        if let Err(e) = sock.send_to(line.as_bytes(), target) {
            return Response::Error(format!("{target}: {e}"));
        }
        match sock.recv_from(&mut buf) {
            Ok((n, _)) if buf[..n].starts_with(b"ok") => {}
            Ok((n, _)) => return Response::Error(String::from_utf8_lossy(&buf[..n]).into_owned()),
            Err(e) => return Response::Error(format!("{target}: {e}")),
        }
    }
    Response::Ok(format!("{line} applied to {} proxies", targets.len()))
}

/// Runs the agent against a wall clock until `stop` is set. Datagrams and
/// operator requests arrive on one queue owned by the control thread.
pub fn run_realtime(
    mut agent: CloudAgent,
    runtime: CloudRuntime,
    events_tx: Sender<AgentEvent>,
    events: Receiver<AgentEvent>,
    stop: &AtomicBool,
) -> io::Result<CloudCounters> {
    let clock = Clock::realtime();
    let receiver = runtime.endpoint.try_clone()?;
    std::thread::scope(|scope| {
        scope.spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match receiver.recv_raw(Duration::from_millis(20)) {
                    Ok(Some((_, raw))) => {
                        if events_tx.send(AgentEvent::Datagram(raw)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => {}
                    Err(_) => std::thread::sleep(Duration::from_millis(1)),
                }
            }
        });
        let mut result = Ok(());
        let none: &[Vec<u8>] = &[];
        while !stop.load(Ordering::Relaxed) {
            let now = clock.now();
            let wait = agent.next_control_time().map_or(0, |t| t.saturating_sub(now)).clamp(200, 20_000);
            let outbound = match events.recv_timeout(Duration::from_micros(wait)) {
                Ok(AgentEvent::Datagram(raw)) => agent.tick(clock.now(), &[raw]),
                Ok(AgentEvent::Request { cmd, reply }) => {
                    let response = match cmd {
                        Command::NetProfile(_) => forward_netprofile(&runtime.netem_controls, &cmd),
                        other => agent.apply_command(&other, clock.now()),
                    };
                    let _ = reply.send(response);
                    agent.tick(clock.now(), none)
                }
                Err(RecvTimeoutError::Timeout) => agent.tick(clock.now(), none),
                Err(RecvTimeoutError::Disconnected) => break,
            };
            for frame in outbound {
                if let Err(e) = runtime.endpoint.send(&frame) {
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
    counters.decode_errors += runtime.endpoint.counters().decode_errors();
    Ok(counters)
}
