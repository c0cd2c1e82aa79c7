//! Controller properties, agent composition and prediction in closed loop.

use cloudbed_core::cloud_agent::{CloudAgent, CloudAgentConfig};
use cloudbed_core::controller::{pid_step, ControlConfig, Controller, PidGains, PidState};
use cloudbed_core::harness::scenario::{Gain, ProfileEntry, ScenarioConfig, WaypointEntry};
use cloudbed_core::harness::run_lockstep;
use cloudbed_core::plant::{PlantParams, PlantState};
use cloudbed_core::predictor::{measure_tau, predict, AccelEstimator, DelayEstimate};
use cloudbed_core::types::{ControlEcho, RobotState, StampedControl, Waypoint};
use cloudbed_core::wire::{self, Message};
use cloudbed_core::{Quat, Vec3};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

proptest! {
    #[test]
    fn output_norm_is_bounded(errors in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 1..50)) {
        let cfg = ControlConfig::<f64>::default();
        let mut s = PidState::default();
        for e in errors {
            let v = pid_step(&mut s, Vec3::from_array(e), 0.02, &cfg);
            prop_assert!(v.norm() <= cfg.v_max + 1e-12);
        }
    }
}

fn step_run(kp: f64, ki: f64, kd: f64, duration_s: f64) -> Vec<(u64, Vec3<f64>)> {
    let cfg = ScenarioConfig {
        duration_s,
        control: cloudbed_core::harness::scenario::ControlSection {
            kp: Gain::Uniform(kp),
            ki: Gain::Uniform(ki),
            kd: Gain::Uniform(kd),
            ..Default::default()
        },
        waypoints: vec![WaypointEntry { t_s: 0.0, x: 1.0, y: 0.0, z: 0.0, yaw: 0.0 }],
        ..ScenarioConfig::default()
    };
    run_lockstep(&cfg).unwrap().truth
}

#[test]
fn proportional_loop_does_not_overshoot() {
    let kp = ControlConfig::<f64>::default().gains.kp.x;
    assert!(kp * PlantParams::<f64>::default().t_v < 1.0);
    for gain in [0.5, 1.0, kp] {
        let truth = step_run(gain, 0.0, 0.0, 12.0);
        let peak = truth.iter().map(|(_, p)| p.x).fold(f64::MIN, f64::max);
        assert!(peak <= 1.05, "Kp {gain}: peak {peak}");
    }
}

#[test]
fn integral_action_removes_steady_state_error() {
    let d = ControlConfig::<f64>::default().gains;
    for ki in [d.ki.x, 0.5, 2.0] {
        let truth = step_run(d.kp.x, ki, d.kd.x, 30.0);
        let settled = truth.iter().filter(|(t, _)| *t >= 25_000_000);
        for (t, p) in settled {
            assert!((*p - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-3, "Ki {ki} at {t}: {p:?}");
        }
    }
}

/// Delay-free loop of controller and plant stepped together at `dt`.
fn direct_loop(dt: f64, until: f64) -> Vec<f64> {
    let cfg = ControlConfig::<f64>::default();
    let params = PlantParams::default();
    let mut ctl = PidState::default();
    let mut plant = PlantState::new(RobotState::at_rest(0, Vec3::zero()));
    let target = Vec3::new(1.0, 0.0, 0.0);
    let mut xs = Vec::new();
    let n = (until / dt).round() as usize;
    let every = (0.04 / dt).round() as usize;
    for k in 0..n {
        if k % every == 0 {
            xs.push(plant.state.p.x);
        }
        let v = pid_step(&mut ctl, target - plant.state.p, dt, &cfg);
        plant.llc_apply(StampedControl { t_origin: k as u64 + 1, seq: k as u32 + 1, v_cmd: v, yaw_rate_cmd: 0.0 }, &params).unwrap();
        plant.step(dt, &params).unwrap();
    }
    xs
}

#[test]
fn halving_the_period_converges_linearly() {
    let a = direct_loop(0.02, 4.0);
    let b = direct_loop(0.01, 4.0);
    let c = direct_loop(0.005, 4.0);
    let gap = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let (g1, g2) = (gap(&a, &b), gap(&b, &c));
    let ratio = g1 / g2;
    assert!((1.5..=3.0).contains(&ratio), "{g1} {g2} {ratio}");
    assert_eq!(direct_loop(0.01, 4.0), b);
}

/// Applies the predictor and controller operations directly to a message trace.
struct Oracle {
    delay: DelayEstimate<f64>,
    accel: AccelEstimator<f64>,
    ctl: Controller<f64>,
    latest: Option<RobotState<f64>>,
    last_echo: Option<u32>,
    cfg: CloudAgentConfig,
}

impl Oracle {
    fn ingest(&mut self, t_now: u64, state: RobotState<f64>, echo: ControlEcho) {
        if !echo.is_none() && self.last_echo.is_none_or(|l| echo.seq > l) {
            let s = measure_tau(t_now, echo).unwrap().unwrap();
            self.delay.update(s);
            self.last_echo = Some(echo.seq);
        }
        if self.latest.is_none_or(|l| state.t > l.t) {
            self.accel.update(state.v, state.t).unwrap();
            self.latest = Some(state);
        }
    }

    fn control(&mut self, t_now: u64, wp: &Waypoint<f64>) -> StampedControl<f64> {
        let h = if self.delay.n_samples() == 0 { 0.0 } else { self.delay.tau_hat_secs() };
        let predicted = predict(&self.latest.unwrap(), self.accel.accel(), h);
        self.ctl.track(&predicted, wp, self.cfg.control.period_secs(), t_now)
    }
}

#[test]
fn cloud_tick_is_the_composition_of_its_parts() {
    let cfg = CloudAgentConfig::default();
    let mut agent = CloudAgent::new(cfg);
    let mut oracle = Oracle {
        delay: DelayEstimate::new(cfg.predictor.delay_mode()),
        accel: AccelEstimator::new(cfg.predictor.accel_alpha),
        ctl: Controller::new(cfg.control),
        latest: None,
        last_echo: None,
        cfg,
    };
    let wp = Waypoint::new(Vec3::new(2.0, -1.0, 1.5), 0.4, 0);
    let mut rng = Pcg64::seed_from_u64(11);
    let mut sent: Vec<u64> = Vec::new();
    let mut t = 0u64;
    let mut state_seq = 0u32;
    let mut compared = 0;
    for step in 0..3000u32 {
        t += 5_000;
        // States arrive every 10 ms, echoing a control sent 40-80 ms earlier.
        if step % 2 == 0 {
            state_seq += 1;
            let echo = sent
                .iter()
                .enumerate()
                .rev()
                .find(|(_, &t0)| t0 + rng.random_range(40_000..80_000) <= t)
                .map_or(ControlEcho::NONE, |(i, &t0)| ControlEcho { t_origin: t0, seq: i as u32 + 1 });
            let state = RobotState {
                t: t - rng.random_range(20_000..40_000u64).min(t),
                p: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0),
                v: Vec3::new(rng.random_range(-1.0..1.0), 0.0, rng.random_range(-0.5..0.5)),
                q: Quat::from_yaw(rng.random_range(-3.0..3.0)),
                w: Vec3::new(0.0, 0.0, rng.random_range(-0.5..0.5)),
            };
            let frame = wire::encode_state(&state, echo, state_seq, state.t).unwrap();
            let Message::State(decoded) = wire::decode(&frame).unwrap() else { unreachable!() };
            oracle.ingest(t, decoded.state, decoded.ctrl_echo);
            if step == 0 {
                agent.set_waypoint(wp).unwrap();
            }
            let out = agent.tick(t, &[frame]);
            check(&out, &mut oracle, t, &wp, &mut sent, &mut compared);
        } else {
            let out = agent.tick(t, &[] as &[Vec<u8>]);
            check(&out, &mut oracle, t, &wp, &mut sent, &mut compared);
        }
    }
    assert_eq!(compared, 750);
}

fn check(out: &[Vec<u8>], oracle: &mut Oracle, t: u64, wp: &Waypoint<f64>, sent: &mut Vec<u64>, n: &mut usize) {
    for frame in out {
        let Message::Control(m) = wire::decode(frame).unwrap() else { panic!() };
        let expected = oracle.control(t, wp);
        assert_eq!(m.control, expected, "t={t}");
        sent.push(t);
        *n += 1;
    }
}

fn link(delay_ms: f64) -> Vec<ProfileEntry> {
    vec![ProfileEntry { t_start_ms: 0.0, delay_ms, jitter_ms: 0.0, loss: 0.0 }]
}

#[test]
fn prediction_tracks_truth_at_constant_round_trip() {
    // 20 ms up, 30 ms down: controls land on publication instants, so the
    // measured round trip is exactly the 50 ms network delay.
    let cfg = ScenarioConfig {
        duration_s: 8.0,
        uplink: link(20.0),
        downlink: link(30.0),
        waypoints: vec![WaypointEntry { t_s: 0.0, x: 40.0, y: 0.0, z: 0.0, yaw: 0.0 }],
        ..ScenarioConfig::default()
    };
    let art = run_lockstep(&cfg).unwrap();
    assert!(art.delay_trace.iter().all(|d| d.tau_raw_ms == 50.0));
    let truth_at = |t_us: u64| art.truth.iter().find(|(t, _)| *t == t_us).map(|(_, p)| *p).unwrap();
    let mut checked = 0;
    for row in art.telemetry.iter().filter(|r| r.t_ms >= 3000.0 && r.t_ms <= 7000.0) {
        let t = (row.t_ms * 1000.0).round() as u64;
        // The state used at t left the robot at t − 20 ms; the control acts at t + 30 ms.
        let target = truth_at(t + 30_000);
        let v = 2.0;
        assert!((row.estimated() - target).norm() <= 1e-3, "t={t}: {:?} vs {target:?}", row.estimated());
        let lag = (row.measured() - target).norm();
        assert!((lag - v * 0.05).abs() <= 1e-3, "lag {lag}");
        checked += 1;
    }
    assert!(checked > 150);
}

#[test]
fn symmetric_constant_delay_adds_publication_wait() {
    let cfg = ScenarioConfig {
        duration_s: 5.0,
        uplink: link(25.0),
        downlink: link(25.0),
        waypoints: vec![WaypointEntry { t_s: 1.0, x: 1.0, y: 0.0, z: 0.0, yaw: 0.0 }],
        ..ScenarioConfig::default()
    };
    let art = run_lockstep(&cfg).unwrap();
    assert!(!art.delay_trace.is_empty());
    for d in &art.delay_trace {
        assert_eq!(d.rtt_net_ms, Some(50.0));
        // Controls land 5 ms before the next 10 ms publication.
        assert_eq!(d.tau_raw_ms, 55.0);
    }
}

#[test]
fn new_waypoint_spikes_then_decays() {
    let cfg = ScenarioConfig {
        duration_s: 16.0,
        uplink: link(50.0),
        downlink: link(50.0),
        waypoints: vec![
            WaypointEntry { t_s: 1.0, x: 1.0, y: 0.0, z: 1.0, yaw: 0.0 },
            WaypointEntry { t_s: 8.0, x: 1.0, y: 1.0, z: 1.0, yaw: 0.0 },
        ],
        ..ScenarioConfig::default()
    };
    let art = run_lockstep(&cfg).unwrap();
    let err = |t_lo: f64, t_hi: f64| {
        art.telemetry
            .iter()
            .filter(|r| r.t_ms >= t_lo && r.t_ms < t_hi)
            .map(|r| (r.reference() - r.measured()).norm())
            .fold(0.0, f64::max)
    };
    assert!(err(7000.0, 8000.0) < 0.05);
    assert!(err(8000.0, 8200.0) > 0.9);
    assert!(err(15000.0, 16000.0) < 0.05);
}

#[test]
fn plant_gains_configurable_per_axis() {
    let g = PidGains { kp: Vec3::new(1.0, 2.0, 3.0), ki: Vec3::zero(), kd: Vec3::zero() };
    let cfg = ControlConfig { gains: g, v_max: 100.0, ..ControlConfig::default() };
    let mut s = PidState::default();
    assert_eq!(pid_step(&mut s, Vec3::new(1.0, 1.0, 1.0), 0.02, &cfg), Vec3::new(1.0, 2.0, 3.0));
}
