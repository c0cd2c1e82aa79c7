//! Outer-loop PID waypoint tracker producing velocity commands.

use serde::{Deserialize, Serialize};

use crate::math::{wrap_angle, Scalar, Vec3};
use crate::predictor::PredictedState;
use crate::time::{micros_to_secs, Micros};
use crate::types::{StampedControl, Waypoint};

/// Diagonal gain matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains<S> {
    pub kp: Vec3<S>,
    pub ki: Vec3<S>,
    pub kd: Vec3<S>,
}

impl<S: Scalar> PidGains<S> {
    pub fn uniform(kp: S, ki: S, kd: S) -> Self {
        Self { kp: Vec3::splat(kp), ki: Vec3::splat(ki), kd: Vec3::splat(kd) }
    }

    pub fn is_valid(&self) -> bool {
        [self.kp, self.ki, self.kd]
            .iter()
            .all(|g| g.is_finite() && g.x >= S::zero() && g.y >= S::zero() && g.z >= S::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig<S> {
    pub gains: PidGains<S>,
    /// Output speed limit, m/s.
    pub v_max: S,
    /// Per-axis integrator bound, m·s.
    pub i_max: S,
    /// Control period, microseconds.
    pub period: Micros,
    /// Proportional gain on yaw error, 1/s.
    pub yaw_gain: S,
}

impl<S: Scalar> Default for ControlConfig<S> {
    fn default() -> Self {
        Self {
            gains: PidGains::uniform(S::of(2.0), S::of(1.0), S::of(0.05)),
            v_max: S::of(2.0),
            i_max: S::of(1.0),
            period: 20_000,
            yaw_gain: S::one(),
        }
    }
}

impl<S: Scalar> ControlConfig<S> {
    pub fn period_secs(&self) -> S {
        S::of(micros_to_secs(self.period))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState<S> {
    /// ∫e dt, m·s, clamped per axis to ±i_max.
    pub integral: Vec3<S>,
    pub prev_error: Option<Vec3<S>>,
    /// Low-pass filtered de/dt.
    pub derivative: Vec3<S>,
}

/// Reference minus predicted position.
pub fn position_error<S: Scalar>(p_hat: Vec3<S>, p_ref: Vec3<S>) -> Vec3<S> {
    p_ref - p_hat
}

/// Derivative low-pass time constant as a multiple of the step.
const DERIVATIVE_FILTER_STEPS: f64 = 4.0;

/// One PID update with a filtered derivative, integrator clamping and
/// conditional integration (the integrator is frozen while the output saturates).
pub fn pid_step<S: Scalar>(state: &mut PidState<S>, e: Vec3<S>, dt: S, cfg: &ControlConfig<S>) -> Vec3<S> {
    let g = &cfg.gains;
    let raw_derivative = match state.prev_error {
        Some(prev) => (e - prev) / dt,
        None => Vec3::zero(),
    };
    let tf = S::of(DERIVATIVE_FILTER_STEPS) * dt;
    let blend = dt / (tf + dt);
    let derivative = state.derivative + (raw_derivative - state.derivative) * blend;

    let output = |integral: Vec3<S>| g.kp.hadamard(e) + g.ki.hadamard(integral) + g.kd.hadamard(derivative);

    let candidate = (state.integral + e * dt).clamp_each(cfg.i_max);
    let unsaturated = output(candidate);
    let v_cmd = if unsaturated.norm() > cfg.v_max {
        output(state.integral).clamp_norm(cfg.v_max)
    } else {
        state.integral = candidate;
        unsaturated
    };

    state.prev_error = Some(e);
    state.derivative = derivative;
    v_cmd
}

/// Tracking controller: PID state plus the outgoing sequence counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller<S> {
    cfg: ControlConfig<S>,
    pid: PidState<S>,
    next_seq: u32,
}

impl<S: Scalar> Controller<S> {
    pub fn new(cfg: ControlConfig<S>) -> Self {
        Self { cfg, pid: PidState::default(), next_seq: 1 }
    }

    pub fn config(&self) -> &ControlConfig<S> {
        &self.cfg
    }

    pub fn set_config(&mut self, cfg: ControlConfig<S>) {
        self.cfg = cfg;
    }

    pub fn pid(&self) -> &PidState<S> {
        &self.pid
    }

    /// Computes and stamps the next velocity command toward `wp`.
    pub fn track(&mut self, predicted: &PredictedState<S>, wp: &Waypoint<S>, dt: S, t_now: Micros) -> StampedControl<S> {
        let e = position_error(predicted.p_hat, wp.p_ref);
        let v_cmd = pid_step(&mut self.pid, e, dt, &self.cfg);
        let yaw_rate_cmd = self.cfg.yaw_gain * wrap_angle(wp.yaw_ref - predicted.q_hat.yaw());
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1).max(1);
        StampedControl { t_origin: t_now, seq, v_cmd, yaw_rate_cmd }
    }
}
