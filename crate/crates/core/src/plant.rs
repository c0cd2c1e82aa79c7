//! Analytic stand-in for the simulated drone: a first-order velocity-tracking
//! inner loop, kinematic integration and noisy state sensing.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{quat_integrate, Scalar, Vec3};
use crate::time::{secs_to_micros, Micros};
use crate::types::{ControlEcho, RobotState, StampedControl};

/// Largest integration step accepted by [`PlantState::step`], seconds.
pub const MAX_STEP_SECS: f64 = 0.05;
/// Default integration step, seconds (200 Hz).
pub const DEFAULT_STEP_SECS: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("non-finite command rejected")]
    NonFiniteCommand,
    #[error("step {0} s outside (0, {MAX_STEP_SECS}]")]
    BadStep(f64),
    #[error("invalid plant parameter: {0}")]
    BadParam(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams<S> {
    /// Inner-loop velocity time constant, seconds.
    pub t_v: S,
    pub v_max: S,
    pub a_max: S,
    /// Per-axis standard deviation of position (m) and velocity (m/s) noise.
    pub sensor_noise_std: S,
}

impl<S: Scalar> Default for PlantParams<S> {
    fn default() -> Self {
        Self { t_v: S::of(0.15), v_max: S::of(2.0), a_max: S::of(5.0), sensor_noise_std: S::zero() }
    }
}

impl<S: Scalar> PlantParams<S> {
    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.t_v > S::zero()) {
            return Err(PlantError::BadParam("t_v must be > 0"));
        }
        if !(self.v_max > S::zero()) {
            return Err(PlantError::BadParam("v_max must be > 0"));
        }
        if !(self.a_max > S::zero()) {
            return Err(PlantError::BadParam("a_max must be > 0"));
        }
        if !(self.sensor_noise_std >= S::zero()) {
            return Err(PlantError::BadParam("sensor_noise_std must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState<S> {
    pub state: RobotState<S>,
    /// Active velocity setpoint held by the inner loop.
    pub v_set: Vec3<S>,
    pub yaw_rate_set: S,
    /// Last command accepted by [`llc_apply`](Self::llc_apply).
    pub last_applied: Option<StampedControl<S>>,
    pub rejected_commands: u64,
}

impl<S: Scalar> PlantState<S> {
    pub fn new(initial: RobotState<S>) -> Self {
        Self { state: initial, v_set: Vec3::zero(), yaw_rate_set: S::zero(), last_applied: None, rejected_commands: 0 }
    }

    /// `(t_origin, seq)` of the last applied control, zeros before any.
    pub fn echo(&self) -> ControlEcho {
        self.last_applied.map(|c| c.echo()).unwrap_or(ControlEcho::NONE)
    }

    /// Accepts a velocity command as the new setpoint, clamped in norm to `v_max`.
    pub fn llc_apply(&mut self, cmd: StampedControl<S>, params: &PlantParams<S>) -> Result<(), PlantError> {
        if !cmd.is_finite() {
            self.rejected_commands += 1;
            return Err(PlantError::NonFiniteCommand);
        }
        self.v_set = cmd.v_cmd.clamp_norm(params.v_max);
        self.yaw_rate_set = cmd.yaw_rate_cmd;
        self.last_applied = Some(cmd);
        Ok(())
    }

    /// Zeroes the setpoint (hover) without touching the echo.
    pub fn hold_hover(&mut self) {
        self.v_set = Vec3::zero();
        self.yaw_rate_set = S::zero();
    }

    /// One explicit Euler step of `dt` seconds.
    pub fn step(&mut self, dt: S, params: &PlantParams<S>) -> Result<(), PlantError> {
        if !(dt > S::zero() && dt <= S::of(MAX_STEP_SECS)) {
            return Err(PlantError::BadStep(dt.to_f64_lossy()));
        }
        let s = &mut self.state;
        let accel = ((self.v_set - s.v) / params.t_v).clamp_norm(params.a_max);
        s.v = (s.v + accel * dt).clamp_norm(params.v_max);
        s.p += s.v * dt;
        let w_set = Vec3::new(S::zero(), S::zero(), self.yaw_rate_set);
        s.w += (w_set - s.w) * (dt / params.t_v).min(S::one());
        s.q = quat_integrate(s.q, s.w, dt).expect("finite plant state");
        s.t += secs_to_micros(dt.to_f64_lossy());
        Ok(())
    }
}

/// Seeded additive Gaussian noise on sensed position and velocity.
#[derive(Debug, Clone)]
pub struct Sensor {
    rng: Pcg64,
}

impl Sensor {
    pub fn new(seed: u64) -> Self {
        Self { rng: Pcg64::seed_from_u64(seed) }
    }

    /// Snapshot of `plant` stamped `t_now`.
    pub fn sample<S: Scalar>(&mut self, plant: &PlantState<S>, t_now: Micros, noise_std: S) -> RobotState<S> {
        let mut out = plant.state;
        out.t = t_now;
        if noise_std > S::zero() {
            let normal = Normal::new(0.0, noise_std.to_f64_lossy()).expect("finite std");
            let mut noise = || -> Vec3<S> {
                Vec3::from_f64(normal.sample(&mut self.rng), normal.sample(&mut self.rng), normal.sample(&mut self.rng))
            };
            out.p += noise();
            out.v += noise();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(v: Vec3<f64>) -> StampedControl<f64> {
        StampedControl { t_origin: 10, seq: 3, v_cmd: v, yaw_rate_cmd: 0.0 }
    }

    fn rest() -> PlantState<f64> {
        PlantState::new(RobotState::at_rest(0, Vec3::zero()))
    }

    #[test]
    fn llc_clamps_to_v_max() {
        let mut p = rest();
        p.llc_apply(cmd(Vec3::new(3.0, 0.0, 0.0)), &PlantParams::default()).unwrap();
        assert_eq!(p.v_set, Vec3::new(2.0, 0.0, 0.0));
        p.llc_apply(cmd(Vec3::zero()), &PlantParams::default()).unwrap();
        assert_eq!(p.v_set, Vec3::zero());
        assert_eq!(p.echo(), ControlEcho { t_origin: 10, seq: 3 });
    }

    #[test]
    fn llc_rejects_non_finite_and_keeps_setpoint() {
        let mut p = rest();
        let params = PlantParams::default();
        p.llc_apply(cmd(Vec3::new(1.0, 0.0, 0.0)), &params).unwrap();
        let bad = StampedControl { t_origin: 20, seq: 4, v_cmd: Vec3::new(f64::NAN, 0.0, 0.0), yaw_rate_cmd: 0.0 };
        assert_eq!(p.llc_apply(bad, &params), Err(PlantError::NonFiniteCommand));
        assert_eq!(p.v_set, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(p.echo().seq, 3);
        assert_eq!(p.rejected_commands, 1);
    }

    #[test]
    fn equilibrium_is_unchanged() {
        let mut p = rest();
        let before = p.state;
        for _ in 0..100 {
            p.step(0.005, &PlantParams::default()).unwrap();
        }
        assert_eq!(p.state.p, before.p);
        assert_eq!(p.state.v, before.v);
        assert_eq!(p.state.q, before.q);
        assert_eq!(p.state.t, 500_000);
    }

    #[test]
    fn first_order_response_at_one_time_constant() {
        // The closed form has no acceleration limit; the default 5 m/s² would bind early.
        let params = PlantParams { a_max: 100.0, ..PlantParams::default() };
        let mut p = rest();
        p.llc_apply(cmd(Vec3::new(1.0, 0.0, 0.0)), &params).unwrap();
        for _ in 0..30 {
            p.step(0.005, &params).unwrap();
        }
        let exact = 1.0 - (-1.0f64).exp();
        assert!((p.state.v.x - exact).abs() / exact < 0.02, "{}", p.state.v.x);

        let limited = PlantParams::default();
        let mut q = rest();
        q.llc_apply(cmd(Vec3::new(1.0, 0.0, 0.0)), &limited).unwrap();
        q.step(0.005, &limited).unwrap();
        assert!((q.state.v.x - 5.0 * 0.005).abs() < 1e-15);
    }

    #[test]
    fn constant_velocity_integrates_exactly() {
        let params = PlantParams::default();
        let mut p = rest();
        p.state.v = Vec3::new(1.0, 0.0, 0.0);
        p.llc_apply(cmd(Vec3::new(1.0, 0.0, 0.0)), &params).unwrap();
        for _ in 0..200 {
            p.step(0.005, &params).unwrap();
        }
        assert!((p.state.p - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn rejects_out_of_range_steps() {
        let mut p = rest();
        let params = PlantParams::default();
        assert!(p.step(0.0, &params).is_err());
        assert!(p.step(0.051, &params).is_err());
        assert!(p.step(f64::NAN, &params).is_err());
        assert!(p.step(0.05, &params).is_ok());
    }

    #[test]
    fn acceleration_limit_applies() {
        let params = PlantParams { a_max: 1.0, ..PlantParams::default() };
        let mut p = rest();
        p.llc_apply(cmd(Vec3::new(2.0, 0.0, 0.0)), &params).unwrap();
        p.step(0.01, &params).unwrap();
        assert!((p.state.v.x - 0.01).abs() < 1e-15);
    }

    #[test]
    fn yaw_rate_turns_the_body() {
        let params = PlantParams::default();
        let mut p = rest();
        p.llc_apply(StampedControl { t_origin: 1, seq: 1, v_cmd: Vec3::zero(), yaw_rate_cmd: 0.5 }, &params)
            .unwrap();
        for _ in 0..400 {
            p.step(0.005, &params).unwrap();
        }
        assert!((p.state.w.z - 0.5).abs() < 1e-6);
        assert!(p.state.q.yaw() > 0.8);
        assert!((p.state.q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_sensor_is_exact_and_stamped() {
        let mut s = Sensor::new(1);
        let mut plant = rest();
        plant.state.p = Vec3::new(1.0, 2.0, 3.0);
        let out = s.sample(&plant, 777, 0.0);
        assert_eq!(out.t, 777);
        assert_eq!(out.p, plant.state.p);
        assert_eq!(out.v, plant.state.v);
    }

    #[test]
    fn sensor_noise_has_requested_spread() {
        let mut s = Sensor::new(9);
        let plant = rest();
        let xs: Vec<Vec3<f64>> = (0..10_000).map(|i| s.sample(&plant, i, 0.01).p).collect();
        for axis in 0..3 {
            let vals: Vec<f64> = xs.iter().map(|v| v.to_array()[axis]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            let std = var.sqrt();
            assert!((0.009..=0.011).contains(&std), "axis {axis}: {std}");
        }
    }

    #[test]
    fn single_precision_plant_runs() {
        let params = PlantParams::<f32>::default();
        let mut p = PlantState::new(RobotState::at_rest(0, Vec3::<f32>::zero()));
        p.llc_apply(StampedControl { t_origin: 1, seq: 1, v_cmd: Vec3::new(1.0, 0.0, 0.0), yaw_rate_cmd: 0.0 }, &params)
            .unwrap();
        for _ in 0..200 {
            p.step(0.005, &params).unwrap();
        }
        assert!(p.state.v.x > 0.99 && p.state.v.x <= 1.0);
    }
}
