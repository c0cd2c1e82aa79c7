//! Closed-loop delay estimation and dead-reckoning state prediction.
//!
//! The delay estimate is the running mean
//! `τ̂(k+1) = τ̂(k) + (τₙ − τ̂(k)) / (k+1)` with `τ̂(0) = 0`, or optionally the
//! mean over a sliding window. Prediction propagates the latest received
//! state over a horizon `τ`:
//!
//! ```text
//! p̂ = p + v·τ
//! v̂ = v + a·τ
//! q̂ = q ⊗ exp(½·w·τ)
//! ```

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{quat_integrate, Quat, Scalar, Vec3};
use crate::time::{micros_to_secs, Micros};
use crate::types::{ControlEcho, RobotState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredictorError {
    #[error("current time {t_now} precedes echoed control time {t_echo}")]
    ClockSkew { t_now: Micros, t_echo: Micros },
    #[error("non-increasing sample time {t} (previous {prev})")]
    NonIncreasingTime { t: Micros, prev: Micros },
}

/// One measured round trip `τₙ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelaySample {
    pub tau_n: Micros,
    pub t_measured: Micros,
}

/// Round trip from the echoed control stamp: `t_now − t_ctrl_echo`.
///
/// `Ok(None)` while the robot has not applied any control yet.
pub fn measure_tau(t_now: Micros, echo: ControlEcho) -> Result<Option<DelaySample>, PredictorError> {
    if echo.is_none() {
        return Ok(None);
    }
    if t_now < echo.t_origin {
        return Err(PredictorError::ClockSkew { t_now, t_echo: echo.t_origin });
    }
    Ok(Some(DelaySample { tau_n: t_now - echo.t_origin, t_measured: t_now }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayMode {
    /// Running mean over every sample.
    Cumulative,
    /// Mean over the last `n` samples.
    Windowed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayEstimate<S> {
    mode: DelayMode,
    /// Current estimate, microseconds.
    tau_hat: S,
    n_samples: u64,
    window: VecDeque<Micros>,
}

impl<S: Scalar> DelayEstimate<S> {
    pub fn cumulative() -> Self {
        Self::new(DelayMode::Cumulative)
    }

    /// Window lengths below one are treated as one.
    pub fn windowed(len: usize) -> Self {
        Self::new(DelayMode::Windowed(len.max(1)))
    }

    pub fn new(mode: DelayMode) -> Self {
        let mode = match mode {
            DelayMode::Windowed(n) => DelayMode::Windowed(n.max(1)),
            m => m,
        };
        Self { mode, tau_hat: S::zero(), n_samples: 0, window: VecDeque::new() }
    }

    pub fn mode(&self) -> DelayMode {
        self.mode
    }

    pub fn tau_hat_us(&self) -> S {
        self.tau_hat
    }

    pub fn tau_hat_secs(&self) -> S {
        self.tau_hat / S::of(1e6)
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    pub fn update(&mut self, sample: DelaySample) -> S {
        let tau_n = S::of(sample.tau_n as f64);
        match self.mode {
            DelayMode::Cumulative => {
                let k1 = S::of((self.n_samples + 1) as f64);
                self.tau_hat = self.tau_hat + (tau_n - self.tau_hat) / k1;
            }
            DelayMode::Windowed(len) => {
                self.window.push_back(sample.tau_n);
                while self.window.len() > len {
                    self.window.pop_front();
                }
                // Integer sum is exact, so the window mean carries no drift.
                let sum: u128 = self.window.iter().map(|t| *t as u128).sum();
                self.tau_hat = S::of(sum as f64) / S::of(self.window.len() as f64);
            }
        }
        self.n_samples += 1;
        self.tau_hat
    }
}

/// Smoothed finite-difference acceleration from successive velocity samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelEstimator<S> {
    alpha: S,
    prev: Option<(Vec3<S>, Micros)>,
    accel: Vec3<S>,
}

impl<S: Scalar> AccelEstimator<S> {
    pub const DEFAULT_ALPHA: f64 = 0.2;

    /// `alpha` in `[0, 1]`; zero disables the estimate entirely.
    pub fn new(alpha: S) -> Self {
        Self { alpha: alpha.max(S::zero()).min(S::one()), prev: None, accel: Vec3::zero() }
    }

    pub fn accel(&self) -> Vec3<S> {
        self.accel
    }

    /// `a = α·(v − v_prev)/Δt + (1 − α)·a_prev`. Zero until two samples are seen.
    pub fn update(&mut self, v: Vec3<S>, t: Micros) -> Result<Vec3<S>, PredictorError> {
        if let Some((v_prev, t_prev)) = self.prev {
            if t <= t_prev {
                return Err(PredictorError::NonIncreasingTime { t, prev: t_prev });
            }
            let dt = S::of(micros_to_secs(t - t_prev));
            let raw = (v - v_prev) / dt;
            self.accel = raw * self.alpha + self.accel * (S::one() - self.alpha);
        }
        self.prev = Some((v, t));
        Ok(self.accel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedState<S> {
    pub p_hat: Vec3<S>,
    pub v_hat: Vec3<S>,
    pub q_hat: Quat<S>,
    /// Seconds.
    pub horizon: S,
}

/// Propagates `state` forward by `horizon` seconds. Negative horizons are
/// treated as zero.
pub fn predict<S: Scalar>(state: &RobotState<S>, accel: Vec3<S>, horizon: S) -> PredictedState<S> {
    let h = horizon.max(S::zero());
    let q_hat = quat_integrate(state.q, state.w, h).unwrap_or(state.q);
    PredictedState { p_hat: state.p + state.v * h, v_hat: state.v + accel * h, q_hat, horizon: h }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(ms: u64) -> DelaySample {
        DelaySample { tau_n: ms * 1000, t_measured: 0 }
    }

    #[test]
    fn first_sample_sets_estimate() {
        let mut e = DelayEstimate::<f64>::cumulative();
        assert_eq!(e.tau_hat_us(), 0.0);
        assert_eq!(e.update(sample(40)), 40_000.0);
        assert_eq!(e.n_samples(), 1);
    }

    #[test]
    fn worked_sequence_matches_direct_mean() {
        let mut e = DelayEstimate::<f64>::cumulative();
        let seq: Vec<f64> = [40, 60, 50].iter().map(|ms| e.update(sample(*ms)) / 1000.0).collect();
        assert_eq!(seq, vec![40.0, 50.0, 50.0]);
    }

    #[test]
    fn windowed_forgets_old_samples() {
        let mut e = DelayEstimate::<f64>::windowed(2);
        e.update(sample(10));
        e.update(sample(20));
        assert_eq!(e.update(sample(40)), 30_000.0);
        assert_eq!(DelayEstimate::<f64>::windowed(0).mode(), DelayMode::Windowed(1));
    }

    #[test]
    fn measure_tau_cases() {
        let echo = ControlEcho { t_origin: 40_000, seq: 1 };
        assert_eq!(
            measure_tau(100_000, echo),
            Ok(Some(DelaySample { tau_n: 60_000, t_measured: 100_000 }))
        );
        assert_eq!(measure_tau(100_000, ControlEcho::NONE), Ok(None));
        assert_eq!(
            measure_tau(30_000, echo),
            Err(PredictorError::ClockSkew { t_now: 30_000, t_echo: 40_000 })
        );
    }

    fn state(p: Vec3<f64>, v: Vec3<f64>) -> RobotState<f64> {
        RobotState { t: 0, p, v, q: Quat::identity(), w: Vec3::zero() }
    }

    #[test]
    fn stationary_prediction_is_identity() {
        let s = state(Vec3::new(1.0, 2.0, 3.0), Vec3::zero());
        for h in [0.0, 0.1, 5.0] {
            assert_eq!(predict(&s, Vec3::zero(), h).p_hat, s.p);
        }
    }

    #[test]
    fn hand_evaluated_prediction() {
        let s = state(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.5, 0.0, -0.25));
        let out = predict(&s, Vec3::zero(), 0.2);
        assert!((out.p_hat - Vec3::new(1.1, 2.0, 2.95)).norm() < 1e-12);
        assert_eq!(out.v_hat, s.v);
    }

    #[test]
    fn zero_horizon_is_identity() {
        let mut s = state(Vec3::new(1.0, -1.0, 0.5), Vec3::new(0.3, 0.2, 0.1));
        s.q = Quat::from_yaw(0.4);
        s.w = Vec3::new(0.0, 0.0, 1.0);
        let out = predict(&s, Vec3::new(1.0, 1.0, 1.0), 0.0);
        assert_eq!((out.p_hat, out.v_hat, out.q_hat), (s.p, s.v, s.q));
    }

    #[test]
    fn prediction_propagates_velocity_and_orientation() {
        let mut s = state(Vec3::zero(), Vec3::new(1.0, 0.0, 0.0));
        s.w = Vec3::new(0.0, 0.0, std::f64::consts::PI);
        let out = predict(&s, Vec3::new(2.0, 0.0, 0.0), 0.5);
        assert!((out.v_hat.x - 2.0).abs() < 1e-15);
        assert!((out.q_hat.yaw() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn accel_estimator_cases() {
        let mut a = AccelEstimator::<f64>::new(1.0);
        assert_eq!(a.update(Vec3::zero(), 0).unwrap(), Vec3::zero());
        assert_eq!(a.update(Vec3::new(1.0, 0.0, 0.0), 1_000_000).unwrap(), Vec3::new(1.0, 0.0, 0.0));
        assert!(a.update(Vec3::zero(), 1_000_000).is_err());
        assert!(a.update(Vec3::zero(), 500_000).is_err());
    }

    #[test]
    fn accel_decays_to_zero_for_constant_velocity() {
        let mut a = AccelEstimator::<f64>::new(0.2);
        a.update(Vec3::zero(), 0).unwrap();
        a.update(Vec3::new(1.0, 0.0, 0.0), 10_000).unwrap();
        let mut out = Vec3::splat(1.0);
        for k in 2..400u64 {
            out = a.update(Vec3::new(1.0, 0.0, 0.0), k * 10_000).unwrap();
        }
        assert!(out.norm() < 1e-12, "{out:?}");
    }

    #[test]
    fn alpha_zero_disables_acceleration() {
        let mut a = AccelEstimator::<f64>::new(0.0);
        a.update(Vec3::zero(), 0).unwrap();
        assert_eq!(a.update(Vec3::new(5.0, 0.0, 0.0), 10_000).unwrap(), Vec3::zero());
    }
}
