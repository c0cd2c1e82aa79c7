//! Scenario files: one TOML document fully determines a run.
//!
//! ```toml
//! version = 1
//! name = "step"
//! duration_s = 20.0
//! output_dir = "out/step"
//!
//! [seeds]        # uplink, downlink, sensor
//! [plant]        # t_v, v_max, a_max, sensor_noise_std, step_ms
//! [robot]        # publish_period_ms, failsafe_ms (0 disables), initial_position
//! [control]      # kp, ki, kd (scalar or [x, y, z]), v_max, i_max, period_ms, yaw_gain
//! [predictor]    # window (0 = cumulative mean), accel_alpha
//!
//! [[uplink]]     # t_start_ms, delay_ms, jitter_ms, loss
//! [[downlink]]
//! [[waypoints]]  # t_s, x, y, z, yaw
//!
//! [realtime]     # socket addresses for multi-process runs
//! ```
//!
//! Every table is optional; missing fields take the defaults shown by
//! [`ScenarioConfig::default`].

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_agent::{CloudAgentConfig, PredictorConfig};
use crate::controller::{ControlConfig, PidGains};
use crate::math::Vec3;
use crate::netem::{NetworkProfile, ProfileError, ProfileSchedule, ScheduleError};
use crate::plant::PlantParams;
use crate::robot_agent::RobotAgentConfig;
use crate::time::{ms_to_micros, secs_to_micros, Micros};
use crate::types::Waypoint;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{direction} schedule: {source}")]
    Schedule { direction: &'static str, source: ScheduleError },
    #[error("{direction} profile: {source}")]
    Profile { direction: &'static str, source: ProfileError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Uniform(f64),
    PerAxis([f64; 3]),
}

impl Gain {
    fn to_vec(self) -> Vec3<f64> {
        match self {
            Gain::Uniform(g) => Vec3::splat(g),
            Gain::PerAxis(a) => Vec3::from_array(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub uplink: u64,
    pub downlink: u64,
    pub sensor: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { uplink: 1, downlink: 2, sensor: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub t_v: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub sensor_noise_std: f64,
    pub step_ms: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PlantParams::<f64>::default();
        Self { t_v: p.t_v, v_max: p.v_max, a_max: p.a_max, sensor_noise_std: p.sensor_noise_std, step_ms: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotSection {
    pub publish_period_ms: f64,
    pub failsafe_ms: f64,
    pub initial_position: [f64; 3],
}

impl Default for RobotSection {
    fn default() -> Self {
        Self { publish_period_ms: 10.0, failsafe_ms: 500.0, initial_position: [0.0, 0.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub kp: Gain,
    pub ki: Gain,
    pub kd: Gain,
    pub v_max: f64,
    pub i_max: f64,
    pub period_ms: f64,
    pub yaw_gain: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        let c = ControlConfig::<f64>::default();
        Self {
            kp: Gain::Uniform(c.gains.kp.x),
            ki: Gain::Uniform(c.gains.ki.x),
            kd: Gain::Uniform(c.gains.kd.x),
            v_max: c.v_max,
            i_max: c.i_max,
            period_ms: c.period as f64 / 1000.0,
            yaw_gain: c.yaw_gain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    #[serde(default)]
    pub t_start_ms: f64,
    pub delay_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointEntry {
    pub t_s: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RealtimeSection {
    pub robot: SocketAddr,
    pub cloud: SocketAddr,
    pub uplink_proxy: SocketAddr,
    pub downlink_proxy: SocketAddr,
    pub uplink_control: SocketAddr,
    pub downlink_control: SocketAddr,
    pub gateway: SocketAddr,
}

impl Default for RealtimeSection {
    fn default() -> Self {
        let a = |port: u16| SocketAddr::from(([127, 0, 0, 1], port));
        Self {
            robot: a(crate::wire::DEFAULT_ROBOT_PORT),
            cloud: a(crate::wire::DEFAULT_CLOUD_PORT),
            uplink_proxy: a(crate::wire::DEFAULT_UPLINK_PROXY_PORT),
            downlink_proxy: a(crate::wire::DEFAULT_DOWNLINK_PROXY_PORT),
            uplink_control: a(47012),
            downlink_control: a(47013),
            gateway: a(47080),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    pub duration_s: f64,
    pub output_dir: PathBuf,
    pub seeds: Seeds,
    pub plant: PlantSection,
    pub robot: RobotSection,
    pub control: ControlSection,
    pub predictor: PredictorConfig,
    pub uplink: Vec<ProfileEntry>,
    pub downlink: Vec<ProfileEntry>,
    pub waypoints: Vec<WaypointEntry>,
    pub realtime: RealtimeSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            version: SCENARIO_VERSION,
            name: "scenario".into(),
            duration_s: 10.0,
            output_dir: PathBuf::from("out"),
            seeds: Seeds::default(),
            plant: PlantSection::default(),
            robot: RobotSection::default(),
            control: ControlSection::default(),
            predictor: PredictorConfig::default(),
            uplink: Vec::new(),
            downlink: Vec::new(),
            waypoints: Vec::new(),
            realtime: RealtimeSection::default(),
        }
    }
}

fn schedule(direction: &'static str, entries: &[ProfileEntry]) -> Result<ProfileSchedule, ScenarioError> {
    if entries.is_empty() {
        return Ok(ProfileSchedule::constant(NetworkProfile::IDEAL));
    }
    let switches = entries
        .iter()
        .map(|e| {
            let p = NetworkProfile::from_ms(e.delay_ms, e.jitter_ms, e.loss)
                .map_err(|source| ScenarioError::Profile { direction, source })?;
            Ok((ms_to_micros(e.t_start_ms), p))
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    ProfileSchedule::from_switches(switches).map_err(|source| ScenarioError::Schedule { direction, source })
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_owned(), source })?;
        Self::from_toml(&text)
    }

    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid("duration_s must be > 0");
        }
        if !(self.control.period_ms > 0.0) {
            return invalid("control.period_ms must be > 0");
        }
        if !(self.robot.publish_period_ms > 0.0) {
            return invalid("robot.publish_period_ms must be > 0");
        }
        if !(self.plant.step_ms > 0.0 && self.plant.step_ms <= 50.0) {
            return invalid("plant.step_ms must be in (0, 50]");
        }
        self.plant_params().validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if !self.gains().is_valid() {
            return invalid("gains must be finite and >= 0");
        }
        if !(self.control.v_max > 0.0 && self.control.i_max >= 0.0) {
            return invalid("control.v_max must be > 0 and i_max >= 0");
        }
        if !(0.0..=1.0).contains(&self.predictor.accel_alpha) {
            return invalid("predictor.accel_alpha must be in [0, 1]");
        }
        schedule("uplink", &self.uplink)?;
        schedule("downlink", &self.downlink)?;
        if self.waypoints.windows(2).any(|w| w[1].t_s < w[0].t_s) {
            return invalid("waypoints must be time-ordered");
        }
        for w in &self.waypoints {
            if ![w.t_s, w.x, w.y, w.z, w.yaw].iter().all(|v| v.is_finite()) || w.t_s < 0.0 {
                return invalid("waypoint values must be finite and t_s >= 0");
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> Micros {
        secs_to_micros(self.duration_s)
    }

    pub fn plant_params(&self) -> PlantParams<f64> {
        PlantParams {
            t_v: self.plant.t_v,
            v_max: self.plant.v_max,
            a_max: self.plant.a_max,
            sensor_noise_std: self.plant.sensor_noise_std,
        }
    }

    pub fn gains(&self) -> PidGains<f64> {
        PidGains { kp: self.control.kp.to_vec(), ki: self.control.ki.to_vec(), kd: self.control.kd.to_vec() }
    }

    pub fn robot_config(&self) -> RobotAgentConfig {
        RobotAgentConfig {
            plant: self.plant_params(),
            publish_period: ms_to_micros(self.robot.publish_period_ms),
            step: ms_to_micros(self.plant.step_ms),
            failsafe_timeout: (self.robot.failsafe_ms > 0.0).then(|| ms_to_micros(self.robot.failsafe_ms)),
            seed: self.seeds.sensor,
            initial_position: Vec3::from_array(self.robot.initial_position),
        }
    }

    pub fn control_config(&self) -> ControlConfig<f64> {
        ControlConfig {
            gains: self.gains(),
            v_max: self.control.v_max,
            i_max: self.control.i_max,
            period: ms_to_micros(self.control.period_ms),
            yaw_gain: self.control.yaw_gain,
        }
    }

    pub fn cloud_config(&self) -> CloudAgentConfig {
        CloudAgentConfig { control: self.control_config(), predictor: self.predictor }
    }

    pub fn uplink_schedule(&self) -> ProfileSchedule {
        schedule("uplink", &self.uplink).expect("validated")
    }

    pub fn downlink_schedule(&self) -> ProfileSchedule {
        schedule("downlink", &self.downlink).expect("validated")
    }

    /// Operator waypoints with their issue times.
    pub fn waypoint_schedule(&self) -> Vec<Waypoint<f64>> {
        self.waypoints
            .iter()
            .map(|w| Waypoint::new(Vec3::new(w.x, w.y, w.z), w.yaw, secs_to_micros(w.t_s)))
            .collect()
    }

    /// Schedule in the `t_start_ms delay_ms jitter_ms loss` line format read by `netem-proxy`.
    pub fn schedule_file(entries: &[ProfileEntry]) -> String {
        let mut out = String::from("# t_start_ms delay_ms jitter_ms loss\n");
        if entries.is_empty() {
            out.push_str("0 0 0 0\n");
        }
        for e in entries {
            out.push_str(&format!("{} {} {} {}\n", e.t_start_ms, e.delay_ms, e.jitter_ms, e.loss));
        }
        out
    }
}
