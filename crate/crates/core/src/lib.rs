//! Desk-scale testbed for cloud-assisted control of an aerial robot over a
//! delayed, jittery UDP link.
//!
//! The math (plant, predictor, controller) is generic over [`Scalar`]; the
//! aliases below fix it to `f64`, which is what the wire format carries.

pub mod bus;
pub mod cloud_agent;
pub mod controller;
pub mod error;
pub mod harness;
pub mod math;
pub mod netem;
pub mod plant;
pub mod predictor;
pub mod protocol;
pub mod robot_agent;
pub mod time;
pub mod types;
pub mod wire;

pub use error::DomainError;
pub use math::{quat_integrate, Quat, Scalar, Vec3};
pub use time::{Clock, ClockMode, Micros};

pub type Vec3f = math::Vec3<f32>;
pub type Vec3d = math::Vec3<f64>;
pub type Quatf = math::Quat<f32>;
pub type Quatd = math::Quat<f64>;
pub type RobotState = types::RobotState<f64>;
pub type StampedControl = types::StampedControl<f64>;
pub type Waypoint = types::Waypoint<f64>;
pub type PlantParams = plant::PlantParams<f64>;
pub type PlantState = plant::PlantState<f64>;
pub type DelayEstimate = predictor::DelayEstimate<f64>;
pub type AccelEstimator = predictor::AccelEstimator<f64>;
pub type PredictedState = predictor::PredictedState<f64>;
pub type PidGains = controller::PidGains<f64>;
pub type PidState = controller::PidState<f64>;
pub type ControlConfig = controller::ControlConfig<f64>;
pub type Controller = controller::Controller<f64>;
