//! Domain values exchanged between the robot and cloud sides.

use serde::{Deserialize, Serialize};

use crate::math::{Quat, Scalar, Vec3};
use crate::time::Micros;

/// Position, velocity, orientation and body rates at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState<S> {
    pub t: Micros,
    pub p: Vec3<S>,
    pub v: Vec3<S>,
    pub q: Quat<S>,
    pub w: Vec3<S>,
}

impl<S: Scalar> RobotState<S> {
    pub fn at_rest(t: Micros, p: Vec3<S>) -> Self {
        Self { t, p, v: Vec3::zero(), q: Quat::identity(), w: Vec3::zero() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.v.is_finite() && self.q.is_finite() && self.w.is_finite()
    }
}

/// Velocity command stamped by the cloud when it was computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StampedControl<S> {
    pub t_origin: Micros,
    pub seq: u32,
    pub v_cmd: Vec3<S>,
    pub yaw_rate_cmd: S,
}

impl<S: Scalar> StampedControl<S> {
    pub fn is_finite(&self) -> bool {
        self.v_cmd.is_finite() && self.yaw_rate_cmd.is_finite()
    }

    pub fn echo(&self) -> ControlEcho {
        ControlEcho { t_origin: self.t_origin, seq: self.seq }
    }
}

/// The `(t_origin, seq)` of the last control the robot applied, returned
/// inside every state message. All zeros until a control has been applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControlEcho {
    pub t_origin: Micros,
    pub seq: u32,
}

impl ControlEcho {
    pub const NONE: ControlEcho = ControlEcho { t_origin: 0, seq: 0 };

    pub fn is_none(&self) -> bool {
        self.t_origin == 0
    }
}

/// Operator position/yaw reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint<S> {
    pub p_ref: Vec3<S>,
    pub yaw_ref: S,
    pub t_issued: Micros,
}

impl<S: Scalar> Waypoint<S> {
    pub fn new(p_ref: Vec3<S>, yaw_ref: S, t_issued: Micros) -> Self {
        Self { p_ref, yaw_ref, t_issued }
    }

    pub fn is_finite(&self) -> bool {
        self.p_ref.is_finite() && self.yaw_ref.is_finite()
    }
}
