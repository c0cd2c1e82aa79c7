//! Line-oriented text protocol spoken by the teleoperation gateway.
//!
//! Commands (one per line):
//!
//! ```text
//! waypoint <x> <y> <z> <yaw>
//! netprofile <delay_ms> <jitter_ms> <loss>
//! status
//! ```
//!
//! Replies are `ok <message>`, `err <message>` or a `status` record.
//! Telemetry and status records are `<kind> v=1 key=value ...` with the keys
//! listed in [`TelemetryFrame::FIELDS`] and [`StatusReport`].

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::math::Vec3;
use crate::netem::{NetworkProfile, ProfileError};
use crate::time::Micros;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("empty command")]
    Empty,
    #[error("unknown command `{0}`")]
    Unknown(String),
    #[error("`{cmd}` expects {expected} arguments, got {got}")]
    Arity { cmd: &'static str, expected: usize, got: usize },
    #[error("bad number `{0}`")]
    Number(String),
    #[error("non-finite waypoint")]
    NonFinite,
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("record kind `{got}`, expected `{expected}`")]
    Kind { expected: &'static str, got: String },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unsupported record version {0}")]
    Version(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Waypoint { p: Vec3<f64>, yaw: f64 },
    NetProfile(NetworkProfile),
    Status,
}

fn numbers(args: &[&str]) -> Result<Vec<f64>, ProtocolError> {
    args.iter()
        .map(|a| a.parse::<f64>().map_err(|_| ProtocolError::Number((*a).to_string())))
        .collect()
}

impl Command {
    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or(ProtocolError::Empty)?;
        let args: Vec<&str> = parts.collect();
        let arity = |cmd: &'static str, expected: usize| {
            if args.len() == expected {
                Ok(())
            } else {
                Err(ProtocolError::Arity { cmd, expected, got: args.len() })
            }
        };
        match name {
            "waypoint" => {
                arity("waypoint", 4)?;
                let n = numbers(&args)?;
                if !n.iter().all(|v| v.is_finite()) {
                    return Err(ProtocolError::NonFinite);
                }
                Ok(Command::Waypoint { p: Vec3::new(n[0], n[1], n[2]), yaw: n[3] })
            }
            "netprofile" => {
                arity("netprofile", 3)?;
                let n = numbers(&args)?;
                Ok(Command::NetProfile(NetworkProfile::from_ms(n[0], n[1], n[2])?))
            }
            "status" => {
                arity("status", 0)?;
                Ok(Command::Status)
            }
            other => Err(ProtocolError::Unknown(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Waypoint { .. } => "waypoint",
            Command::NetProfile(_) => "netprofile",
            Command::Status => "status",
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Command::Waypoint { p, yaw } => format!("waypoint {} {} {} {}", p.x, p.y, p.z, yaw),
            Command::NetProfile(pr) => format!(
                "netprofile {} {} {}",
                pr.base_delay as f64 / 1000.0,
                pr.jitter as f64 / 1000.0,
                pr.loss_prob
            ),
            Command::Status => "status".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ok(String),
    Error(String),
    Status(StatusReport),
}

impl Response {
    pub fn to_line(&self) -> String {
        match self {
            Response::Ok(m) => format!("ok {m}"),
            Response::Error(m) => format!("err {m}"),
            Response::Status(s) => s.to_record(),
        }
    }

    pub fn is_ok(&self) -> bool {
        !matches!(self, Response::Error(_))
    }
}

/// Snapshot answered to `status`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatusReport {
    pub state_received: bool,
    pub t: Micros,
    pub p_measured: Vec3<f64>,
    pub p_ref: Option<Vec3<f64>>,
    pub tau_hat_ms: f64,
    pub states_received: u64,
    pub controls_sent: u64,
    pub decode_errors: u64,
}

impl StatusReport {
    pub fn to_record(&self) -> String {
        let mut r = Record::new("status");
        r.push("state", if self.state_received { "received" } else { "none" });
        r.push("t_us", self.t);
        r.push_vec("p", self.p_measured);
        match self.p_ref {
            Some(p) => r.push_vec("r", p),
            None => r.push("r", "none"),
        }
        r.push("tau_hat_ms", self.tau_hat_ms);
        r.push("states", self.states_received);
        r.push("controls", self.controls_sent);
        r.push("decode_errors", self.decode_errors);
        r.finish()
    }
}

/// One control-cycle snapshot published by the cloud agent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TelemetryFrame {
    pub t: Micros,
    /// Latest received (delayed) position.
    pub p_measured: Vec3<f64>,
    pub p_predicted: Vec3<f64>,
    pub p_ref: Vec3<f64>,
    pub v_cmd: Vec3<f64>,
    pub tau_hat_ms: f64,
    /// Most recent raw round-trip sample; 0 before the first echo.
    pub tau_raw_ms: f64,
    pub state_seq: u32,
    pub ctrl_seq: u32,
}

impl TelemetryFrame {
    pub const FIELDS: [&'static str; 18] = [
        "t_us", "px", "py", "pz", "phx", "phy", "phz", "rx", "ry", "rz", "vcx", "vcy", "vcz", "tau_hat_ms",
        "tau_raw_ms", "state_seq", "ctrl_seq", "v",
    ];

    pub fn to_record(&self) -> String {
        let mut r = Record::new("telemetry");
        r.push("t_us", self.t);
        r.push_vec("p", self.p_measured);
        r.push_vec("ph", self.p_predicted);
        r.push_vec("r", self.p_ref);
        r.push_vec("vc", self.v_cmd);
        r.push("tau_hat_ms", self.tau_hat_ms);
        r.push("tau_raw_ms", self.tau_raw_ms);
        r.push("state_seq", self.state_seq);
        r.push("ctrl_seq", self.ctrl_seq);
        r.finish()
    }

    pub fn parse_record(line: &str) -> Result<Self, ProtocolError> {
        let fields = parse_record(line, "telemetry")?;
        let f = |k: &'static str| -> Result<f64, ProtocolError> {
            let raw = fields.get(k).ok_or(ProtocolError::MissingField(k))?;
            raw.parse::<f64>().map_err(|_| ProtocolError::Number(raw.to_string()))
        };
        let u = |k: &'static str| -> Result<u64, ProtocolError> {
            let raw = fields.get(k).ok_or(ProtocolError::MissingField(k))?;
            raw.parse::<u64>().map_err(|_| ProtocolError::Number(raw.to_string()))
        };
        let v = |x, y, z| -> Result<Vec3<f64>, ProtocolError> { Ok(Vec3::new(f(x)?, f(y)?, f(z)?)) };
        Ok(Self {
            t: u("t_us")?,
            p_measured: v("px", "py", "pz")?,
            p_predicted: v("phx", "phy", "phz")?,
            p_ref: v("rx", "ry", "rz")?,
            v_cmd: v("vcx", "vcy", "vcz")?,
            tau_hat_ms: f("tau_hat_ms")?,
            tau_raw_ms: f("tau_raw_ms")?,
            state_seq: u("state_seq")? as u32,
            ctrl_seq: u("ctrl_seq")? as u32,
        })
    }
}

struct Record(String);

impl Record {
    fn new(kind: &str) -> Self {
        Record(format!("{kind} v={PROTOCOL_VERSION}"))
    }
    fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = write!(self.0, " {key}={value}");
    }
    fn push_vec(&mut self, prefix: &str, v: Vec3<f64>) {
        self.push(&format!("{prefix}x"), v.x);
        self.push(&format!("{prefix}y"), v.y);
        self.push(&format!("{prefix}z"), v.z);
    }
    fn finish(self) -> String {
        self.0
    }
}

/// Splits a `<kind> key=value ...` record, checking kind and version.
pub fn parse_record<'a>(line: &'a str, kind: &'static str) -> Result<HashMap<&'a str, &'a str>, ProtocolError> {
    let mut parts = line.split_whitespace();
    let got = parts.next().unwrap_or("");
    if got != kind {
        return Err(ProtocolError::Kind { expected: kind, got: got.to_string() });
    }
    let fields: HashMap<&str, &str> = parts.filter_map(|kv| kv.split_once('=')).collect();
    match fields.get("v") {
        Some(v) if *v == PROTOCOL_VERSION.to_string() => Ok(fields),
        Some(v) => Err(ProtocolError::Version(v.to_string())),
        None => Err(ProtocolError::MissingField("v")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_commands() {
        assert_eq!(
            Command::parse("waypoint 1 2 1 0").unwrap(),
            Command::Waypoint { p: Vec3::new(1.0, 2.0, 1.0), yaw: 0.0 }
        );
        assert_eq!(
            Command::parse("  netprofile 70 20 0.01 \n").unwrap(),
            Command::NetProfile(NetworkProfile::from_ms(70.0, 20.0, 0.01).unwrap())
        );
        assert_eq!(Command::parse("status").unwrap(), Command::Status);
    }

    #[test]
    fn rejects_malformed_commands() {
        assert_eq!(Command::parse(""), Err(ProtocolError::Empty));
        assert!(matches!(Command::parse("fly 1"), Err(ProtocolError::Unknown(_))));
        assert!(matches!(Command::parse("waypoint 1 2"), Err(ProtocolError::Arity { .. })));
        assert!(matches!(Command::parse("waypoint 1 2 x 0"), Err(ProtocolError::Number(_))));
        assert_eq!(Command::parse("waypoint 1 inf 0 0"), Err(ProtocolError::NonFinite));
        assert!(matches!(Command::parse("netprofile -5 0 0"), Err(ProtocolError::Profile(_))));
        assert!(matches!(Command::parse("status now"), Err(ProtocolError::Arity { .. })));
    }

    #[test]
    fn command_lines_reparse() {
        for c in [
            Command::Waypoint { p: Vec3::new(0.1, -2.0, 3.5), yaw: 1.25 },
            Command::NetProfile(NetworkProfile::from_ms(50.5, 20.0, 0.25).unwrap()),
            Command::Status,
        ] {
            assert_eq!(Command::parse(&c.to_line()).unwrap(), c);
        }
    }

    #[test]
    fn telemetry_record_round_trip() {
        let f = TelemetryFrame {
            t: 123_456,
            p_measured: Vec3::new(0.1, 0.2, 0.3),
            p_predicted: Vec3::new(0.15, 0.2, 0.3),
            p_ref: Vec3::new(1.0, 2.0, 1.0),
            v_cmd: Vec3::new(0.9, 1.8, 0.7),
            tau_hat_ms: 101.25,
            tau_raw_ms: 99.0,
            state_seq: 40,
            ctrl_seq: 20,
        };
        let line = f.to_record();
        assert!(line.starts_with("telemetry v=1 t_us=123456 px=0.1"));
        assert_eq!(TelemetryFrame::parse_record(&line).unwrap(), f);
        assert!(matches!(
            TelemetryFrame::parse_record("status v=1"),
            Err(ProtocolError::Kind { .. })
        ));
        assert!(matches!(
            TelemetryFrame::parse_record("telemetry v=2"),
            Err(ProtocolError::Version(_))
        ));
    }

    #[test]
    fn status_before_any_state() {
        let line = Response::Status(StatusReport::default()).to_line();
        assert!(line.contains("state=none"), "{line}");
        assert!(line.contains("r=none"));
        assert_eq!(Response::Error("bad".into()).to_line(), "err bad");
    }
}
