//! Fixed little-endian datagram layout shared by both agents.
//!
//! ```text
//! header (16 bytes)
//!   0..2   magic      0x43 0x52 ("CR")
//!   2      version    0x01
//!   3      msg_type   0x01 STATE | 0x02 CONTROL
//!   4..8   seq        u32 LE
//!   8..16  t_send     u64 LE, microseconds
//! STATE payload (116 bytes)
//!   p.xyz, v.xyz, q.wxyz, w.xyz  13 × f64 LE
//!   t_ctrl_echo                  u64 LE
//!   seq_ctrl_echo                u32 LE
//! CONTROL payload (32 bytes)
//!   v_cmd.xyz, yaw_rate_cmd      4 × f64 LE
//! ```
//!
//! A state's own timestamp travels as the header `t_send`; a control's
//! `t_origin` and `seq` travel as the header `t_send` and `seq`.

mod tunnel;

pub use tunnel::{TunnelCounters, TunnelEndpoint};

use thiserror::Error;

use crate::math::{Quat, Vec3};
use crate::time::Micros;
use crate::types::{ControlEcho, RobotState, StampedControl};

pub const MAGIC: [u8; 2] = [0x43, 0x52];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 16;
pub const STATE_PAYLOAD_LEN: usize = 13 * 8 + 8 + 4;
pub const CONTROL_PAYLOAD_LEN: usize = 4 * 8;
pub const STATE_FRAME_LEN: usize = HEADER_LEN + STATE_PAYLOAD_LEN;
pub const CONTROL_FRAME_LEN: usize = HEADER_LEN + CONTROL_PAYLOAD_LEN;

pub const DEFAULT_ROBOT_PORT: u16 = 47001;
pub const DEFAULT_CLOUD_PORT: u16 = 47002;
pub const DEFAULT_UPLINK_PROXY_PORT: u16 = 47010;
pub const DEFAULT_DOWNLINK_PROXY_PORT: u16 = 47011;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    State = 0x01,
    Control = 0x02,
}

impl TryFrom<u8> for MsgType {
    type Error = DecodeError;
    fn try_from(b: u8) -> Result<Self, DecodeError> {
        match b {
            0x01 => Ok(MsgType::State),
            0x02 => Ok(MsgType::Control),
            other => Err(DecodeError::UnknownType(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireHeader {
    pub msg_type: MsgType,
    pub seq: u32,
    pub t_send: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMessage {
    pub header: WireHeader,
    pub state: RobotState<f64>,
    pub ctrl_echo: ControlEcho,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMessage {
    pub header: WireHeader,
    pub control: StampedControl<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    State(StateMessage),
    Control(ControlMessage),
}

impl Message {
    pub fn header(&self) -> &WireHeader {
        match self {
            Message::State(m) => &m.header,
            Message::Control(m) => &m.header,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("frame length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("bad magic {0:02x?}")]
    Magic([u8; 2]),
    #[error("unsupported version {0:#04x}")]
    Version(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
}

fn put_header(buf: &mut Vec<u8>, msg_type: MsgType, seq: u32, t_send: Micros) {
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.push(msg_type as u8);
    buf.extend_from_slice(&seq.to_le_bytes());
    buf.extend_from_slice(&t_send.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn check_finite(vals: &[f64], what: &'static str) -> Result<(), EncodeError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EncodeError::NonFinite(what))
    }
}

pub fn encode_state(
    s: &RobotState<f64>,
    ctrl_echo: ControlEcho,
    seq: u32,
    t_send: Micros,
) -> Result<Vec<u8>, EncodeError> {
    let p = s.p.to_array();
    let v = s.v.to_array();
    let q = [s.q.w, s.q.x, s.q.y, s.q.z];
    let w = s.w.to_array();
    check_finite(&p, "position")?;
    check_finite(&v, "velocity")?;
    check_finite(&q, "orientation")?;
    check_finite(&w, "angular velocity")?;

    let mut buf = Vec::with_capacity(STATE_FRAME_LEN);
    put_header(&mut buf, MsgType::State, seq, t_send);
    put_f64s(&mut buf, &p);
    put_f64s(&mut buf, &v);
    put_f64s(&mut buf, &q);
    put_f64s(&mut buf, &w);
    buf.extend_from_slice(&ctrl_echo.t_origin.to_le_bytes());
    buf.extend_from_slice(&ctrl_echo.seq.to_le_bytes());
    debug_assert_eq!(buf.len(), STATE_FRAME_LEN);
    Ok(buf)
}

pub fn encode_control(c: &StampedControl<f64>) -> Result<Vec<u8>, EncodeError> {
    let vals = [c.v_cmd.x, c.v_cmd.y, c.v_cmd.z, c.yaw_rate_cmd];
    check_finite(&vals, "control")?;
    let mut buf = Vec::with_capacity(CONTROL_FRAME_LEN);
    put_header(&mut buf, MsgType::Control, c.seq, c.t_origin);
    put_f64s(&mut buf, &vals);
    debug_assert_eq!(buf.len(), CONTROL_FRAME_LEN);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        out
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn vec3(&mut self) -> Vec3<f64> {
        Vec3::new(self.f64(), self.f64(), self.f64())
    }
}

/// Parses and validates the 16-byte header.
pub fn decode_header(bytes: &[u8]) -> Result<WireHeader, DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Length { expected: HEADER_LEN, got: bytes.len() });
    }
    if bytes[0..2] != MAGIC {
        return Err(DecodeError::Magic([bytes[0], bytes[1]]));
    }
    if bytes[2] != VERSION {
        return Err(DecodeError::Version(bytes[2]));
    }
    let msg_type = MsgType::try_from(bytes[3])?;
    let mut r = Reader { bytes, pos: 4 };
    let seq = r.u32();
    let t_send = r.u64();
    Ok(WireHeader { msg_type, seq, t_send })
}

/// Decodes any byte slice; never panics.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let header = decode_header(bytes)?;
    let expected = match header.msg_type {
        MsgType::State => STATE_FRAME_LEN,
        MsgType::Control => CONTROL_FRAME_LEN,
    };
    if bytes.len() != expected {
        return Err(DecodeError::Length { expected, got: bytes.len() });
    }
    let mut r = Reader { bytes, pos: HEADER_LEN };
    Ok(match header.msg_type {
        MsgType::State => {
            let p = r.vec3();
            let v = r.vec3();
            let q = Quat::new(r.f64(), r.f64(), r.f64(), r.f64());
            let w = r.vec3();
            let ctrl_echo = ControlEcho { t_origin: r.u64(), seq: r.u32() };
            Message::State(StateMessage {
                header,
                state: RobotState { t: header.t_send, p, v, q, w },
                ctrl_echo,
            })
        }
        MsgType::Control => {
            let v_cmd = r.vec3();
            let yaw_rate_cmd = r.f64();
            Message::Control(ControlMessage {
                header,
                control: StampedControl { t_origin: header.t_send, seq: header.seq, v_cmd, yaw_rate_cmd },
            })
        }
    })
}
