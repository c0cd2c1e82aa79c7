//! Process-level pieces of the testbed: the teleoperation gateway, the
//! multi-process realtime runner and the helpers shared by the binaries.

pub mod exit;
pub mod gateway;
pub mod realtime;
pub mod signal;
