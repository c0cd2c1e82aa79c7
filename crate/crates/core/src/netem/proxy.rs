//! Standalone UDP relay applying the same channel model in realtime.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use super::{Channel, ChannelStats, Direction, ProfileSchedule};
use crate::protocol::{Command, Response};
use crate::time::Micros;

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub listen: SocketAddr,
    pub forward: SocketAddr,
    /// Optional UDP port accepting `netprofile <delay_ms> <jitter_ms> <loss>` lines.
    pub control: Option<SocketAddr>,
    pub direction: Direction,
    pub seed: u64,
    /// Switch times relative to proxy start.
    pub schedule: ProfileSchedule,
}

pub struct NetemProxy {
    listen: UdpSocket,
    out: UdpSocket,
    control: Option<UdpSocket>,
    forward: SocketAddr,
    channel: Channel,
    start: Instant,
}

const IDLE_WAIT: Duration = Duration::from_millis(2);
const MIN_WAIT: Duration = Duration::from_micros(100);

impl NetemProxy {
    pub fn bind(cfg: ProxyConfig) -> io::Result<Self> {
        let listen = UdpSocket::bind(cfg.listen)?;
        let out = UdpSocket::bind(SocketAddr::new(cfg.listen.ip(), 0))?;
        let control = match cfg.control {
            Some(addr) => {
                let s = UdpSocket::bind(addr)?;
                s.set_nonblocking(true)?;
                Some(s)
            }
            None => None,
        };
        Ok(Self {
            listen,
            out,
            control,
            forward: cfg.forward,
            channel: Channel::new(cfg.direction, cfg.seed, cfg.schedule),
            start: Instant::now(),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listen.local_addr()
    }

    pub fn control_addr(&self) -> Option<SocketAddr> {
        self.control.as_ref().and_then(|s| s.local_addr().ok())
    }

    fn now(&self) -> Micros {
        self.start.elapsed().as_micros() as Micros
    }

    /// Relays until `stop` is set.
    pub fn run(&mut self, stop: &AtomicBool) -> io::Result<ChannelStats> {
        let mut buf = [0u8; 2048];
        while !stop.load(Ordering::Relaxed) {
            let wait = match self.channel.next_delivery() {
                Some(due) => Duration::from_micros(due.saturating_sub(self.now())).min(IDLE_WAIT),
                None => IDLE_WAIT,
            };
            self.listen.set_read_timeout(Some(wait.max(MIN_WAIT)))?;
            match self.listen.recv_from(&mut buf) {
                Ok((n, _)) => {
                    let now = self.now();
                    self.channel.send(buf[..n].to_vec(), now);
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(e) => return Err(e),
            }
            self.serve_control()?;
            for pkt in self.channel.poll(self.now()) {
                // Forwarding is best effort, like the network it stands in for.
                let _ = self.out.send_to(&pkt.payload, self.forward);
            }
        }
        Ok(self.channel.stats())
    }

    fn serve_control(&mut self) -> io::Result<()> {
        let Some(sock) = &self.control else { return Ok(()) };
        let mut buf = [0u8; 512];
        loop {
            match sock.recv_from(&mut buf) {
                Ok((n, from)) => {
                    let reply = match std::str::from_utf8(&buf[..n]).map_err(|e| e.to_string()).and_then(|s| {
                        Command::parse(s).map_err(|e| e.to_string())
                    }) {
                        Ok(Command::NetProfile(p)) => {
                            let now = self.start.elapsed().as_micros() as Micros;
                            self.channel.set_profile_from(now, p);
                            Response::Ok("netprofile applied".into())
                        }
                        Ok(other) => Response::Error(format!("unsupported on proxy: {}", other.name())),
                        Err(e) => Response::Error(e),
                    };
                    let _ = sock.send_to(reply.to_line().as_bytes(), from);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => return Ok(()),
                Err(e) => return Err(e),
            }
        }
    }
}
