use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{decode, Message};

#[derive(Debug, Default)]
pub struct TunnelCounters {
    sent: AtomicU64,
    received: AtomicU64,
    decode_errors: AtomicU64,
}

impl TunnelCounters {
    pub fn sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }
    pub fn received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }
    pub fn decode_errors(&self) -> u64 {
        self.decode_errors.load(Ordering::Relaxed)
    }
}

/// One end of the UDP tunnel. Sends go to a fixed peer; datagrams are
/// accepted from any source.
#[derive(Debug)]
pub struct TunnelEndpoint {
    socket: UdpSocket,
    peer: SocketAddr,
    counters: Arc<TunnelCounters>,
}

const MAX_DATAGRAM: usize = 2048;

impl TunnelEndpoint {
    pub fn bind(local: impl ToSocketAddrs, peer: impl ToSocketAddrs) -> io::Result<Self> {
        let socket = UdpSocket::bind(local)?;
        let peer = peer
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "peer address did not resolve"))?;
        Ok(Self { socket, peer, counters: Arc::default() })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    pub fn set_peer(&mut self, peer: SocketAddr) {
        self.peer = peer;
    }

    pub fn counters(&self) -> &TunnelCounters {
        &self.counters
    }

    /// Shares the socket and counters, e.g. to split receiving and sending
    /// across threads.
    pub fn try_clone(&self) -> io::Result<Self> {
        Ok(Self { socket: self.socket.try_clone()?, peer: self.peer, counters: Arc::clone(&self.counters) })
    }

    /// Fire-and-forget send of an already encoded frame.
    pub fn send(&self, frame: &[u8]) -> io::Result<()> {
        self.socket.send_to(frame, self.peer)?;
        self.counters.sent.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Waits up to `timeout` for the next decodable datagram. Undecodable
    /// datagrams are counted and skipped. `Ok(None)` on timeout.
    pub fn recv(&self, timeout: Duration) -> io::Result<Option<Message>> {
        Ok(self.recv_raw(timeout)?.map(|(m, _)| m))
    }

    /// Like [`recv`](Self::recv) but also returns the raw frame bytes.
    pub fn recv_raw(&self, timeout: Duration) -> io::Result<Option<(Message, Vec<u8>)>> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; MAX_DATAGRAM];
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Ok(None);
            }
            self.socket.set_read_timeout(Some(remaining))?;
            match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => {
                    self.counters.received.fetch_add(1, Ordering::Relaxed);
                    match decode(&buf[..n]) {
                        Ok(m) => return Ok(Some((m, buf[..n].to_vec()))),
                        Err(_) => {
                            self.counters.decode_errors.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) => return Err(e),
            }
        }
    }
}
