//! Real-UDP transport for distributed runs. The clock authority and one
//! remote process exchange scheduled envelopes and a per-tick barrier:
//! the authority sends TICK(t) after its tick, the remote runs tick t and
//! answers ACK(t). Each control datagram announces how many ENV datagrams
//! of that tick precede it.

use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::envelope::{Envelope, NodeId, WireError};
use super::network::RemoteDelivery;
use crate::kernel::SimTime;

pub const MAX_DATAGRAM: usize = 65_507;
pub const PEER_TIMEOUT: Duration = Duration::from_secs(5);

const KIND_HELLO: u8 = 1;
const KIND_TICK: u8 = 2;
const KIND_ACK: u8 = 3;
const KIND_ENV: u8 = 4;
const KIND_BYE: u8 = 5;

#[derive(Debug, Error)]
pub enum UdpError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        source: std::io::Error,
    },
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
    #[error("peer silent for {waited:?} while waiting for tick {tick}")]
    PeerTimeout { waited: Duration, tick: u64 },
    #[error("datagram of {0} bytes exceeds the UDP limit")]
    Oversize(usize),
    #[error("malformed datagram: {0}")]
    Malformed(String),
    #[error("bad envelope frame: {0}")]
    Wire(#[from] WireError),
    #[error("peer left the run")]
    PeerLeft,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Datagram {
    Hello,
    Tick { tick: u64, count: u32, stop: bool },
    Ack { tick: u64, count: u32, done: bool },
    Env { tick: u64, delivery: RemoteDelivery },
    Bye,
}

impl Datagram {
    pub fn encode(&self) -> Result<Vec<u8>, UdpError> {
        let mut out = Vec::new();
        match self {
            Datagram::Hello => out.push(KIND_HELLO),
            Datagram::Bye => out.push(KIND_BYE),
            Datagram::Tick { tick, count, stop } => {
                out.push(KIND_TICK);
                out.extend_from_slice(&tick.to_le_bytes());
                out.extend_from_slice(&count.to_le_bytes());
                out.push(u8::from(*stop));
            }
            Datagram::Ack { tick, count, done } => {
                out.push(KIND_ACK);
                out.extend_from_slice(&tick.to_le_bytes());
                out.extend_from_slice(&count.to_le_bytes());
                out.push(u8::from(*done));
            }
            Datagram::Env { tick, delivery } => {
                out.push(KIND_ENV);
                out.extend_from_slice(&tick.to_le_bytes());
                out.extend_from_slice(&delivery.deliver_at.as_nanos().to_le_bytes());
                out.extend_from_slice(&delivery.receiver.0.to_le_bytes());
                delivery.envelope.encode_into(&mut out)?;
            }
        }
        if out.len() > MAX_DATAGRAM {
            return Err(UdpError::Oversize(out.len()));
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Datagram, UdpError> {
        let bad = |what: &str| UdpError::Malformed(what.to_string());
        let (&kind, rest) = buf.split_first().ok_or_else(|| bad("empty"))?;
        let u64_at = |b: &[u8], at: usize| -> Result<u64, UdpError> {
            b.get(at..at + 8)
                .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
                .ok_or_else(|| bad("truncated"))
        };
        let u32_at = |b: &[u8], at: usize| -> Result<u32, UdpError> {
            b.get(at..at + 4)
                .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
                .ok_or_else(|| bad("truncated"))
        };
        match kind {
            KIND_HELLO => Ok(Datagram::Hello),
            KIND_BYE => Ok(Datagram::Bye),
            KIND_TICK | KIND_ACK => {
                if rest.len() != 13 {
                    return Err(bad("control length"));
                }
                let tick = u64_at(rest, 0)?;
                let count = u32_at(rest, 8)?;
                let flag = rest[12] != 0;
                Ok(if kind == KIND_TICK {
                    Datagram::Tick { tick, count, stop: flag }
                } else {
                    Datagram::Ack { tick, count, done: flag }
                })
            }
            KIND_ENV => {
                let tick = u64_at(rest, 0)?;
                let deliver_at = SimTime::from_nanos(u64_at(rest, 8)?);
                let receiver = rest
                    .get(16..18)
                    .map(|s| NodeId(u16::from_le_bytes([s[0], s[1]])))
                    .ok_or_else(|| bad("truncated"))?;
                let envelope = Envelope::decode(&rest[18..])?;
                Ok(Datagram::Env {
                    tick,
                    delivery: RemoteDelivery {
                        receiver,
                        deliver_at,
                        envelope,
                    },
                })
            }
            other => Err(UdpError::Malformed(format!("unknown kind {other}"))),
        }
    }
}

/// Control datagram closing one side's tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barrier {
    pub tick: u64,
    pub flag: bool,
}

pub struct UdpTransport {
    socket: UdpSocket,
    peer: Option<SocketAddr>,
    timeout: Duration,
    buf: Vec<u8>,
    early: Vec<(u64, RemoteDelivery)>,
}

impl UdpTransport {
    pub fn bind(addr: &str) -> Result<Self, UdpError> {
        let socket = UdpSocket::bind(addr).map_err(|source| UdpError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
        Ok(UdpTransport {
            socket,
            peer: None,
            timeout: PEER_TIMEOUT,
            buf: vec![0; MAX_DATAGRAM + 1],
            early: Vec::new(),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, UdpError> {
        Ok(self.socket.local_addr()?)
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn send(&self, d: &Datagram) -> Result<(), UdpError> {
        let peer = self.peer.ok_or(UdpError::PeerLeft)?;
        self.socket.send_to(&d.encode()?, peer)?;
        Ok(())
    }

    fn recv(&mut self, deadline: Instant, tick: u64) -> Result<Datagram, UdpError> {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(UdpError::PeerTimeout {
                    waited: self.timeout,
                    tick,
                });
            }
            self.socket.set_read_timeout(Some(left))?;
            match self.socket.recv_from(&mut self.buf) {
                Ok((n, from)) => {
                    if n > MAX_DATAGRAM {
                        return Err(UdpError::Oversize(n));
                    }
                    if let Some(p) = self.peer {
                        if p != from {
                            continue;
                        }
                    } else {
                        self.peer = Some(from);
                    }
                    return Datagram::decode(&self.buf[..n]);
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    continue
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Authority side: waits for the remote's HELLO and answers it.
    pub fn accept(&mut self) -> Result<SocketAddr, UdpError> {
        let deadline = Instant::now() + self.timeout;
        loop {
            if let Datagram::Hello = self.recv(deadline, 0)? {
                self.send(&Datagram::Hello)?;
                return Ok(self.peer.expect("peer learned from hello"));
            }
        }
    }

    /// Remote side: greets the authority until it answers.
    pub fn connect(&mut self, authority: &str) -> Result<(), UdpError> {
        let addr = authority
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| UdpError::Malformed(format!("cannot resolve {authority}")))?;
        self.peer = Some(addr);
        let deadline = Instant::now() + self.timeout;
        loop {
            self.send(&Datagram::Hello)?;
            let step = (Instant::now() + Duration::from_millis(200)).min(deadline);
            match self.recv(step, 0) {
                Ok(Datagram::Hello) => return Ok(()),
                Ok(_) => continue,
                Err(UdpError::PeerTimeout { .. }) if Instant::now() < deadline => continue,
                Err(UdpError::Io(e)) if e.kind() == std::io::ErrorKind::ConnectionRefused => {
                    std::thread::sleep(Duration::from_millis(50));
                    if Instant::now() >= deadline {
                        return Err(UdpError::PeerTimeout {
                            waited: self.timeout,
                            tick: 0,
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Ships this side's deliveries for `tick` followed by the control datagram.
    pub fn close_tick(
        &mut self,
        tick: u64,
        deliveries: Vec<RemoteDelivery>,
        authority: bool,
        flag: bool,
    ) -> Result<(), UdpError> {
        let count = deliveries.len() as u32;
        for delivery in deliveries {
            self.send(&Datagram::Env { tick, delivery })?;
        }
        let ctrl = if authority {
            Datagram::Tick { tick, count, stop: flag }
        } else {
            Datagram::Ack { tick, count, done: flag }
        };
        self.send(&ctrl)
    }

    /// Collects the peer's deliveries for `tick` and its control datagram.
    pub fn await_tick(
        &mut self,
        tick: u64,
        want_ack: bool,
    ) -> Result<(Vec<RemoteDelivery>, Barrier), UdpError> {
        let deadline = Instant::now() + self.timeout;
        let mut got: Vec<RemoteDelivery> = Vec::new();
        let mut i = 0;
        while i < self.early.len() {
            if self.early[i].0 == tick {
                got.push(self.early.remove(i).1);
            } else {
                i += 1;
            }
        }
        let mut announced: Option<(u32, bool)> = None;
        loop {
            if let Some((count, flag)) = announced {
                if got.len() as u32 >= count {
                    return Ok((got, Barrier { tick, flag }));
                }
            }
            match self.recv(deadline, tick)? {
                Datagram::Env { tick: t, delivery } if t == tick => got.push(delivery),
                Datagram::Env { tick: t, delivery } => self.early.push((t, delivery)),
                Datagram::Tick { tick: t, count, stop } if !want_ack && t == tick => {
                    announced = Some((count, stop))
                }
                Datagram::Ack { tick: t, count, done } if want_ack && t == tick => {
                    announced = Some((count, done))
                }
                Datagram::Bye => return Err(UdpError::PeerLeft),
                _ => {}
            }
        }
    }

    pub fn bye(&mut self) -> Result<(), UdpError> {
        if self.peer.is_some() {
            self.send(&Datagram::Bye)?;
        }
        Ok(())
    }
}
