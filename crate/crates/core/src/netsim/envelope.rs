//! Envelope and its bit-exact wire codec.
//!
//! Layout (little endian): magic `AAS1`, version u8, flags u8, seq u32,
//! send_sim_time_ns u64, src u16, dst u16 (0xFFFF broadcast), domain u16,
//! topic_len u8 + UTF-8 topic, payload_len u32 + payload, CRC32 (IEEE) of all
//! preceding bytes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::SimTime;

pub const MAGIC: [u8; 4] = *b"AAS1";
pub const WIRE_VERSION: u8 = 1;
pub const MAX_PAYLOAD: usize = 64 * 1024;
pub const MAX_TOPIC: usize = u8::MAX as usize;
/// Fixed bytes around the variable topic and payload.
pub const FRAME_OVERHEAD: usize = 4 + 1 + 1 + 4 + 8 + 2 + 2 + 2 + 1 + 4 + 4;

/// Payload carries an [`Origin`] header ahead of the application bytes.
pub const FLAG_BRIDGED: u8 = 0b0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u16);

impl NodeId {
    pub const BROADCAST: NodeId = NodeId(0xFFFF);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainId(pub u16);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("crc mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    BadCrc { stored: u32, computed: u32 },
    #[error("topic is not valid UTF-8")]
    BadUtf8,
    #[error("topic longer than {MAX_TOPIC} bytes")]
    TopicTooLong,
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge(usize),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u32,
    pub send_sim_time: SimTime,
    pub src: NodeId,
    pub dst: NodeId,
    pub domain: DomainId,
    pub topic: String,
    pub payload: Vec<u8>,
    pub flags: u8,
}

/// Original publisher of a bridged message, kept for end-to-end accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub src: NodeId,
    pub seq: u32,
    pub domain: DomainId,
}

impl Origin {
    pub const LEN: usize = 8;

    pub fn prepend(&self, body: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN + body.len());
        out.extend_from_slice(&self.src.0.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.domain.0.to_le_bytes());
        out.extend_from_slice(body);
        out
    }

    pub fn split(payload: &[u8]) -> Option<(Origin, &[u8])> {
        if payload.len() < Self::LEN {
            return None;
        }
        let origin = Origin {
            src: NodeId(u16::from_le_bytes([payload[0], payload[1]])),
            seq: u32::from_le_bytes([payload[2], payload[3], payload[4], payload[5]]),
            domain: DomainId(u16::from_le_bytes([payload[6], payload[7]])),
        };
        Some((origin, &payload[Self::LEN..]))
    }
}

impl Envelope {
    pub fn is_bridged(&self) -> bool {
        self.flags & FLAG_BRIDGED != 0
    }

    /// Application bytes, with any bridge origin header stripped.
    pub fn body(&self) -> &[u8] {
        if self.is_bridged() {
            Origin::split(&self.payload).map(|(_, b)| b).unwrap_or(&[])
        } else {
            &self.payload
        }
    }

    pub fn origin(&self) -> Origin {
        if self.is_bridged() {
            if let Some((o, _)) = Origin::split(&self.payload) {
                return o;
            }
        }
        Origin {
            src: self.src,
            seq: self.seq,
            domain: self.domain,
        }
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.topic.len() + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), WireError> {
        if self.topic.len() > MAX_TOPIC {
            return Err(WireError::TopicTooLong);
        }
        if self.payload.len() > MAX_PAYLOAD {
            return Err(WireError::PayloadTooLarge(self.payload.len()));
        }
        let start = out.len();
        out.extend_from_slice(&MAGIC);
        out.push(WIRE_VERSION);
        out.push(self.flags);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.send_sim_time.as_nanos().to_le_bytes());
        out.extend_from_slice(&self.src.0.to_le_bytes());
        out.extend_from_slice(&self.dst.0.to_le_bytes());
        out.extend_from_slice(&self.domain.0.to_le_bytes());
        out.push(self.topic.len() as u8);
        out.extend_from_slice(self.topic.as_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(())
    }

    /// Decodes exactly one frame; trailing bytes are an error.
    pub fn decode(bytes: &[u8]) -> Result<Envelope, WireError> {
        let (env, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(WireError::TrailingBytes(bytes.len() - used));
        }
        Ok(env)
    }

    /// Decodes one frame from the front of `bytes`, returning bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Envelope, usize), WireError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(WireError::BadMagic);
        }
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(WireError::BadVersion(version));
        }
        let flags = r.u8()?;
        let seq = r.u32()?;
        let send = r.u64()?;
        let src = r.u16()?;
        let dst = r.u16()?;
        let domain = r.u16()?;
        let topic_len = r.u8()? as usize;
        let topic = std::str::from_utf8(r.take(topic_len)?)
            .map_err(|_| WireError::BadUtf8)?
            .to_string();
        let payload_len = r.u32()? as usize;
        if payload_len > MAX_PAYLOAD {
            return Err(WireError::PayloadTooLarge(payload_len));
        }
        let payload = r.take(payload_len)?.to_vec();
        let body_end = r.pos;
        let stored = r.u32()?;
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(WireError::BadCrc { stored, computed });
        }
        Ok((
            Envelope {
                seq,
                send_sim_time: SimTime::from_nanos(send),
                src: NodeId(src),
                dst: NodeId(dst),
                domain: DomainId(domain),
                topic,
                payload,
                flags,
            },
            r.pos,
        ))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}
