//! Flight log: a binary record stream with per-record CRC framing, plus a
//! CSV export. Records sort by (sim time, vehicle, kind, seq); seq is the
//! push order and only breaks ties between records of the same kind.

use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::firmware::FlightMode;
use crate::kernel::SimTime;
use crate::netsim::NetStats;

pub const LOG_MAGIC: [u8; 4] = *b"SKLG";
pub const LOG_VERSION: u8 = 1;
const FRAME_HEAD: usize = 1 + 8 + 2 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    State = 0,
    Mode = 1,
    ActionEvent = 2,
    NetStats = 3,
}

impl RecordKind {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => RecordKind::State,
            1 => RecordKind::Mode,
            2 => RecordKind::ActionEvent,
            3 => RecordKind::NetStats,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordKind::State => "state",
            RecordKind::Mode => "mode",
            RecordKind::ActionEvent => "action",
            RecordKind::NetStats => "net",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogPayload {
    State {
        position: [f64; 3],
        velocity: [f64; 3],
        /// w, x, y, z
        attitude: [f64; 4],
    },
    Mode {
        from: FlightMode,
        to: FlightMode,
    },
    ActionEvent {
        text: String,
    },
    NetStats(NetStats),
}

impl LogPayload {
    pub fn kind(&self) -> RecordKind {
        match self {
            LogPayload::State { .. } => RecordKind::State,
            LogPayload::Mode { .. } => RecordKind::Mode,
            LogPayload::ActionEvent { .. } => RecordKind::ActionEvent,
            LogPayload::NetStats(_) => RecordKind::NetStats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub sim_time_ns: u64,
    pub vehicle: u16,
    pub seq: u32,
    pub payload: LogPayload,
}

impl LogRecord {
    pub fn kind(&self) -> RecordKind {
        self.payload.kind()
    }

    pub fn key(&self) -> (u64, u16, RecordKind, u32) {
        (self.sim_time_ns, self.vehicle, self.kind(), self.seq)
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a flight log (bad magic)")]
    BadMagic,
    #[error("unsupported log version {0}")]
    Version(u8),
    #[error("record {index}: {reason}")]
    Corrupt { index: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlightLog {
    records: Vec<LogRecord>,
    next_seq: u32,
}

impl FlightLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: SimTime, vehicle: u16, payload: LogPayload) {
        self.records.push(LogRecord {
            sim_time_ns: at.as_nanos(),
            vehicle,
            seq: self.next_seq,
            payload,
        });
        self.next_seq = self.next_seq.wrapping_add(1);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in log order.
    pub fn records(&mut self) -> &[LogRecord] {
        self.records.sort_by_key(LogRecord::key);
        &self.records
    }

    pub fn from_records(mut records: Vec<LogRecord>) -> Self {
        records.sort_by_key(LogRecord::key);
        let next_seq = records.iter().map(|r| r.seq.wrapping_add(1)).max().unwrap_or(0);
        FlightLog { records, next_seq }
    }

    pub fn encode(&mut self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn write_to(&mut self, w: &mut impl Write) -> Result<(), LogError> {
        w.write_all(&LOG_MAGIC)?;
        w.write_all(&[LOG_VERSION, 0])?;
        for r in self.records() {
            let body = bincode::serialize(&r.payload).expect("log payloads serialize");
            let mut frame = Vec::with_capacity(FRAME_HEAD + body.len() + 4);
            frame.push(r.kind() as u8);
            frame.extend_from_slice(&r.sim_time_ns.to_le_bytes());
            frame.extend_from_slice(&r.vehicle.to_le_bytes());
            frame.extend_from_slice(&r.seq.to_le_bytes());
            frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
            frame.extend_from_slice(&body);
            let crc = crc32fast::hash(&frame);
            frame.extend_from_slice(&crc.to_le_bytes());
            w.write_all(&frame)?;
        }
        Ok(())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LogError> {
        if bytes.len() < 6 || bytes[..4] != LOG_MAGIC {
            return Err(LogError::BadMagic);
        }
        if bytes[4] != LOG_VERSION {
            return Err(LogError::Version(bytes[4]));
        }
        let mut rest = &bytes[6..];
        let mut records = Vec::new();
        while !rest.is_empty() {
            let index = records.len();
            let corrupt = |reason: &str| LogError::Corrupt {
                index,
                reason: reason.to_string(),
            };
            if rest.len() < FRAME_HEAD + 4 {
                return Err(corrupt("truncated header"));
            }
            let len = u32::from_le_bytes(rest[15..19].try_into().unwrap()) as usize;
            let total = FRAME_HEAD + len + 4;
            if rest.len() < total {
                return Err(corrupt("truncated body"));
            }
            let (frame, crc) = rest[..total].split_at(total - 4);
            if crc32fast::hash(frame) != u32::from_le_bytes(crc.try_into().unwrap()) {
                return Err(corrupt("crc mismatch"));
            }
            let kind = RecordKind::from_u8(frame[0]).ok_or_else(|| corrupt("unknown kind"))?;
            let payload: LogPayload =
                bincode::deserialize(&frame[FRAME_HEAD..]).map_err(|e| corrupt(&e.to_string()))?;
            if payload.kind() != kind {
                return Err(corrupt("kind does not match payload"));
            }
            records.push(LogRecord {
                sim_time_ns: u64::from_le_bytes(frame[1..9].try_into().unwrap()),
                vehicle: u16::from_le_bytes(frame[9..11].try_into().unwrap()),
                seq: u32::from_le_bytes(frame[11..15].try_into().unwrap()),
                payload,
            });
            rest = &rest[total..];
        }
        Ok(FlightLog::from_records(records))
    }

    pub fn save(&mut self, path: &Path) -> Result<(), LogError> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    /// One row per record; fields that do not apply to a kind stay empty.
    pub fn write_csv(&mut self, w: impl Write) -> Result<(), LogError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "sim_time_s", "vehicle", "kind", "seq", "x", "y", "z", "vx", "vy", "vz", "qw", "qx", "qy", "qz",
            "detail",
        ])?;
        for r in self.records() {
            let t = format!("{}.{:09}", r.sim_time_ns / 1_000_000_000, r.sim_time_ns % 1_000_000_000);
            let mut row = vec![t, r.vehicle.to_string(), r.kind().name().to_string(), r.seq.to_string()];
            let mut nums = vec![String::new(); 10];
            let detail = match &r.payload {
                LogPayload::State {
                    position,
                    velocity,
                    attitude,
                } => {
                    for (slot, v) in nums.iter_mut().zip(position.iter().chain(velocity).chain(attitude)) {
                        *slot = v.to_string();
                    }
                    String::new()
                }
                LogPayload::Mode { from, to } => format!("{from}->{to}"),
                LogPayload::ActionEvent { text } => text.clone(),
                LogPayload::NetStats(s) => format!(
                    "sent={} scheduled={} dropped={} delivered={} unreachable={} rejected={}",
                    s.sent, s.scheduled, s.dropped, s.delivered, s.unreachable, s.rejected
                ),
            };
            row.extend(nums);
            row.push(detail);
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn export_csv(&mut self, path: &Path) -> Result<(), LogError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn count(&self, kind: RecordKind) -> usize {
        self.records.iter().filter(|r| r.kind() == kind).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firmware::modes::ALL_MODES;
    use proptest::prelude::*;

    fn payload() -> impl Strategy<Value = LogPayload> {
        let f = -1e6..1e6f64;
        prop_oneof![
            (prop::array::uniform3(f.clone()), prop::array::uniform3(f.clone()), prop::array::uniform4(f))
                .prop_map(|(position, velocity, attitude)| LogPayload::State {
                    position,
                    velocity,
                    attitude
                }),
            (0..ALL_MODES.len(), 0..ALL_MODES.len()).prop_map(|(a, b)| LogPayload::Mode {
                from: ALL_MODES[a],
                to: ALL_MODES[b]
            }),
            ".{0,40}".prop_map(|text| LogPayload::ActionEvent { text }),
            prop::array::uniform6(any::<u64>()).prop_map(|s| LogPayload::NetStats(NetStats {
                sent: s[0],
                scheduled: s[1],
                dropped: s[2],
                delivered: s[3],
                unreachable: s[4],
                rejected: s[5],
            })),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(recs in prop::collection::vec((0..1_000_000u64, 0..8u16, payload()), 0..60)) {
            let mut log = FlightLog::new();
            for (t, v, p) in recs {
                log.push(SimTime::from_nanos(t), v, p);
            }
            let bytes = log.encode();
            let mut back = FlightLog::decode(&bytes).unwrap();
            prop_assert_eq!(back.records(), log.records());
            prop_assert_eq!(back.encode(), bytes);
        }

        #[test]
        fn records_are_strictly_ordered(recs in prop::collection::vec((0..50u64, 0..3u16, payload()), 0..80)) {
            let mut log = FlightLog::new();
            for (t, v, p) in recs {
                log.push(SimTime::from_nanos(t), v, p);
            }
            for w in log.records().windows(2) {
                prop_assert!(w[0].key() < w[1].key());
            }
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        let mut log = FlightLog::new();
        let bytes = log.encode();
        assert_eq!(bytes, [b'S', b'K', b'L', b'G', LOG_VERSION, 0]);
        assert!(FlightLog::decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn corruption_is_detected() {
        let mut log = FlightLog::new();
        log.push(SimTime::from_millis(100), 1, LogPayload::ActionEvent { text: "takeoff".into() });
        let mut bytes = log.encode();
        let n = bytes.len();
        bytes[n - 6] ^= 0x40;
        assert!(matches!(FlightLog::decode(&bytes), Err(LogError::Corrupt { index: 0, .. })));
        assert!(matches!(FlightLog::decode(b"nope!!"), Err(LogError::BadMagic)));
    }

    #[test]
    fn csv_quotes_text() {
        let mut log = FlightLog::new();
        log.push(
            SimTime::from_millis(1500),
            2,
            LogPayload::ActionEvent {
                text: "rejected: \"busy\", try later".into(),
            },
        );
        log.push(
            SimTime::from_millis(100),
            1,
            LogPayload::Mode {
                from: FlightMode::Disarmed,
                to: FlightMode::ArmedIdle,
            },
        );
        let mut out = Vec::new();
        log.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.100000000,1,mode,1,"));
        assert!(lines[1].ends_with(",Disarmed->ArmedIdle"));
        assert!(lines[2].ends_with(",\"rejected: \"\"busy\"\", try later\""));
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(&rows[1][14], "rejected: \"busy\", try later");
    }
}
