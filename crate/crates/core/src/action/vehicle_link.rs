//! Companion side of the autopilot link. Flavor A commands are acked inside
//! the streamed status and setpoints are streamed continuously; flavor B
//! commands and guided targets are acked explicitly on reply topics.

use std::collections::VecDeque;

use crate::firmware::messages::{
    topics, CommandAck, CommandRequest, FirmwareEvent, Heartbeat, LocalPosition, SetTarget, StatusMsg,
};
use crate::firmware::{Flavor, FirmwareCommand, FlightMode, Setpoint};
use crate::kernel::SimTime;
use crate::netsim::payload::{decode, encode};
use crate::netsim::{DomainId, Envelope, NetError, Network, NodeId};

const STATUS_ACK_TIMEOUT_NS: u64 = 1_000_000_000;
const STREAM_PERIOD_NS: u64 = 100_000_000;
const MAX_TRIES: u32 = 3;

/// Who asked for a command, so its ack can be routed back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Goal(u32),
    Reposition(u32),
    Cancel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub tag: Tag,
    pub command: FirmwareCommand,
    pub accepted: bool,
    pub reason: String,
}

#[derive(Debug, Clone)]
struct InFlight {
    id: u32,
    tag: Tag,
    command: FirmwareCommand,
    sent_at: SimTime,
    tries: u32,
}

#[derive(Debug, Clone)]
struct TargetInFlight {
    id: u32,
    sent_at: SimTime,
    tries: u32,
}

pub struct VehicleLink {
    pub flavor: Flavor,
    node: NodeId,
    domain: DomainId,
    ack_timeout_ns: u64,
    next_id: u32,
    queue: VecDeque<(Tag, FirmwareCommand)>,
    in_flight: Option<InFlight>,
    outcomes: Vec<Outcome>,
    events: Vec<FirmwareEvent>,
    mode: FlightMode,
    position: Option<LocalPosition>,
    setpoint: Option<Setpoint>,
    setpoint_dirty: bool,
    last_stream: Option<SimTime>,
    target_in_flight: Option<TargetInFlight>,
    pub rejected_targets: u64,
}

impl VehicleLink {
    pub fn new(flavor: Flavor, node: NodeId, domain: DomainId, guided_ack_timeout_ms: u64) -> Self {
        VehicleLink {
            flavor,
            node,
            domain,
            ack_timeout_ns: match flavor {
                Flavor::A => STATUS_ACK_TIMEOUT_NS,
                Flavor::B => guided_ack_timeout_ms * 1_000_000,
            },
            next_id: 0,
            queue: VecDeque::new(),
            in_flight: None,
            outcomes: Vec::new(),
            events: Vec::new(),
            mode: FlightMode::Disarmed,
            position: None,
            setpoint: None,
            setpoint_dirty: false,
            last_stream: None,
            target_in_flight: None,
            rejected_targets: 0,
        }
    }

    pub fn subscriptions(flavor: Flavor) -> &'static [&'static str] {
        match flavor {
            Flavor::A => &[topics::LOCAL_POSITION, topics::STATUS],
            Flavor::B => &[
                topics::LOCAL_POSITION,
                topics::COMMAND_ACK,
                topics::SET_TARGET_ACK,
                topics::HEARTBEAT,
            ],
        }
    }

    /// Last mode reported by the autopilot.
    pub fn mode(&self) -> FlightMode {
        self.mode
    }

    pub fn position(&self) -> Option<&LocalPosition> {
        self.position.as_ref()
    }

    pub fn idle(&self) -> bool {
        self.queue.is_empty() && self.in_flight.is_none()
    }

    pub fn command(&mut self, tag: Tag, command: FirmwareCommand) {
        self.queue.push_back((tag, command));
    }

    /// Drops queued commands; one already on the wire still reports back.
    pub fn clear_commands(&mut self) {
        self.queue.clear();
    }

    pub fn set_setpoint(&mut self, sp: Option<Setpoint>) {
        if self.setpoint != sp {
            self.setpoint_dirty = sp.is_some();
            self.setpoint = sp;
            self.target_in_flight = None;
        }
    }

    pub fn take_outcomes(&mut self) -> Vec<Outcome> {
        std::mem::take(&mut self.outcomes)
    }

    pub fn take_events(&mut self) -> Vec<FirmwareEvent> {
        std::mem::take(&mut self.events)
    }

    /// Returns false when the envelope is not autopilot traffic.
    pub fn ingest(&mut self, env: &Envelope) -> bool {
        let body = env.body();
        match (self.flavor, env.topic.as_str()) {
            (_, topics::LOCAL_POSITION) => {
                if let Some(p) = decode::<LocalPosition>(body) {
                    self.position = Some(p);
                }
            }
            (Flavor::A, topics::STATUS) => {
                if let Some(s) = decode::<StatusMsg>(body) {
                    self.mode = s.mode;
                    self.events.extend(s.events);
                    for ack in s.acks {
                        self.resolve(ack);
                    }
                }
            }
            (Flavor::B, topics::HEARTBEAT) => {
                if let Some(h) = decode::<Heartbeat>(body) {
                    self.mode = h.mode;
                }
            }
            (Flavor::B, topics::COMMAND_ACK) => {
                if let Some(ack) = decode::<CommandAck>(body) {
                    self.resolve(ack);
                }
            }
            (Flavor::B, topics::SET_TARGET_ACK) => {
                if let Some(ack) = decode::<CommandAck>(body) {
                    if self.target_in_flight.as_ref().map(|t| t.id) == Some(ack.id) {
                        self.target_in_flight = None;
                        if !ack.accepted {
                            self.rejected_targets += 1;
                        }
                    }
                }
            }
            _ => return false,
        }
        true
    }

    fn resolve(&mut self, ack: CommandAck) {
        let matches = self.in_flight.as_ref().map(|f| f.id) == Some(ack.id);
        if matches {
            let f = self.in_flight.take().expect("in flight");
            self.outcomes.push(Outcome {
                tag: f.tag,
                command: f.command,
                accepted: ack.accepted,
                reason: ack.reason,
            });
        }
    }

    fn fresh_id(&mut self) -> u32 {
        self.next_id = self.next_id.wrapping_add(1);
        self.next_id
    }

    /// Sends whatever is due: the next command, retries, and setpoints.
    pub fn flush(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        if let Some(f) = &self.in_flight {
            if now.saturating_sub(f.sent_at) >= self.ack_timeout_ns {
                if f.tries >= MAX_TRIES {
                    let f = self.in_flight.take().expect("in flight");
                    self.outcomes.push(Outcome {
                        tag: f.tag,
                        command: f.command,
                        accepted: false,
                        reason: "autopilot timeout".into(),
                    });
                } else {
                    let req = CommandRequest {
                        id: f.id,
                        command: f.command.clone(),
                    };
                    self.send_command(net, &req, now)?;
                    let f = self.in_flight.as_mut().expect("in flight");
                    f.sent_at = now;
                    f.tries += 1;
                }
            }
        }
        // a streamed setpoint goes out before the command that depends on it
        self.flush_setpoint(net, now)?;
        if self.in_flight.is_none() {
            if let Some((tag, command)) = self.queue.pop_front() {
                let id = self.fresh_id();
                let req = CommandRequest {
                    id,
                    command: command.clone(),
                };
                self.send_command(net, &req, now)?;
                self.in_flight = Some(InFlight {
                    id,
                    tag,
                    command,
                    sent_at: now,
                    tries: 1,
                });
            }
        }
        Ok(())
    }

    fn send_command(&mut self, net: &mut Network, req: &CommandRequest, now: SimTime) -> Result<(), NetError> {
        let topic = match self.flavor {
            Flavor::A => topics::VEHICLE_COMMAND,
            Flavor::B => topics::COMMAND,
        };
        net.publish(self.node, self.domain, topic, encode(req), now)?;
        Ok(())
    }

    fn flush_setpoint(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        let Some(sp) = self.setpoint.clone() else {
            return Ok(());
        };
        match self.flavor {
            Flavor::A => {
                let due = self.setpoint_dirty
                    || self
                        .last_stream
                        .is_none_or(|t| now.saturating_sub(t) >= STREAM_PERIOD_NS);
                if due {
                    net.publish(self.node, self.domain, topics::SETPOINT_IN, encode(&sp), now)?;
                    self.last_stream = Some(now);
                    self.setpoint_dirty = false;
                }
            }
            Flavor::B => {
                let retry = match &self.target_in_flight {
                    Some(t) => now.saturating_sub(t.sent_at) >= self.ack_timeout_ns && t.tries < MAX_TRIES,
                    None => false,
                };
                if self.setpoint_dirty || retry {
                    let (id, tries) = match (&self.target_in_flight, retry) {
                        (Some(t), true) => (t.id, t.tries + 1),
                        _ => (self.fresh_id(), 1),
                    };
                    let msg = SetTarget { id, setpoint: sp };
                    net.publish(self.node, self.domain, topics::SET_TARGET, encode(&msg), now)?;
                    self.target_in_flight = Some(TargetInFlight {
                        id,
                        sent_at: now,
                        tries,
                    });
                    self.setpoint_dirty = false;
                }
            }
        }
        Ok(())
    }

    /// Whether the setpoint has been streamed at least once since it was set.
    pub fn setpoint_sent(&self) -> bool {
        self.setpoint.is_some() && !self.setpoint_dirty
    }
}
