//! The two firmware flavors as network endpoints around one autopilot core.
//! Flavor A streams status and consumes streamed setpoints; flavor B answers
//! commands and guided targets with explicit acks and beats a 1 Hz heartbeat.

use crate::dynamics::{ActuatorCommand, RigidBodyState};
use crate::kernel::SimTime;
use crate::netsim::payload::{decode, encode};
use crate::netsim::{DomainId, NetError, Network, NodeId, TELEMETRY_DOMAIN};

use super::autopilot::Autopilot;
use super::config::Flavor;
use super::messages::{
    topics, CommandAck, CommandRequest, FirmwareEvent, Heartbeat, LocalPosition, SetTarget,
    StatusMsg, Telemetry,
};
use super::setpoint::Setpoint;

pub const LOCAL_POSITION_PERIOD_NS: u64 = 20_000_000;
pub const STATUS_PERIOD_NS: u64 = 100_000_000;
pub const HEARTBEAT_PERIOD_NS: u64 = 1_000_000_000;
pub const TELEMETRY_PERIOD_NS: u64 = 100_000_000;

pub struct FirmwareNode {
    pub vehicle: u16,
    pub node: NodeId,
    pub domain: DomainId,
    pub router: Option<NodeId>,
    pub autopilot: Autopilot,
    acks: Vec<CommandAck>,
    events: Vec<FirmwareEvent>,
    pub rejected_setpoints: u64,
}

fn due(now: SimTime, period: u64) -> bool {
    now.as_nanos().is_multiple_of(period)
}

impl FirmwareNode {
    pub fn new(vehicle: u16, node: NodeId, domain: DomainId, router: Option<NodeId>, autopilot: Autopilot) -> Self {
        FirmwareNode {
            vehicle,
            node,
            domain,
            router,
            autopilot,
            acks: Vec::new(),
            events: Vec::new(),
            rejected_setpoints: 0,
        }
    }

    pub fn flavor(&self) -> Flavor {
        self.autopilot.flavor.flavor
    }

    /// Subscriptions the node needs in its vehicle domain.
    pub fn subscriptions(flavor: Flavor) -> &'static [&'static str] {
        match flavor {
            Flavor::A => &[topics::SETPOINT_IN, topics::VEHICLE_COMMAND],
            Flavor::B => &[topics::COMMAND, topics::SET_TARGET],
        }
    }

    /// Consumes inbound traffic, runs one control step and publishes any
    /// outputs due at `now`.
    pub fn step(
        &mut self,
        net: &mut Network,
        now: SimTime,
        est: &RigidBodyState,
    ) -> Result<ActuatorCommand, NetError> {
        for env in net.take_inbox(self.node) {
            self.ingest(net, now, est, &env.topic, env.body())?;
        }
        let cmd = self.autopilot.step(est, now);
        self.events.extend(self.autopilot.take_events());
        self.publish(net, now, est)?;
        Ok(cmd)
    }

    fn ingest(
        &mut self,
        net: &mut Network,
        now: SimTime,
        est: &RigidBodyState,
        topic: &str,
        body: &[u8],
    ) -> Result<(), NetError> {
        match (self.flavor(), topic) {
            (Flavor::A, topics::SETPOINT_IN) => {
                if let Some(sp) = decode::<Setpoint>(body) {
                    if !self.autopilot.push_setpoint(sp, now).accepted {
                        self.rejected_setpoints += 1;
                    }
                }
            }
            (Flavor::A, topics::VEHICLE_COMMAND) => {
                if let Some(req) = decode::<CommandRequest>(body) {
                    let ack = self.autopilot.handle_command(&req.command, est);
                    self.acks.push(CommandAck {
                        id: req.id,
                        accepted: ack.accepted,
                        reason: ack.reason,
                    });
                }
            }
            (Flavor::B, topics::COMMAND) => {
                if let Some(req) = decode::<CommandRequest>(body) {
                    let ack = self.autopilot.handle_command(&req.command, est);
                    let msg = CommandAck {
                        id: req.id,
                        accepted: ack.accepted,
                        reason: ack.reason,
                    };
                    net.publish(self.node, self.domain, topics::COMMAND_ACK, encode(&msg), now)?;
                }
            }
            (Flavor::B, topics::SET_TARGET) => {
                if let Some(req) = decode::<SetTarget>(body) {
                    let ack = self.autopilot.push_setpoint(req.setpoint, now);
                    if !ack.accepted {
                        self.rejected_setpoints += 1;
                    }
                    let msg = CommandAck {
                        id: req.id,
                        accepted: ack.accepted,
                        reason: ack.reason,
                    };
                    net.publish(self.node, self.domain, topics::SET_TARGET_ACK, encode(&msg), now)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn publish(&mut self, net: &mut Network, now: SimTime, est: &RigidBodyState) -> Result<(), NetError> {
        let mode = self.autopilot.mode();
        if due(now, LOCAL_POSITION_PERIOD_NS) {
            let msg = LocalPosition {
                stamp_ns: now.as_nanos(),
                position: est.position,
                velocity: est.velocity,
                yaw: est.yaw(),
                airspeed: est.forward_airspeed(),
            };
            net.publish(self.node, self.domain, topics::LOCAL_POSITION, encode(&msg), now)?;
        }
        match self.flavor() {
            Flavor::A => {
                if due(now, STATUS_PERIOD_NS) || !self.acks.is_empty() && due(now, LOCAL_POSITION_PERIOD_NS) {
                    let msg = StatusMsg {
                        stamp_ns: now.as_nanos(),
                        mode,
                        armed: mode.is_armed(),
                        acks: std::mem::take(&mut self.acks),
                        events: std::mem::take(&mut self.events),
                    };
                    net.publish(self.node, self.domain, topics::STATUS, encode(&msg), now)?;
                }
            }
            Flavor::B => {
                self.events.clear();
                if due(now, HEARTBEAT_PERIOD_NS) {
                    let msg = Heartbeat {
                        stamp_ns: now.as_nanos(),
                        mode,
                        armed: mode.is_armed(),
                    };
                    net.publish(self.node, self.domain, topics::HEARTBEAT, encode(&msg), now)?;
                }
            }
        }
        if let Some(router) = self.router {
            if due(now, TELEMETRY_PERIOD_NS) {
                let msg = Telemetry {
                    vehicle: self.vehicle,
                    stamp_ns: now.as_nanos(),
                    position: est.position,
                    velocity: est.velocity,
                    yaw: est.yaw(),
                    mode,
                    armed: mode.is_armed(),
                };
                net.send_to(self.node, router, TELEMETRY_DOMAIN, topics::TELEMETRY_RAW, encode(&msg), now)?;
            }
        }
        Ok(())
    }
}
