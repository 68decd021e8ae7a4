//! Per-vehicle action server running on the companion. Accepts one motion
//! goal at a time, drives it through the flavor link and reports feedback
//! and a single terminal result.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Vector3;

use super::types::{
    event_topic, state_topic, ActionFeedback, ActionGoal, ActionResult, ClientRequest, GoalStatus,
    RequestBody, Response, ServerMsg, SharedState, Snapshot, Tolerances,
};
use super::vehicle_link::{Outcome, Tag, VehicleLink};
use crate::dynamics::{VehicleKind, VehicleParams};
use crate::firmware::autopilot::min_fixed_wing_radius;
use crate::firmware::messages::FirmwareEvent;
use crate::firmware::{Flavor, FirmwareCommand, FlavorConfig, FlightMode};
use crate::kernel::SimTime;
use crate::netsim::payload::{decode, encode};
use crate::netsim::{DomainId, Envelope, NetError, Network, NodeId};

pub const SNAPSHOT_PERIOD_NS: u64 = 1_000_000_000;
pub const STATE_SHARE_PERIOD_NS: u64 = 500_000_000;
const RECENT_RESULTS: usize = 8;
const REMEMBERED_REQUESTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// Waiting for the commands that start the goal to be acked.
    Commanding,
    Monitoring,
    /// Offboard: streaming, with the start command sent once the first
    /// setpoint is out.
    Streaming { started: bool },
    /// Offboard stream closed; waiting for the hold ack.
    Closing,
}

#[derive(Debug, Clone)]
struct ActiveGoal {
    id: u32,
    goal: ActionGoal,
    accepted_at: SimTime,
    started: SimTime,
    phase: Phase,
    dwell_since: Option<SimTime>,
    next_feedback: SimTime,
}

pub struct ActionServer {
    pub vehicle: u16,
    pub node: NodeId,
    pub domain: DomainId,
    pub kind: VehicleKind,
    pub tolerances: Tolerances,
    params: VehicleParams,
    pub link: VehicleLink,
    next_goal_id: u32,
    active: Option<ActiveGoal>,
    responses: BTreeMap<u32, Response>,
    reposition_waiting: BTreeMap<u32, ()>,
    recent: VecDeque<ActionResult>,
    last_feedback_ns: Option<u64>,
}

impl ActionServer {
    pub fn new(vehicle: u16, node: NodeId, domain: DomainId, params: VehicleParams, flavor: &FlavorConfig) -> Self {
        ActionServer {
            vehicle,
            node,
            domain,
            kind: params.kind,
            tolerances: Tolerances::default(),
            params,
            link: VehicleLink::new(flavor.flavor, node, domain, flavor.guided_ack_timeout_ms),
            next_goal_id: 0,
            active: None,
            responses: BTreeMap::new(),
            reposition_waiting: BTreeMap::new(),
            recent: VecDeque::new(),
            last_feedback_ns: None,
        }
    }

    pub fn flavor(&self) -> Flavor {
        self.link.flavor
    }

    pub fn active_goal(&self) -> Option<(u32, &ActionGoal)> {
        self.active.as_ref().map(|a| (a.id, &a.goal))
    }

    pub fn recent_results(&self) -> impl Iterator<Item = &ActionResult> {
        self.recent.iter()
    }

    fn position(&self) -> Vector3<f64> {
        self.link.position().map(|p| p.position).unwrap_or_else(Vector3::zeros)
    }

    fn emit(&self, net: &mut Network, msg: &ServerMsg, now: SimTime) -> Result<(), NetError> {
        net.publish(self.node, self.domain, &event_topic(self.vehicle), encode(msg), now)?;
        Ok(())
    }

    fn respond(&mut self, net: &mut Network, client_seq: u32, response: Response, now: SimTime) -> Result<(), NetError> {
        self.responses.insert(client_seq, response.clone());
        while self.responses.len() > REMEMBERED_REQUESTS {
            self.responses.pop_first();
        }
        self.emit(net, &ServerMsg::Response { client_seq, response }, now)
    }

    /// Handles a request envelope; returns false for other topics.
    pub fn handle(&mut self, net: &mut Network, env: &Envelope, now: SimTime) -> Result<bool, NetError> {
        if env.topic != super::types::request_topic(self.vehicle) {
            return Ok(false);
        }
        let Some(req) = decode::<ClientRequest>(env.body()) else {
            return Ok(true);
        };
        if let Some(r) = self.responses.get(&req.client_seq).cloned() {
            self.emit(
                net,
                &ServerMsg::Response {
                    client_seq: req.client_seq,
                    response: r,
                },
                now,
            )?;
            return Ok(true);
        }
        if self.reposition_waiting.contains_key(&req.client_seq) {
            return Ok(true);
        }
        match req.body {
            RequestBody::Submit(goal) => {
                let response = match self.admit(&goal) {
                    Ok(()) => {
                        self.next_goal_id += 1;
                        let id = self.next_goal_id;
                        self.active = Some(ActiveGoal {
                            id,
                            goal,
                            accepted_at: now,
                            started: SimTime::ZERO,
                            phase: Phase::Commanding,
                            dwell_since: None,
                            next_feedback: now,
                        });
                        Response::Accepted { goal_id: id }
                    }
                    Err(reason) => Response::Rejected { reason },
                };
                self.respond(net, req.client_seq, response, now)?;
            }
            RequestBody::Cancel { goal_id } => {
                let matches = match (&self.active, goal_id) {
                    (Some(a), Some(g)) => a.id == g,
                    (Some(_), None) => true,
                    (None, _) => false,
                };
                let response = if matches {
                    let id = self.active.as_ref().map(|a| a.id).unwrap_or_default();
                    self.link.clear_commands();
                    self.link.set_setpoint(None);
                    self.link.command(Tag::Cancel, FirmwareCommand::Hold);
                    self.finish(net, GoalStatus::Canceled, "canceled by client", now)?;
                    Response::Canceled { goal_id: id }
                } else {
                    Response::NotActive
                };
                self.respond(net, req.client_seq, response, now)?;
            }
            RequestBody::Reposition { target } => match self.admit_reposition(&target) {
                Ok(()) => {
                    self.reposition_waiting.insert(req.client_seq, ());
                    self.link
                        .command(Tag::Reposition(req.client_seq), FirmwareCommand::RepositionTo { target });
                }
                Err(reason) => {
                    let response = Response::Reposition {
                        accepted: false,
                        reason,
                    };
                    self.respond(net, req.client_seq, response, now)?;
                }
            },
        }
        Ok(true)
    }

    fn admit(&self, goal: &ActionGoal) -> Result<(), String> {
        if self.active.is_some() {
            return Err("busy".into());
        }
        goal.validate()?;
        let mode = self.link.mode();
        let vtol = self.kind == VehicleKind::QuadPlaneVtol;
        match goal {
            ActionGoal::Takeoff {
                transition_heading_rad,
                ..
            } => {
                if transition_heading_rad.is_some() && !vtol {
                    return Err("wrong-airframe".into());
                }
                if !matches!(mode, FlightMode::Disarmed | FlightMode::ArmedIdle) {
                    return Err("busy/in-air".into());
                }
            }
            ActionGoal::Orbit { radius_m, .. } => {
                if !mode.is_airborne() {
                    return Err("not-airborne".into());
                }
                if mode == FlightMode::FixedWingCruise {
                    let min = min_fixed_wing_radius(&self.params);
                    if *radius_m < min {
                        return Err(format!("invalid field: radius_m below the {min:.1} m fixed-wing minimum"));
                    }
                } else if !matches!(
                    mode,
                    FlightMode::Loiter | FlightMode::OrbitNav | FlightMode::RepositionNav | FlightMode::OffboardActive
                ) {
                    return Err("busy".into());
                }
            }
            ActionGoal::Land {
                transition_heading_rad,
            } => {
                if transition_heading_rad.is_some() && !vtol {
                    return Err("wrong-airframe".into());
                }
                if !mode.is_airborne() {
                    return Err("not-airborne".into());
                }
            }
            ActionGoal::Offboard { mode: sp_mode, setpoints, .. } => {
                if !sp_mode.supported_by(self.flavor()) {
                    return Err("mode unsupported by flavor".into());
                }
                if setpoints.is_empty() {
                    return Ok(());
                }
                match mode {
                    FlightMode::Loiter | FlightMode::OrbitNav | FlightMode::RepositionNav | FlightMode::OffboardActive => {}
                    FlightMode::FixedWingCruise | FlightMode::TransitionFW | FlightMode::TransitionMC => {
                        return Err("wrong-airframe".into())
                    }
                    m if m.is_airborne() => return Err("busy".into()),
                    _ => return Err("not-airborne".into()),
                }
            }
        }
        Ok(())
    }

    fn admit_reposition(&self, target: &Vector3<f64>) -> Result<(), String> {
        if !target.iter().all(|c| c.is_finite()) {
            return Err("invalid field: target".into());
        }
        let mode = self.link.mode();
        if matches!(
            mode,
            FlightMode::FixedWingCruise | FlightMode::TransitionFW | FlightMode::TransitionMC
        ) {
            return Err("wrong-airframe".into());
        }
        if !mode.is_airborne() {
            return Err("not-airborne".into());
        }
        if self.active.is_some() {
            return Err("busy".into());
        }
        Ok(())
    }

    fn finish(&mut self, net: &mut Network, status: GoalStatus, detail: &str, now: SimTime) -> Result<(), NetError> {
        let Some(active) = self.active.take() else {
            return Ok(());
        };
        let result = ActionResult {
            goal_id: active.id,
            status,
            detail: detail.to_string(),
            stamp_ns: now.as_nanos(),
        };
        self.recent.push_back(result.clone());
        while self.recent.len() > RECENT_RESULTS {
            self.recent.pop_front();
        }
        self.emit(net, &ServerMsg::Result(result), now)
    }

    /// One companion step: autopilot acks, goal progress, outbound traffic.
    pub fn step(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        for outcome in self.link.take_outcomes() {
            self.on_outcome(net, outcome, now)?;
        }
        let starved = self
            .link
            .take_events()
            .iter()
            .any(|e| matches!(e, FirmwareEvent::OffboardStarved));
        if starved {
            if let Some(a) = &self.active {
                if matches!(a.goal, ActionGoal::Offboard { .. }) {
                    self.link.set_setpoint(None);
                    self.finish(net, GoalStatus::Aborted, "offboard starved", now)?;
                }
            }
        }
        self.advance(net, now)?;
        self.link.flush(net, now)?;
        if now.as_nanos().is_multiple_of(SNAPSHOT_PERIOD_NS) {
            let snap = Snapshot {
                stamp_ns: now.as_nanos(),
                mode: self.link.mode(),
                active: self.active.as_ref().map(|a| a.id),
                recent: self.recent.iter().cloned().collect(),
            };
            self.emit(net, &ServerMsg::Snapshot(snap), now)?;
        }
        if now.as_nanos().is_multiple_of(STATE_SHARE_PERIOD_NS) {
            if let Some(p) = self.link.position() {
                let msg = SharedState {
                    vehicle: self.vehicle,
                    stamp_ns: now.as_nanos(),
                    position: p.position,
                    velocity: p.velocity,
                    mode: self.link.mode(),
                };
                net.publish(self.node, self.domain, &state_topic(self.vehicle), encode(&msg), now)?;
            }
        }
        Ok(())
    }

    fn on_outcome(&mut self, net: &mut Network, o: Outcome, now: SimTime) -> Result<(), NetError> {
        match o.tag {
            Tag::Reposition(client_seq) => {
                self.reposition_waiting.remove(&client_seq);
                let response = Response::Reposition {
                    accepted: o.accepted,
                    reason: o.reason,
                };
                self.respond(net, client_seq, response, now)?;
            }
            Tag::Goal(id) => {
                let Some(active) = self.active.as_mut().filter(|a| a.id == id) else {
                    return Ok(());
                };
                if !o.accepted {
                    self.link.clear_commands();
                    self.link.set_setpoint(None);
                    let detail = format!("autopilot rejected {:?}: {}", o.command, o.reason);
                    return self.finish(net, GoalStatus::Aborted, &detail, now);
                }
                match (active.phase, &o.command) {
                    (Phase::Commanding, _) if self.link.idle() => {
                        active.phase = Phase::Monitoring;
                    }
                    (Phase::Closing, FirmwareCommand::Hold) => {
                        return self.finish(net, GoalStatus::Succeeded, "stream closed", now);
                    }
                    _ => {}
                }
            }
            Tag::Cancel => {}
        }
        Ok(())
    }

    fn feedback(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        let period = (self.tolerances.feedback_period_s * 1e9).round() as u64;
        let pos = self.position();
        let mode = self.link.mode();
        let Some(a) = self.active.as_mut() else {
            return Ok(());
        };
        if now < a.next_feedback {
            return Ok(());
        }
        if self.last_feedback_ns.is_some_and(|t| t >= now.as_nanos()) {
            return Ok(());
        }
        a.next_feedback = now.plus_nanos(period);
        let radius_m = match &a.goal {
            ActionGoal::Orbit { center, .. } => Some(((pos.x - center.x).powi(2) + (pos.y - center.y).powi(2)).sqrt()),
            _ => None,
        };
        let fb = ActionFeedback {
            goal_id: a.id,
            stamp_ns: now.as_nanos(),
            mode,
            position: pos,
            altitude_m: 0.0 - pos.z,
            radius_m,
        };
        self.last_feedback_ns = Some(now.as_nanos());
        self.emit(net, &ServerMsg::Feedback(fb), now)
    }

    fn advance(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        let Some(mut a) = self.active.clone() else {
            return Ok(());
        };
        // accepted goals start executing on the step after acceptance
        if a.accepted_at == now {
            return Ok(());
        }
        let first = a.started == SimTime::ZERO;
        if first {
            a.started = now;
            if let Some(act) = self.active.as_mut() {
                act.started = now;
                act.next_feedback = now;
            }
        }
        self.feedback(net, now)?;
        let mode = self.link.mode();
        let pos = self.position();
        let tol = self.tolerances;
        let dwell_ns = (tol.dwell_s * 1e9).round() as u64;
        let vtol = self.kind == VehicleKind::QuadPlaneVtol;
        match &a.goal {
            ActionGoal::Takeoff {
                target_alt_m,
                transition_heading_rad,
            } => {
                if first {
                    if mode == FlightMode::Disarmed {
                        self.link.command(Tag::Goal(a.id), FirmwareCommand::Arm);
                    }
                    self.link.command(
                        Tag::Goal(a.id),
                        FirmwareCommand::Takeoff {
                            alt: *target_alt_m,
                            heading: *transition_heading_rad,
                        },
                    );
                    return Ok(());
                }
                let settled_mode = if vtol {
                    mode == FlightMode::FixedWingCruise
                } else {
                    mode == FlightMode::Loiter
                };
                let ok = a.phase == Phase::Monitoring && settled_mode && (-pos.z - target_alt_m).abs() < tol.takeoff_alt_m;
                if self.dwell(ok, now, dwell_ns) {
                    self.finish(net, GoalStatus::Succeeded, "altitude reached", now)?;
                }
            }
            ActionGoal::Orbit {
                center,
                radius_m,
                alt_m,
                speed_mps,
            } => {
                if first {
                    self.link.command(
                        Tag::Goal(a.id),
                        FirmwareCommand::Orbit {
                            center: Vector3::new(center.x, center.y, -alt_m),
                            radius: *radius_m,
                            speed: *speed_mps,
                        },
                    );
                    return Ok(());
                }
                let r = ((pos.x - center.x).powi(2) + (pos.y - center.y).powi(2)).sqrt();
                let ok = a.phase == Phase::Monitoring && (r - radius_m).abs() < tol.orbit_radius_m;
                if self.dwell(ok, now, dwell_ns) {
                    self.finish(net, GoalStatus::Succeeded, "on orbit", now)?;
                }
            }
            ActionGoal::Land {
                transition_heading_rad,
            } => {
                if first {
                    self.link.command(
                        Tag::Goal(a.id),
                        FirmwareCommand::Land {
                            heading: *transition_heading_rad,
                        },
                    );
                    return Ok(());
                }
                if a.phase == Phase::Monitoring && mode == FlightMode::Disarmed {
                    self.finish(net, GoalStatus::Succeeded, "landed and disarmed", now)?;
                }
            }
            ActionGoal::Offboard {
                setpoints,
                duration_s,
                ..
            } => {
                if setpoints.is_empty() {
                    return self.finish(net, GoalStatus::Succeeded, "empty stream", now);
                }
                let elapsed = now.saturating_sub(a.started) as f64 * 1e-9;
                match a.phase {
                    Phase::Commanding => {
                        let started = self.flavor() == Flavor::B;
                        if started {
                            self.link.command(Tag::Goal(a.id), FirmwareCommand::StartOffboard);
                        }
                        self.set_phase(Phase::Streaming { started });
                        let sp = current_setpoint(setpoints, elapsed);
                        self.link.set_setpoint(sp);
                    }
                    Phase::Streaming { started } => {
                        if elapsed >= *duration_s {
                            self.link.set_setpoint(None);
                            self.link.clear_commands();
                            self.link.command(Tag::Goal(a.id), FirmwareCommand::Hold);
                            self.set_phase(Phase::Closing);
                            return Ok(());
                        }
                        let sp = current_setpoint(setpoints, elapsed);
                        self.link.set_setpoint(sp);
                        if !started && self.link.setpoint_sent() {
                            self.link.command(Tag::Goal(a.id), FirmwareCommand::StartOffboard);
                            self.set_phase(Phase::Streaming { started: true });
                        }
                    }
                    Phase::Monitoring | Phase::Closing => {}
                }
            }
        }
        Ok(())
    }

    fn set_phase(&mut self, phase: Phase) {
        if let Some(a) = self.active.as_mut() {
            a.phase = phase;
        }
    }

    /// Tracks how long `ok` has held; true once it held for `dwell_ns`.
    fn dwell(&mut self, ok: bool, now: SimTime, dwell_ns: u64) -> bool {
        let Some(a) = self.active.as_mut() else {
            return false;
        };
        if !ok {
            a.dwell_since = None;
            return false;
        }
        let since = *a.dwell_since.get_or_insert(now);
        now.saturating_sub(since) >= dwell_ns
    }
}

fn current_setpoint(
    setpoints: &[super::types::TimedSetpoint],
    elapsed_s: f64,
) -> Option<crate::firmware::Setpoint> {
    setpoints
        .iter()
        .take_while(|ts| ts.at_s <= elapsed_s + 1e-9)
        .last()
        .or_else(|| setpoints.first())
        .map(|ts| ts.setpoint.clone())
}
