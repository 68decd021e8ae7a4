//! Ground-side action client for one vehicle. Requests are retried until
//! the server answers; the server deduplicates by `client_seq`, and lost
//! results are recovered from its periodic snapshot.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::types::{
    request_topic, ActionFeedback, ActionGoal, ActionResult, ClientRequest, GoalStatus, RequestBody, Response,
    ServerMsg, Snapshot,
};
use crate::kernel::SimTime;
use crate::netsim::payload::{decode, encode};
use crate::netsim::{DomainId, Envelope, NetError, Network, NodeId};

pub const RETRY_PERIOD_NS: u64 = 500_000_000;
pub const MAX_TRIES: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GoalHandle {
    pub vehicle: u16,
    pub client_seq: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HandleState {
    Pending,
    Accepted { goal_id: u32 },
    Finished(ActionResult),
    /// Answer to a cancel or reposition request.
    Replied(Response),
    NoResponse,
}

impl HandleState {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            HandleState::Finished(_) | HandleState::Replied(_) | HandleState::NoResponse
        )
    }
}

/// Something the client learned, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientEvent {
    Response { handle: GoalHandle, response: Response },
    Feedback { handle: GoalHandle, feedback: ActionFeedback },
    Result { handle: GoalHandle, result: ActionResult },
    NoResponse { handle: GoalHandle },
}

#[derive(Debug, Clone)]
struct Tracked {
    request: ClientRequest,
    sent_at: Option<SimTime>,
    tries: u32,
    state: HandleState,
    feedback: Vec<ActionFeedback>,
}

pub struct ActionClient {
    pub vehicle: u16,
    node: NodeId,
    domain: DomainId,
    next_seq: u32,
    tracked: BTreeMap<u32, Tracked>,
    by_goal: BTreeMap<u32, u32>,
    snapshot: Option<Snapshot>,
    events: Vec<ClientEvent>,
}

impl ActionClient {
    pub fn new(vehicle: u16, node: NodeId, domain: DomainId) -> Self {
        ActionClient {
            vehicle,
            node,
            domain,
            next_seq: 0,
            tracked: BTreeMap::new(),
            by_goal: BTreeMap::new(),
            snapshot: None,
            events: Vec::new(),
        }
    }

    fn request(&mut self, body: RequestBody) -> GoalHandle {
        self.next_seq += 1;
        let client_seq = self.next_seq;
        self.tracked.insert(
            client_seq,
            Tracked {
                request: ClientRequest { client_seq, body },
                sent_at: None,
                tries: 0,
                state: HandleState::Pending,
                feedback: Vec::new(),
            },
        );
        GoalHandle {
            vehicle: self.vehicle,
            client_seq,
        }
    }

    pub fn submit(&mut self, goal: ActionGoal) -> GoalHandle {
        self.request(RequestBody::Submit(goal))
    }

    pub fn cancel(&mut self, goal_id: Option<u32>) -> GoalHandle {
        self.request(RequestBody::Cancel { goal_id })
    }

    pub fn reposition(&mut self, target: Vector3<f64>) -> GoalHandle {
        self.request(RequestBody::Reposition { target })
    }

    pub fn state(&self, h: GoalHandle) -> Option<&HandleState> {
        self.tracked.get(&h.client_seq).map(|t| &t.state)
    }

    pub fn feedback(&self, h: GoalHandle) -> &[ActionFeedback] {
        self.tracked.get(&h.client_seq).map(|t| t.feedback.as_slice()).unwrap_or(&[])
    }

    pub fn snapshot(&self) -> Option<&Snapshot> {
        self.snapshot.as_ref()
    }

    /// The goal id of the newest accepted goal still awaiting its result.
    pub fn active_goal(&self) -> Option<u32> {
        self.tracked.values().rev().find_map(|t| match t.state {
            HandleState::Accepted { goal_id } => Some(goal_id),
            _ => None,
        })
    }

    pub fn take_events(&mut self) -> Vec<ClientEvent> {
        std::mem::take(&mut self.events)
    }

    fn handle_of(&self, client_seq: u32) -> GoalHandle {
        GoalHandle {
            vehicle: self.vehicle,
            client_seq,
        }
    }

    fn finish(&mut self, client_seq: u32, result: ActionResult) {
        let handle = self.handle_of(client_seq);
        if let Some(t) = self.tracked.get_mut(&client_seq) {
            if matches!(t.state, HandleState::Finished(_)) {
                return;
            }
            t.state = HandleState::Finished(result.clone());
            self.events.push(ClientEvent::Result { handle, result });
        }
    }

    /// Returns false when the envelope is not this client's event topic.
    pub fn ingest(&mut self, env: &Envelope) -> bool {
        if env.topic != super::types::event_topic(self.vehicle) {
            return false;
        }
        let Some(msg) = decode::<ServerMsg>(env.body()) else {
            return true;
        };
        match msg {
            ServerMsg::Response { client_seq, response } => {
                let handle = self.handle_of(client_seq);
                let Some(t) = self.tracked.get_mut(&client_seq) else {
                    return true;
                };
                if t.state != HandleState::Pending {
                    return true;
                }
                self.events.push(ClientEvent::Response {
                    handle,
                    response: response.clone(),
                });
                match (&t.request.body, response) {
                    (RequestBody::Submit(_), Response::Accepted { goal_id }) => {
                        t.state = HandleState::Accepted { goal_id };
                        self.by_goal.insert(goal_id, client_seq);
                        // a result may have overtaken the response
                        let early = self
                            .snapshot
                            .as_ref()
                            .and_then(|s| s.recent.iter().find(|r| r.goal_id == goal_id).cloned());
                        if let Some(r) = early {
                            self.finish(client_seq, r);
                        }
                    }
                    (RequestBody::Submit(_), Response::Rejected { reason }) => {
                        let result = ActionResult {
                            goal_id: 0,
                            status: GoalStatus::Rejected,
                            detail: reason,
                            stamp_ns: env.send_sim_time.as_nanos(),
                        };
                        self.finish(client_seq, result);
                    }
                    (_, r) => t.state = HandleState::Replied(r),
                }
            }
            ServerMsg::Feedback(fb) => {
                if let Some(&seq) = self.by_goal.get(&fb.goal_id) {
                    let handle = self.handle_of(seq);
                    if let Some(t) = self.tracked.get_mut(&seq) {
                        if matches!(t.state, HandleState::Accepted { .. })
                            && t.feedback.last().is_none_or(|l| l.stamp_ns < fb.stamp_ns)
                        {
                            t.feedback.push(fb);
                            self.events.push(ClientEvent::Feedback { handle, feedback: fb });
                        }
                    }
                }
            }
            ServerMsg::Result(r) => {
                if let Some(&seq) = self.by_goal.get(&r.goal_id) {
                    self.finish(seq, r);
                }
            }
            ServerMsg::Snapshot(s) => {
                for r in &s.recent {
                    if let Some(&seq) = self.by_goal.get(&r.goal_id) {
                        self.finish(seq, r.clone());
                    }
                }
                let newer = self.snapshot.as_ref().is_none_or(|o| o.stamp_ns < s.stamp_ns);
                if newer {
                    self.snapshot = Some(s);
                }
            }
        }
        true
    }

    /// Sends new requests and retries unanswered ones.
    pub fn flush(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        let topic = request_topic(self.vehicle);
        let mut gave_up = Vec::new();
        for (seq, t) in self.tracked.iter_mut() {
            if t.state != HandleState::Pending {
                continue;
            }
            let due = t.sent_at.is_none_or(|s| now.saturating_sub(s) >= RETRY_PERIOD_NS);
            if !due {
                continue;
            }
            if t.tries >= MAX_TRIES {
                t.state = HandleState::NoResponse;
                gave_up.push(*seq);
                continue;
            }
            net.publish(self.node, self.domain, &topic, encode(&t.request), now)?;
            t.sent_at = Some(now);
            t.tries += 1;
        }
        for seq in gave_up {
            let handle = self.handle_of(seq);
            self.events.push(ClientEvent::NoResponse { handle });
        }
        Ok(())
    }
}
