//! Ground side: per-vehicle action clients, the track aggregator, the
//! telemetry sink, and whichever of the mission runner or console drives
//! the clients.

pub mod aggregator;
pub mod console;
pub mod mission;
pub mod script;

use std::collections::BTreeMap;

use crate::action::{event_topic, ActionClient, ClientEvent};
use crate::firmware::messages::Telemetry;
use crate::kernel::SimTime;
use crate::netsim::payload::decode;
use crate::netsim::{DomainId, NetError, Network, NodeId, TELEMETRY_TOPIC};

pub use aggregator::{Aggregator, TrackMsg, Tracks, TRACKS_TOPIC};
pub use console::Console;
pub use mission::{MissionFailure, MissionReport, MissionRunner};

pub struct GroundStation {
    pub node: NodeId,
    pub domain: DomainId,
    pub clients: BTreeMap<u16, ActionClient>,
    pub aggregator: Aggregator,
    /// Newest router telemetry per vehicle.
    pub telemetry: BTreeMap<u16, Telemetry>,
    pub telemetry_received: u64,
    pub mission: Option<MissionRunner>,
    pub console: Option<Console>,
    /// Client events not yet collected by the logger.
    pub events: Vec<(SimTime, ClientEvent)>,
}

impl GroundStation {
    pub fn new(node: NodeId, domain: DomainId, vehicles: &[u16]) -> Self {
        GroundStation {
            node,
            domain,
            clients: vehicles.iter().map(|&v| (v, ActionClient::new(v, node, domain))).collect(),
            aggregator: Aggregator::new(node, domain, vehicles.to_vec()),
            telemetry: BTreeMap::new(),
            telemetry_received: 0,
            mission: None,
            console: None,
            events: Vec::new(),
        }
    }

    pub fn subscriptions(&self) -> Vec<String> {
        let mut subs: Vec<String> = self.clients.keys().map(|&v| event_topic(v)).collect();
        subs.push("/state_drone_*".into());
        subs.push(TELEMETRY_TOPIC.into());
        subs
    }

    pub fn step(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        for env in net.take_inbox(self.node) {
            if env.topic == TELEMETRY_TOPIC {
                if let Some(t) = decode::<Telemetry>(env.body()) {
                    self.telemetry_received += 1;
                    let newer = self.telemetry.get(&t.vehicle).is_none_or(|o| o.stamp_ns < t.stamp_ns);
                    if newer {
                        self.telemetry.insert(t.vehicle, t);
                    }
                }
                continue;
            }
            if self.aggregator.ingest(&env, now) {
                continue;
            }
            for c in self.clients.values_mut() {
                if c.ingest(&env) {
                    break;
                }
            }
        }
        if let Some(m) = self.mission.as_mut() {
            m.step(&mut self.clients, &self.telemetry, now);
        }
        if let Some(c) = self.console.as_mut() {
            c.step(&mut self.clients, &self.telemetry, now);
        }
        for client in self.clients.values_mut() {
            for ev in client.take_events() {
                if let Some(c) = self.console.as_mut() {
                    c.on_event(&ev);
                }
                self.events.push((now, ev));
            }
            client.flush(net, now)?;
        }
        self.aggregator.step(net, now)
    }

    pub fn mission_finished(&self) -> bool {
        self.mission.as_ref().is_some_and(|m| m.finished())
    }
}
