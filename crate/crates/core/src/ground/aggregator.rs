//! State-sharing aggregator: keeps the newest `/state_drone_i` per known
//! vehicle and republishes them as `/tracks` once per second.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::action::SharedState;
use crate::kernel::SimTime;
use crate::netsim::payload::{decode, encode};
use crate::netsim::{DomainId, Envelope, NetError, Network, NodeId};

pub const TRACKS_TOPIC: &str = "/tracks";
pub const TRACKS_PERIOD_NS: u64 = 1_000_000_000;
pub const STALE_AFTER_NS: u64 = 5_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackMsg {
    pub vehicle: u16,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub stamp_ns: u64,
    pub staleness_ms: u64,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracks {
    pub stamp_ns: u64,
    pub tracks: Vec<TrackMsg>,
}

pub struct Aggregator {
    node: NodeId,
    domain: DomainId,
    known: Vec<u16>,
    latest: BTreeMap<u16, (SharedState, SimTime)>,
    pub published: Vec<Tracks>,
    pub ignored_unknown: u64,
}

impl Aggregator {
    pub fn new(node: NodeId, domain: DomainId, known: Vec<u16>) -> Self {
        Aggregator {
            node,
            domain,
            known,
            latest: BTreeMap::new(),
            published: Vec::new(),
            ignored_unknown: 0,
        }
    }

    /// Returns false when the envelope is not a state topic.
    pub fn ingest(&mut self, env: &Envelope, now: SimTime) -> bool {
        if !env.topic.starts_with("/state_drone_") {
            return false;
        }
        let Some(s) = decode::<SharedState>(env.body()) else {
            return true;
        };
        if !self.known.contains(&s.vehicle) || env.topic != crate::action::state_topic(s.vehicle) {
            self.ignored_unknown += 1;
            return true;
        }
        let newer = self.latest.get(&s.vehicle).is_none_or(|(old, _)| s.stamp_ns > old.stamp_ns);
        if newer {
            self.latest.insert(s.vehicle, (s, now));
        }
        true
    }

    pub fn tracks(&self, now: SimTime) -> Tracks {
        let tracks = self
            .latest
            .values()
            .map(|(s, _)| {
                let age = now.as_nanos().saturating_sub(s.stamp_ns);
                TrackMsg {
                    vehicle: s.vehicle,
                    position: s.position,
                    velocity: s.velocity,
                    stamp_ns: s.stamp_ns,
                    staleness_ms: age / 1_000_000,
                    stale: age > STALE_AFTER_NS,
                }
            })
            .collect();
        Tracks {
            stamp_ns: now.as_nanos(),
            tracks,
        }
    }

    pub fn step(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        if !now.as_nanos().is_multiple_of(TRACKS_PERIOD_NS) {
            return Ok(());
        }
        let t = self.tracks(now);
        net.publish(self.node, self.domain, TRACKS_TOPIC, encode(&t), now)?;
        self.published.push(t);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firmware::FlightMode;
    use crate::netsim::{LinkSpec, NodeSpec, GROUND_DOMAIN};
    use crate::rng::SeedTree;

    fn state_env(vehicle: u16, topic_vehicle: u16, stamp_ns: u64) -> Envelope {
        let s = SharedState {
            vehicle,
            stamp_ns,
            position: Vector3::new(1.0, 2.0, -3.0),
            velocity: Vector3::zeros(),
            mode: FlightMode::Loiter,
        };
        Envelope {
            seq: 1,
            send_sim_time: SimTime::from_nanos(stamp_ns),
            src: NodeId(0x200 + vehicle),
            dst: NodeId::BROADCAST,
            domain: GROUND_DOMAIN,
            topic: crate::action::state_topic(topic_vehicle),
            payload: encode(&s),
            flags: 0,
        }
    }

    #[test]
    fn unknown_vehicles_never_appear() {
        let mut a = Aggregator::new(NodeId(1), GROUND_DOMAIN, vec![1, 2]);
        a.ingest(&state_env(1, 1, 10), SimTime::from_millis(20));
        a.ingest(&state_env(7, 7, 10), SimTime::from_millis(20));
        a.ingest(&state_env(2, 1, 10), SimTime::from_millis(20));
        let t = a.tracks(SimTime::from_millis(500));
        assert_eq!(t.tracks.iter().map(|t| t.vehicle).collect::<Vec<_>>(), vec![1]);
        assert_eq!(a.ignored_unknown, 2);
    }

    #[test]
    fn silent_vehicle_goes_stale() {
        let mut a = Aggregator::new(NodeId(1), GROUND_DOMAIN, vec![1, 2]);
        a.ingest(&state_env(1, 1, 1_000_000_000), SimTime::from_millis(1000));
        a.ingest(&state_env(2, 2, 6_000_000_000), SimTime::from_millis(6000));
        let t = a.tracks(SimTime::from_millis(6500));
        assert!(t.tracks[0].stale);
        assert_eq!(t.tracks[0].staleness_ms, 5500);
        assert!(!t.tracks[1].stale);
        assert_eq!(t.tracks[1].staleness_ms, 500);
    }

    #[test]
    fn older_state_does_not_replace_newer() {
        let mut a = Aggregator::new(NodeId(1), GROUND_DOMAIN, vec![1]);
        a.ingest(&state_env(1, 1, 2_000), SimTime::from_millis(1));
        a.ingest(&state_env(1, 1, 1_000), SimTime::from_millis(2));
        assert_eq!(a.tracks(SimTime::from_millis(3)).tracks[0].stamp_ns, 2_000);
    }

    #[test]
    fn publishes_once_per_second() {
        let mut net = Network::new(SeedTree::new(1));
        let s = net.add_subnet("sim", LinkSpec::sim_subnet()).unwrap();
        net.add_node(NodeSpec::new(NodeId(1), "ground").domain(GROUND_DOMAIN).subnet(s)).unwrap();
        let mut a = Aggregator::new(NodeId(1), GROUND_DOMAIN, vec![1]);
        for ms in (4..=3000).step_by(4) {
            a.step(&mut net, SimTime::from_millis(ms)).unwrap();
        }
        assert_eq!(a.published.len(), 3);
    }
}
