//! In-process emulated network: nodes attached to domains and subnets,
//! per-link impairments, and a delivery queue drained at tick boundaries.

use std::collections::{BTreeMap, HashMap};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::envelope::{DomainId, Envelope, NodeId, MAX_PAYLOAD};
use super::link::{LinkSpec, LinkState};
use crate::kernel::SimTime;
use crate::rng::SeedTree;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("payload of {0} bytes exceeds the 64 KiB limit")]
    PayloadTooLarge(usize),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{node} is not attached to domain {domain}")]
    DomainViolation { node: NodeId, domain: u16 },
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("invalid link: {0}")]
    InvalidLink(String),
}

/// Glob over topic names; `*` matches any run of characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TopicPattern(pub String);

impl TopicPattern {
    pub fn new(p: impl Into<String>) -> Self {
        TopicPattern(p.into())
    }

    pub fn matches(&self, topic: &str) -> bool {
        glob_match(self.0.as_bytes(), topic.as_bytes())
    }
}

fn glob_match(pat: &[u8], s: &[u8]) -> bool {
    let (mut p, mut i) = (0usize, 0usize);
    let (mut star, mut mark) = (None, 0usize);
    while i < s.len() {
        if p < pat.len() && pat[p] != b'*' && pat[p] == s[i] {
            p += 1;
            i += 1;
        } else if p < pat.len() && pat[p] == b'*' {
            star = Some(p);
            mark = i;
            p += 1;
        } else if let Some(sp) = star {
            p = sp + 1;
            mark += 1;
            i = mark;
        } else {
            return false;
        }
    }
    while p < pat.len() && pat[p] == b'*' {
        p += 1;
    }
    p == pat.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubnetId(pub u16);

#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: NodeId,
    pub name: String,
    pub domains: Vec<DomainId>,
    pub subnets: Vec<SubnetId>,
    pub subscriptions: Vec<TopicPattern>,
    /// Runs in this process; deliveries to non-local nodes go to the remote outbox.
    pub local: bool,
}

impl NodeSpec {
    pub fn new(id: NodeId, name: impl Into<String>) -> Self {
        NodeSpec {
            id,
            name: name.into(),
            domains: Vec::new(),
            subnets: Vec::new(),
            subscriptions: Vec::new(),
            local: true,
        }
    }

    pub fn domain(mut self, d: DomainId) -> Self {
        self.domains.push(d);
        self
    }

    pub fn subnet(mut self, s: SubnetId) -> Self {
        self.subnets.push(s);
        self
    }

    pub fn subscribe(mut self, pattern: &str) -> Self {
        self.subscriptions.push(TopicPattern::new(pattern));
        self
    }

    fn attached(&self, d: DomainId) -> bool {
        self.domains.contains(&d)
    }

    fn subscribed(&self, topic: &str) -> bool {
        self.subscriptions.iter().any(|p| p.matches(topic))
    }
}

#[derive(Debug, Clone)]
pub struct Subnet {
    pub name: String,
    pub link: LinkSpec,
}

/// An envelope bound for a node hosted by another process.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteDelivery {
    pub receiver: NodeId,
    pub deliver_at: SimTime,
    pub envelope: Envelope,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SendOutcome {
    pub scheduled: usize,
    pub dropped: usize,
    pub unreachable: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub sent: u64,
    pub scheduled: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub unreachable: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct QueueKey {
    deliver_at: SimTime,
    send_time: SimTime,
    src: NodeId,
    topic: String,
    seq: u32,
    receiver: NodeId,
}

pub struct Network {
    seeds: SeedTree,
    subnets: Vec<Subnet>,
    nodes: BTreeMap<NodeId, NodeSpec>,
    links: HashMap<(NodeId, NodeId), LinkState>,
    rngs: HashMap<NodeId, ChaCha8Rng>,
    seqs: HashMap<(NodeId, String), u32>,
    queue: BTreeMap<QueueKey, Envelope>,
    inboxes: BTreeMap<NodeId, Vec<Envelope>>,
    remote_outbox: Vec<RemoteDelivery>,
    stats: NetStats,
    delivered_by_node: BTreeMap<NodeId, u64>,
}

impl Network {
    pub fn new(seeds: SeedTree) -> Self {
        Network {
            seeds,
            subnets: Vec::new(),
            nodes: BTreeMap::new(),
            links: HashMap::new(),
            rngs: HashMap::new(),
            seqs: HashMap::new(),
            queue: BTreeMap::new(),
            inboxes: BTreeMap::new(),
            remote_outbox: Vec::new(),
            stats: NetStats::default(),
            delivered_by_node: BTreeMap::new(),
        }
    }

    pub fn add_subnet(&mut self, name: impl Into<String>, link: LinkSpec) -> Result<SubnetId, NetError> {
        link.validate().map_err(NetError::InvalidLink)?;
        self.subnets.push(Subnet {
            name: name.into(),
            link,
        });
        Ok(SubnetId(self.subnets.len() as u16 - 1))
    }

    pub fn set_link(&mut self, subnet: SubnetId, link: LinkSpec) -> Result<(), NetError> {
        link.validate().map_err(NetError::InvalidLink)?;
        self.subnets[subnet.0 as usize].link = link;
        Ok(())
    }

    pub fn subnet(&self, id: SubnetId) -> &Subnet {
        &self.subnets[id.0 as usize]
    }

    pub fn add_node(&mut self, spec: NodeSpec) -> Result<(), NetError> {
        if self.nodes.contains_key(&spec.id) || spec.id == NodeId::BROADCAST {
            return Err(NetError::DuplicateNode(spec.id));
        }
        self.inboxes.insert(spec.id, Vec::new());
        self.nodes.insert(spec.id, spec);
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn set_local(&mut self, id: NodeId, local: bool) {
        if let Some(n) = self.nodes.get_mut(&id) {
            n.local = local;
        }
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    pub fn delivered_to(&self, node: NodeId) -> u64 {
        self.delivered_by_node.get(&node).copied().unwrap_or(0)
    }

    pub fn link_state(&self, src: NodeId, dst: NodeId) -> Option<&LinkState> {
        self.links.get(&(src, dst))
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn next_seq(&mut self, src: NodeId, topic: &str) -> u32 {
        let s = self.seqs.entry((src, topic.to_string())).or_insert(0);
        *s = s.wrapping_add(1);
        *s
    }

    /// Broadcasts to every subscriber of `topic` attached to `domain`.
    pub fn publish(
        &mut self,
        src: NodeId,
        domain: DomainId,
        topic: &str,
        payload: Vec<u8>,
        now: SimTime,
    ) -> Result<SendOutcome, NetError> {
        self.publish_flags(src, domain, topic, payload, 0, now)
    }

    pub fn publish_flags(
        &mut self,
        src: NodeId,
        domain: DomainId,
        topic: &str,
        payload: Vec<u8>,
        flags: u8,
        now: SimTime,
    ) -> Result<SendOutcome, NetError> {
        let env = self.stamp(src, NodeId::BROADCAST, domain, topic, payload, flags, now)?;
        self.send(env)
    }

    pub fn send_to(
        &mut self,
        src: NodeId,
        dst: NodeId,
        domain: DomainId,
        topic: &str,
        payload: Vec<u8>,
        now: SimTime,
    ) -> Result<SendOutcome, NetError> {
        let env = self.stamp(src, dst, domain, topic, payload, 0, now)?;
        self.send(env)
    }

    #[allow(clippy::too_many_arguments)]
    fn stamp(
        &mut self,
        src: NodeId,
        dst: NodeId,
        domain: DomainId,
        topic: &str,
        payload: Vec<u8>,
        flags: u8,
        now: SimTime,
    ) -> Result<Envelope, NetError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(NetError::PayloadTooLarge(payload.len()));
        }
        if !self.nodes.contains_key(&src) {
            return Err(NetError::UnknownNode(src));
        }
        let seq = self.next_seq(src, topic);
        Ok(Envelope {
            seq,
            send_sim_time: now,
            src,
            dst,
            domain,
            topic: topic.to_string(),
            payload,
            flags,
        })
    }

    /// Schedules delivery of a stamped envelope to its receivers. Each
    /// receiver gets an independent draw on its own directed link.
    pub fn send(&mut self, env: Envelope) -> Result<SendOutcome, NetError> {
        if env.payload.len() > MAX_PAYLOAD {
            return Err(NetError::PayloadTooLarge(env.payload.len()));
        }
        let sender = self.nodes.get(&env.src).ok_or(NetError::UnknownNode(env.src))?;
        if !sender.attached(env.domain) {
            self.stats.rejected += 1;
            return Err(NetError::DomainViolation {
                node: env.src,
                domain: env.domain.0,
            });
        }
        let receivers: Vec<NodeId> = if env.dst == NodeId::BROADCAST {
            self.nodes
                .values()
                .filter(|n| n.id != env.src && n.attached(env.domain) && n.subscribed(&env.topic))
                .map(|n| n.id)
                .collect()
        } else {
            match self.nodes.get(&env.dst) {
                Some(n) if n.attached(env.domain) => vec![n.id],
                Some(_) => {
                    self.stats.rejected += 1;
                    return Err(NetError::DomainViolation {
                        node: env.dst,
                        domain: env.domain.0,
                    });
                }
                None => return Err(NetError::UnknownNode(env.dst)),
            }
        };
        self.stats.sent += 1;
        let mut outcome = SendOutcome::default();
        for receiver in receivers {
            let Some(link) = self.link_between(env.src, receiver) else {
                outcome.unreachable += 1;
                self.stats.unreachable += 1;
                continue;
            };
            let rng = self
                .rngs
                .entry(env.src)
                .or_insert_with(|| self.seeds.stream("netsim", env.src.0));
            let state = self.links.entry((env.src, receiver)).or_default();
            match state.schedule(&link, rng, env.send_sim_time, env.payload.len()) {
                None => {
                    outcome.dropped += 1;
                    self.stats.dropped += 1;
                }
                Some(deliver_at) => {
                    outcome.scheduled += 1;
                    self.stats.scheduled += 1;
                    let local = self.nodes.get(&receiver).map(|n| n.local).unwrap_or(false);
                    if local {
                        self.enqueue(receiver, deliver_at, env.clone());
                    } else {
                        self.remote_outbox.push(RemoteDelivery {
                            receiver,
                            deliver_at,
                            envelope: env.clone(),
                        });
                    }
                }
            }
        }
        Ok(outcome)
    }

    /// Shared subnet with the lowest id carries the traffic.
    fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkSpec> {
        let na = self.nodes.get(&a)?;
        let nb = self.nodes.get(&b)?;
        na.subnets
            .iter()
            .filter(|s| nb.subnets.contains(s))
            .min()
            .map(|s| self.subnets[s.0 as usize].link.clone())
    }

    fn enqueue(&mut self, receiver: NodeId, deliver_at: SimTime, env: Envelope) {
        let key = QueueKey {
            deliver_at,
            send_time: env.send_sim_time,
            src: env.src,
            topic: env.topic.clone(),
            seq: env.seq,
            receiver,
        };
        self.queue.insert(key, env);
    }

    /// Accepts an envelope scheduled by a peer process.
    pub fn inject_remote(&mut self, d: RemoteDelivery) {
        self.enqueue(d.receiver, d.deliver_at, d.envelope);
    }

    pub fn take_remote_outbox(&mut self) -> Vec<RemoteDelivery> {
        std::mem::take(&mut self.remote_outbox)
    }

    /// Moves everything due at or before `now` into receiver inboxes.
    pub fn drain(&mut self, now: SimTime) {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().deliver_at > now {
                break;
            }
            let (key, env) = entry.remove_entry();
            self.stats.delivered += 1;
            *self.delivered_by_node.entry(key.receiver).or_default() += 1;
            self.inboxes.entry(key.receiver).or_default().push(env);
        }
    }

    pub fn take_inbox(&mut self, node: NodeId) -> Vec<Envelope> {
        self.inboxes.get_mut(&node).map(std::mem::take).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glob_patterns() {
        let p = TopicPattern::new("/state_drone_*");
        assert!(p.matches("/state_drone_1"));
        assert!(p.matches("/state_drone_12"));
        assert!(!p.matches("/state_drone"));
        assert!(!p.matches("/tracks"));
        assert!(TopicPattern::new("/drone_*/action/req").matches("/drone_3/action/req"));
        assert!(!TopicPattern::new("/drone_*/action/req").matches("/drone_3/action/evt"));
        assert!(TopicPattern::new("*").matches(""));
    }

    fn two_node_net(link: LinkSpec) -> Network {
        let mut net = Network::new(SeedTree::new(5));
        let s = net.add_subnet("sim", link).unwrap();
        net.add_node(NodeSpec::new(NodeId(1), "a").domain(DomainId(1)).subnet(s)).unwrap();
        net.add_node(
            NodeSpec::new(NodeId(2), "b")
                .domain(DomainId(1))
                .subnet(s)
                .subscribe("telemetry"),
        )
        .unwrap();
        net
    }

    #[test]
    fn delivery_waits_for_latency() {
        let mut net = two_node_net(LinkSpec {
            latency_ms: 50.0,
            ..LinkSpec::sim_subnet()
        });
        net.publish(NodeId(1), DomainId(1), "telemetry", vec![1], SimTime::from_millis(1000))
            .unwrap();
        net.drain(SimTime::from_millis(1048));
        assert!(net.take_inbox(NodeId(2)).is_empty());
        net.drain(SimTime::from_millis(1050));
        let got = net.take_inbox(NodeId(2));
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].seq, 1);
    }

    #[test]
    fn seq_increases_per_source_and_topic() {
        let mut net = two_node_net(LinkSpec::sim_subnet());
        for i in 0..5 {
            net.publish(NodeId(1), DomainId(1), "telemetry", vec![i], SimTime::from_millis(i as u64))
                .unwrap();
        }
        net.drain(SimTime::from_millis(100));
        let seqs: Vec<u32> = net.take_inbox(NodeId(2)).iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn payload_limit_enforced() {
        let mut net = two_node_net(LinkSpec::sim_subnet());
        let err = net
            .publish(NodeId(1), DomainId(1), "telemetry", vec![0; MAX_PAYLOAD + 1], SimTime::ZERO)
            .unwrap_err();
        assert_eq!(err, NetError::PayloadTooLarge(MAX_PAYLOAD + 1));
    }

    #[test]
    fn foreign_domain_send_rejected() {
        let mut net = two_node_net(LinkSpec::sim_subnet());
        let err = net
            .publish(NodeId(1), DomainId(2), "telemetry", vec![], SimTime::ZERO)
            .unwrap_err();
        assert!(matches!(err, NetError::DomainViolation { .. }));
    }

    #[test]
    fn unreachable_receivers_counted() {
        let mut net = Network::new(SeedTree::new(5));
        let a = net.add_subnet("a", LinkSpec::sim_subnet()).unwrap();
        let b = net.add_subnet("b", LinkSpec::sim_subnet()).unwrap();
        net.add_node(NodeSpec::new(NodeId(1), "x").domain(DomainId(1)).subnet(a)).unwrap();
        net.add_node(NodeSpec::new(NodeId(2), "y").domain(DomainId(1)).subnet(b).subscribe("t"))
            .unwrap();
        let out = net.publish(NodeId(1), DomainId(1), "t", vec![], SimTime::ZERO).unwrap();
        assert_eq!(out.unreachable, 1);
        assert_eq!(net.stats().unreachable, 1);
    }

    #[test]
    fn remote_receivers_go_to_outbox() {
        let mut net = two_node_net(LinkSpec::sim_subnet());
        net.set_local(NodeId(2), false);
        net.publish(NodeId(1), DomainId(1), "telemetry", vec![7], SimTime::from_millis(4))
            .unwrap();
        let out = net.take_remote_outbox();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].receiver, NodeId(2));
        assert_eq!(out[0].deliver_at, SimTime::from_nanos(4_200_000));
        net.drain(SimTime::from_millis(100));
        assert!(net.take_inbox(NodeId(2)).is_empty());
    }
}
