//! Cross-domain topic bridge. One endpoint per domain forwards matching
//! topics over a shared overlay domain; peers republish them locally with
//! the bridged flag and the original (src, seq, domain) header.

use serde::{Deserialize, Serialize};

use super::envelope::{DomainId, Envelope, NodeId, Origin, FLAG_BRIDGED};
use super::network::{NetError, Network, TopicPattern};
use crate::kernel::SimTime;

/// Overlay domain carrying traffic between bridge endpoints.
pub const BRIDGE_DOMAIN: DomainId = DomainId(0xFFFE);
pub const GROUND_DOMAIN: DomainId = DomainId(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Vehicle to ground.
    Up,
    /// Ground to vehicles.
    Down,
    /// Vehicle to the other vehicles.
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRule {
    pub pattern: TopicPattern,
    pub directions: Vec<Direction>,
    #[serde(default)]
    pub sources: Option<Vec<DomainId>>,
    #[serde(default)]
    pub destinations: Option<Vec<DomainId>>,
}

impl BridgeRule {
    pub fn new(pattern: &str, directions: &[Direction]) -> Self {
        BridgeRule {
            pattern: TopicPattern::new(pattern),
            directions: directions.to_vec(),
            sources: None,
            destinations: None,
        }
    }

    fn has(&self, d: Direction) -> bool {
        self.directions.contains(&d)
    }

    /// Whether a message from `from` on this rule may land in `to`.
    pub fn permits(&self, from: DomainId, to: DomainId) -> bool {
        if from == to {
            return false;
        }
        if let Some(src) = &self.sources {
            if !src.contains(&from) {
                return false;
            }
        }
        if let Some(dst) = &self.destinations {
            if !dst.contains(&to) {
                return false;
            }
        }
        match (from == GROUND_DOMAIN, to == GROUND_DOMAIN) {
            (true, false) => self.has(Direction::Down),
            (false, true) => self.has(Direction::Up),
            (false, false) => self.has(Direction::Cross),
            (true, true) => false,
        }
    }

    /// Whether a message published in `from` should leave that domain at all.
    fn exports_from(&self, from: DomainId) -> bool {
        if let Some(src) = &self.sources {
            if !src.contains(&from) {
                return false;
            }
        }
        if from == GROUND_DOMAIN {
            self.has(Direction::Down)
        } else {
            self.has(Direction::Up) || self.has(Direction::Cross)
        }
    }
}

/// State sharing goes to the other vehicles and the ground station;
/// fused tracks and action requests go down; action events come up.
pub fn default_rules() -> Vec<BridgeRule> {
    vec![
        BridgeRule::new("/state_drone_*", &[Direction::Cross, Direction::Up]),
        BridgeRule::new("/tracks", &[Direction::Down]),
        BridgeRule::new("/drone_*/action/req", &[Direction::Down]),
        BridgeRule::new("/drone_*/action/evt", &[Direction::Up]),
    ]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeStats {
    pub exported: u64,
    pub imported: u64,
    pub filtered: u64,
}

#[derive(Debug, Clone)]
pub struct BridgeEndpoint {
    pub node: NodeId,
    pub domain: DomainId,
    pub rules: Vec<BridgeRule>,
    pub enabled: bool,
    pub stats: BridgeStats,
}

impl BridgeEndpoint {
    pub fn new(node: NodeId, domain: DomainId, rules: Vec<BridgeRule>) -> Self {
        BridgeEndpoint {
            node,
            domain,
            rules,
            enabled: true,
            stats: BridgeStats::default(),
        }
    }

    /// Local topic patterns the endpoint must subscribe to.
    pub fn local_patterns(&self) -> Vec<String> {
        self.rules
            .iter()
            .filter(|r| r.exports_from(self.domain))
            .map(|r| r.pattern.0.clone())
            .collect()
    }

    fn rule_for(&self, topic: &str) -> Option<&BridgeRule> {
        self.rules.iter().find(|r| r.pattern.matches(topic))
    }

    /// Handles everything in the endpoint's inbox.
    pub fn step(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        for env in net.take_inbox(self.node) {
            if !self.enabled {
                self.stats.filtered += 1;
                continue;
            }
            if env.domain == BRIDGE_DOMAIN {
                self.import(net, env, now)?;
            } else if env.domain == self.domain && !env.is_bridged() {
                self.export(net, env, now)?;
            } else {
                self.stats.filtered += 1;
            }
        }
        Ok(())
    }

    fn export(&mut self, net: &mut Network, env: Envelope, now: SimTime) -> Result<(), NetError> {
        let Some(rule) = self.rule_for(&env.topic) else {
            self.stats.filtered += 1;
            return Ok(());
        };
        if !rule.exports_from(self.domain) {
            self.stats.filtered += 1;
            return Ok(());
        }
        let origin = Origin {
            src: env.src,
            seq: env.seq,
            domain: env.domain,
        };
        let payload = origin.prepend(&env.payload);
        net.publish_flags(self.node, BRIDGE_DOMAIN, &env.topic, payload, FLAG_BRIDGED, now)?;
        self.stats.exported += 1;
        Ok(())
    }

    fn import(&mut self, net: &mut Network, env: Envelope, now: SimTime) -> Result<(), NetError> {
        let origin = env.origin();
        let allowed = self
            .rule_for(&env.topic)
            .map(|r| r.permits(origin.domain, self.domain))
            .unwrap_or(false);
        if !allowed {
            self.stats.filtered += 1;
            return Ok(());
        }
        net.publish_flags(self.node, self.domain, &env.topic, env.payload, FLAG_BRIDGED, now)?;
        self.stats.imported += 1;
        Ok(())
    }
}
