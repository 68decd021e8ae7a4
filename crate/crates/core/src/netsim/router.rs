//! Telemetry fan-out: every inbound telemetry envelope is copied to each
//! configured sink in arrival order.

use serde::{Deserialize, Serialize};

use super::envelope::{DomainId, NodeId};
use super::network::{NetError, Network};
use crate::kernel::SimTime;

pub const TELEMETRY_DOMAIN: DomainId = DomainId(0xFFFD);
pub const TELEMETRY_TOPIC: &str = "mavlink";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterStats {
    pub received: u64,
    pub forwarded: u64,
    pub dropped: u64,
    pub unreachable: u64,
}

#[derive(Debug, Clone)]
pub struct TelemetryRouter {
    pub node: NodeId,
    pub sinks: Vec<NodeId>,
    pub stats: RouterStats,
}

impl TelemetryRouter {
    pub fn new(node: NodeId, sinks: Vec<NodeId>) -> Self {
        TelemetryRouter {
            node,
            sinks,
            stats: RouterStats::default(),
        }
    }

    pub fn step(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        for env in net.take_inbox(self.node) {
            self.stats.received += 1;
            for &sink in &self.sinks {
                if net.node(sink).is_none() {
                    self.stats.unreachable += 1;
                    continue;
                }
                let out = net.send_to(
                    self.node,
                    sink,
                    TELEMETRY_DOMAIN,
                    TELEMETRY_TOPIC,
                    env.payload.clone(),
                    now,
                )?;
                self.stats.forwarded += out.scheduled as u64;
                self.stats.dropped += out.dropped as u64;
                self.stats.unreachable += out.unreachable as u64;
            }
        }
        Ok(())
    }
}
