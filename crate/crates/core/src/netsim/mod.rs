pub mod bridge;
pub mod envelope;
pub mod link;
pub mod network;
pub mod payload;
pub mod router;
pub mod udp;

pub use bridge::{default_rules, BridgeEndpoint, BridgeRule, Direction, BRIDGE_DOMAIN, GROUND_DOMAIN};
pub use envelope::{DomainId, Envelope, NodeId, Origin, WireError, FLAG_BRIDGED};
pub use link::{LinkSpec, LinkState};
pub use network::{NetError, NetStats, Network, NodeSpec, RemoteDelivery, SubnetId, TopicPattern};
pub use router::{TelemetryRouter, TELEMETRY_DOMAIN, TELEMETRY_TOPIC};
