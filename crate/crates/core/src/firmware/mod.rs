pub mod autopilot;
pub mod config;
pub mod control;
pub mod messages;
pub mod modes;
pub mod node;
pub mod setpoint;

pub use autopilot::{Ack, Autopilot, FirmwareError, NavGoal, NavigatorState};
pub use config::{ControllerGains, Flavor, FlavorConfig};
pub use messages::{FirmwareCommand, FirmwareEvent};
pub use modes::FlightMode;
pub use node::FirmwareNode;
pub use setpoint::{Setpoint, SetpointMode};
