//! Messages exchanged between the autopilot and its companion.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::modes::FlightMode;
use super::setpoint::Setpoint;

pub mod topics {
    pub const STATUS: &str = "status";
    pub const LOCAL_POSITION: &str = "local_position";
    pub const SETPOINT_IN: &str = "setpoint_in";
    pub const VEHICLE_COMMAND: &str = "vehicle_command";
    pub const COMMAND: &str = "command";
    pub const COMMAND_ACK: &str = "command_ack";
    pub const SET_TARGET: &str = "set_target";
    pub const SET_TARGET_ACK: &str = "set_target_ack";
    pub const HEARTBEAT: &str = "heartbeat";
    pub const TELEMETRY_RAW: &str = "mavlink_raw";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FirmwareCommand {
    Arm,
    Disarm,
    Takeoff {
        alt: f64,
        heading: Option<f64>,
    },
    Land {
        heading: Option<f64>,
    },
    /// Center z is the orbit altitude (NED, negative up).
    Orbit {
        center: Vector3<f64>,
        radius: f64,
        speed: f64,
    },
    RepositionTo {
        target: Vector3<f64>,
    },
    Hold,
    StartOffboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRequest {
    pub id: u32,
    pub command: FirmwareCommand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandAck {
    pub id: u32,
    pub accepted: bool,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FirmwareEvent {
    OffboardStarved,
    ModeChanged { from: FlightMode, to: FlightMode },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPosition {
    pub stamp_ns: u64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
    pub airspeed: f64,
}

/// Flavor A status stream: mode plus command results and events since the
/// previous status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusMsg {
    pub stamp_ns: u64,
    pub mode: FlightMode,
    pub armed: bool,
    pub acks: Vec<CommandAck>,
    pub events: Vec<FirmwareEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub stamp_ns: u64,
    pub mode: FlightMode,
    pub armed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetTarget {
    pub id: u32,
    pub setpoint: Setpoint,
}

/// Autopilot telemetry fanned out by the router.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub vehicle: u16,
    pub stamp_ns: u64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
    pub mode: FlightMode,
    pub armed: bool,
}
