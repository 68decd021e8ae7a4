//! Controller gains and per-flavor settings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleKind, VehicleParams};
use crate::kernel::{DT_FLAVOR_A_NS, DT_FLAVOR_B_NS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flavor {
    /// Streaming setpoints, status topics, keepalive failsafe.
    A,
    /// Command/ack endpoints and a latched guided target.
    B,
}

impl Flavor {
    pub fn parse(s: &str) -> Option<Flavor> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Some(Flavor::A),
            "b" => Some(Flavor::B),
            _ => None,
        }
    }

    pub fn default_airframe(self, kind: VehicleKind) -> &'static str {
        match (self, kind) {
            (Flavor::A, VehicleKind::Multicopter) => "x500",
            (Flavor::A, VehicleKind::QuadPlaneVtol) => "standard_vtol",
            (Flavor::B, VehicleKind::Multicopter) => "iris",
            (Flavor::B, VehicleKind::QuadPlaneVtol) => "alti_transition",
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flavor::A => write!(f, "a"),
            Flavor::B => write!(f, "b"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlavorConfig {
    pub flavor: Flavor,
    pub control_dt_ns: u64,
    pub offboard_keepalive_hz: f64,
    pub guided_ack_timeout_ms: u64,
}

impl FlavorConfig {
    pub fn new(flavor: Flavor) -> Self {
        match flavor {
            Flavor::A => FlavorConfig {
                flavor,
                control_dt_ns: DT_FLAVOR_A_NS,
                offboard_keepalive_hz: 2.0,
                guided_ack_timeout_ms: 500,
            },
            Flavor::B => FlavorConfig {
                flavor,
                control_dt_ns: DT_FLAVOR_B_NS,
                offboard_keepalive_hz: 2.0,
                guided_ack_timeout_ms: 500,
            },
        }
    }

    /// Longest silence tolerated between offboard setpoints.
    pub fn keepalive_window_ns(&self) -> u64 {
        (1e9 / self.offboard_keepalive_hz).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub pos_p: f64,
    pub vel_p: f64,
    pub vel_i: f64,
    pub yaw_p: f64,
    pub accel_to_tilt_limit: f64,
    /// Attitude error to body-rate command.
    pub att_p: f64,
    pub max_body_rate: f64,
    pub max_horizontal_speed: f64,
    pub max_climb_rate: f64,
    pub max_descent_rate: f64,
    /// Time for the pusher to ramp from zero to full thrust.
    pub pusher_ramp_s: f64,
}

impl ControllerGains {
    pub fn for_airframe(params: &VehicleParams) -> Self {
        let base = ControllerGains {
            pos_p: 1.4,
            vel_p: 4.0,
            vel_i: 0.3,
            yaw_p: 2.0,
            accel_to_tilt_limit: 0.6,
            att_p: 6.0,
            max_body_rate: 3.0,
            max_horizontal_speed: 10.0,
            max_climb_rate: 3.0,
            max_descent_rate: 2.0,
            pusher_ramp_s: 0.5,
        };
        match params.kind {
            VehicleKind::Multicopter => base,
            VehicleKind::QuadPlaneVtol => ControllerGains {
                pos_p: 1.0,
                vel_p: 3.0,
                max_horizontal_speed: 8.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.pos_p,
            self.vel_p,
            self.vel_i,
            self.yaw_p,
            self.accel_to_tilt_limit,
            self.att_p,
            self.max_body_rate,
            self.max_horizontal_speed,
            self.max_climb_rate,
            self.max_descent_rate,
        ];
        if all.iter().any(|g| !(*g > 0.0)) {
            return Err("all gains must be positive".into());
        }
        if self.accel_to_tilt_limit >= std::f64::consts::FRAC_PI_2 {
            return Err("tilt limit must be below pi/2".into());
        }
        if self.pusher_ramp_s < 0.0 {
            return Err("pusher ramp must be non-negative".into());
        }
        Ok(())
    }

    /// Deceleration assumed when computing a stopping point.
    pub fn braking_accel(&self) -> f64 {
        crate::dynamics::GRAVITY * self.accel_to_tilt_limit.tan() * 0.5
    }
}
