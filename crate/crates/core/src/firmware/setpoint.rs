//! Offboard setpoints: the five low-level control modes and which firmware
//! flavor accepts each.

use std::fmt;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::config::Flavor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetpointMode {
    Trajectory,
    Velocity,
    Acceleration,
    Attitude,
    Rates,
}

pub const ALL_SETPOINT_MODES: [SetpointMode; 5] = [
    SetpointMode::Trajectory,
    SetpointMode::Velocity,
    SetpointMode::Acceleration,
    SetpointMode::Attitude,
    SetpointMode::Rates,
];

impl SetpointMode {
    pub fn supported_by(self, flavor: Flavor) -> bool {
        match self {
            SetpointMode::Trajectory | SetpointMode::Attitude | SetpointMode::Rates => {
                flavor == Flavor::A
            }
            SetpointMode::Velocity | SetpointMode::Acceleration => flavor == Flavor::B,
        }
    }

    pub fn parse(s: &str) -> Option<SetpointMode> {
        ALL_SETPOINT_MODES
            .iter()
            .copied()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for SetpointMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Setpoint {
    Trajectory {
        pos: Vector3<f64>,
        vel: Vector3<f64>,
        yaw: f64,
    },
    Velocity {
        vel: Vector3<f64>,
        yaw_rate: f64,
    },
    Acceleration {
        accel: Vector3<f64>,
    },
    Attitude {
        /// (w, x, y, z), body to NED.
        quat: [f64; 4],
        thrust_norm: f64,
    },
    Rates {
        body_rates: Vector3<f64>,
        thrust_norm: f64,
    },
}

impl Setpoint {
    pub fn mode(&self) -> SetpointMode {
        match self {
            Setpoint::Trajectory { .. } => SetpointMode::Trajectory,
            Setpoint::Velocity { .. } => SetpointMode::Velocity,
            Setpoint::Acceleration { .. } => SetpointMode::Acceleration,
            Setpoint::Attitude { .. } => SetpointMode::Attitude,
            Setpoint::Rates { .. } => SetpointMode::Rates,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        let thrust_ok = |t: f64| (0.0..=1.0).contains(&t);
        let ok = match self {
            Setpoint::Trajectory { pos, vel, yaw } => finite(pos) && finite(vel) && yaw.is_finite(),
            Setpoint::Velocity { vel, yaw_rate } => finite(vel) && yaw_rate.is_finite(),
            Setpoint::Acceleration { accel } => finite(accel),
            Setpoint::Attitude { quat, thrust_norm } => {
                quat.iter().all(|x| x.is_finite())
                    && quat.iter().map(|x| x * x).sum::<f64>() > 1e-12
                    && thrust_ok(*thrust_norm)
            }
            Setpoint::Rates {
                body_rates,
                thrust_norm,
            } => finite(body_rates) && thrust_ok(*thrust_norm),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid {} setpoint", self.mode()))
        }
    }

    pub fn attitude_quat(quat: &[f64; 4]) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(Quaternion::new(quat[0], quat[1], quat[2], quat[3]))
    }
}
