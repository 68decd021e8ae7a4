//! Goal, feedback and result records of the vehicle-agnostic action API,
//! and the request/event messages that carry them between ground and
//! companion.

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::firmware::{FlightMode, Setpoint, SetpointMode};

pub fn request_topic(vehicle: u16) -> String {
    format!("/drone_{vehicle}/action/req")
}

pub fn event_topic(vehicle: u16) -> String {
    format!("/drone_{vehicle}/action/evt")
}

pub fn state_topic(vehicle: u16) -> String {
    format!("/state_drone_{vehicle}")
}

/// Success criteria shared by every action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub takeoff_alt_m: f64,
    pub orbit_radius_m: f64,
    pub dwell_s: f64,
    pub reposition_arrival_m: f64,
    pub feedback_period_s: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            takeoff_alt_m: 0.5,
            orbit_radius_m: 1.0,
            dwell_s: 1.0,
            reposition_arrival_m: 2.0,
            feedback_period_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSetpoint {
    /// Seconds after the goal starts executing.
    pub at_s: f64,
    pub setpoint: Setpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionGoal {
    Takeoff {
        target_alt_m: f64,
        transition_heading_rad: Option<f64>,
    },
    /// `center` is horizontal (x, y); the z component is ignored.
    Orbit {
        center: Vector3<f64>,
        radius_m: f64,
        alt_m: f64,
        speed_mps: f64,
    },
    Land {
        transition_heading_rad: Option<f64>,
    },
    /// The setpoint stream is replayed from goal start and closed after
    /// `duration_s`.
    Offboard {
        mode: SetpointMode,
        setpoints: Vec<TimedSetpoint>,
        duration_s: f64,
    },
}

impl ActionGoal {
    pub fn name(&self) -> &'static str {
        match self {
            ActionGoal::Takeoff { .. } => "takeoff",
            ActionGoal::Orbit { .. } => "orbit",
            ActionGoal::Land { .. } => "land",
            ActionGoal::Offboard { .. } => "offboard",
        }
    }

    /// Field checks that need no vehicle context.
    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: f64, name: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("invalid field: {name}"))
            }
        };
        match self {
            ActionGoal::Takeoff {
                target_alt_m,
                transition_heading_rad,
            } => {
                finite(*target_alt_m, "target_alt_m")?;
                if *target_alt_m <= 0.0 {
                    return Err("invalid field: target_alt_m must be positive".into());
                }
                if let Some(h) = transition_heading_rad {
                    finite(*h, "transition_heading_rad")?;
                }
            }
            ActionGoal::Orbit {
                center,
                radius_m,
                alt_m,
                speed_mps,
            } => {
                finite(center.x, "center")?;
                finite(center.y, "center")?;
                finite(*alt_m, "alt_m")?;
                finite(*radius_m, "radius_m")?;
                finite(*speed_mps, "speed_mps")?;
                if *radius_m <= 0.0 {
                    return Err("invalid field: radius_m must be positive".into());
                }
                if *speed_mps <= 0.0 {
                    return Err("invalid field: speed_mps must be positive".into());
                }
                if *alt_m <= 0.0 {
                    return Err("invalid field: alt_m must be positive".into());
                }
            }
            ActionGoal::Land {
                transition_heading_rad,
            } => {
                if let Some(h) = transition_heading_rad {
                    finite(*h, "transition_heading_rad")?;
                }
            }
            ActionGoal::Offboard {
                mode,
                setpoints,
                duration_s,
            } => {
                finite(*duration_s, "duration_s")?;
                if *duration_s < 0.0 {
                    return Err("invalid field: duration_s must be non-negative".into());
                }
                let mut last = 0.0;
                for ts in setpoints {
                    if ts.setpoint.mode() != *mode {
                        return Err(format!(
                            "invalid field: {} setpoint in a {} stream",
                            ts.setpoint.mode(),
                            mode
                        ));
                    }
                    finite(ts.at_s, "at_s")?;
                    if ts.at_s < last {
                        return Err("invalid field: setpoint times must not decrease".into());
                    }
                    last = ts.at_s;
                    ts.setpoint.validate().map_err(|e| format!("invalid field: {e}"))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalStatus {
    Succeeded,
    Aborted,
    Canceled,
    Rejected,
}

impl fmt::Display for GoalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GoalStatus::Succeeded => "succeeded",
            GoalStatus::Aborted => "aborted",
            GoalStatus::Canceled => "canceled",
            GoalStatus::Rejected => "rejected",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionFeedback {
    pub goal_id: u32,
    pub stamp_ns: u64,
    pub mode: FlightMode,
    pub position: Vector3<f64>,
    pub altitude_m: f64,
    /// Distance from the orbit center for orbit goals.
    pub radius_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub goal_id: u32,
    pub status: GoalStatus,
    pub detail: String,
    pub stamp_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RequestBody {
    Submit(ActionGoal),
    /// Cancels the active goal, or only the given one when set.
    Cancel { goal_id: Option<u32> },
    Reposition { target: Vector3<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRequest {
    pub client_seq: u32,
    pub body: RequestBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Response {
    Accepted { goal_id: u32 },
    Rejected { reason: String },
    Canceled { goal_id: u32 },
    NotActive,
    Reposition { accepted: bool, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub stamp_ns: u64,
    pub mode: FlightMode,
    pub active: Option<u32>,
    pub recent: Vec<ActionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ServerMsg {
    Response { client_seq: u32, response: Response },
    Feedback(ActionFeedback),
    Result(ActionResult),
    Snapshot(Snapshot),
}

/// Shared vehicle state published by each companion for the other
/// vehicles and the ground aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedState {
    pub vehicle: u16,
    pub stamp_ns: u64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub mode: FlightMode,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topics_match_bridge_patterns() {
        use crate::netsim::TopicPattern;
        assert!(TopicPattern::new("/drone_*/action/req").matches(&request_topic(3)));
        assert!(TopicPattern::new("/drone_*/action/evt").matches(&event_topic(3)));
        assert!(TopicPattern::new("/state_drone_*").matches(&state_topic(12)));
    }

    #[test]
    fn goal_field_validation() {
        let ok = ActionGoal::Takeoff {
            target_alt_m: 30.0,
            transition_heading_rad: None,
        };
        assert!(ok.validate().is_ok());
        let bad = ActionGoal::Takeoff {
            target_alt_m: -1.0,
            transition_heading_rad: None,
        };
        assert!(bad.validate().unwrap_err().starts_with("invalid field"));
        let orbit = ActionGoal::Orbit {
            center: Vector3::zeros(),
            radius_m: 0.0,
            alt_m: 30.0,
            speed_mps: 5.0,
        };
        assert!(orbit.validate().is_err());
        let mixed = ActionGoal::Offboard {
            mode: SetpointMode::Velocity,
            setpoints: vec![TimedSetpoint {
                at_s: 0.0,
                setpoint: Setpoint::Acceleration {
                    accel: Vector3::zeros(),
                },
            }],
            duration_s: 1.0,
        };
        assert!(mixed.validate().is_err());
    }
}
