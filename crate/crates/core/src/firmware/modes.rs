//! Flight modes and the legal transition graph.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::ModeFlag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlightMode {
    Disarmed,
    ArmedIdle,
    TakingOff,
    Loiter,
    OrbitNav,
    OffboardActive,
    RepositionNav,
    TransitionFW,
    TransitionMC,
    FixedWingCruise,
    LandingDescent,
    Landed,
}

use FlightMode::*;

pub const ALL_MODES: [FlightMode; 12] = [
    Disarmed,
    ArmedIdle,
    TakingOff,
    Loiter,
    OrbitNav,
    OffboardActive,
    RepositionNav,
    TransitionFW,
    TransitionMC,
    FixedWingCruise,
    LandingDescent,
    Landed,
];

impl FlightMode {
    pub fn can_transition(self, to: FlightMode) -> bool {
        if self == to {
            return true;
        }
        match self {
            Disarmed => to == ArmedIdle,
            ArmedIdle => matches!(to, Disarmed | TakingOff),
            TakingOff => matches!(to, Loiter | TransitionFW | LandingDescent | ArmedIdle),
            Loiter => matches!(
                to,
                OrbitNav | OffboardActive | RepositionNav | TransitionFW | LandingDescent
            ),
            OrbitNav | OffboardActive | RepositionNav => {
                matches!(to, OrbitNav | OffboardActive | RepositionNav | Loiter | LandingDescent)
            }
            TransitionFW => matches!(to, FixedWingCruise | TransitionMC),
            FixedWingCruise => to == TransitionMC,
            TransitionMC => to == Loiter,
            LandingDescent => matches!(to, Landed | Loiter),
            Landed => to == Disarmed,
        }
    }

    pub fn is_airborne(self) -> bool {
        !matches!(self, Disarmed | ArmedIdle | Landed)
    }

    pub fn is_armed(self) -> bool {
        self != Disarmed
    }

    /// Modes in which the lift rotors fly the vehicle as a multicopter.
    pub fn is_multicopter_flight(self) -> bool {
        matches!(
            self,
            TakingOff | Loiter | OrbitNav | OffboardActive | RepositionNav | LandingDescent
        )
    }

    pub fn mode_flag(self) -> ModeFlag {
        match self {
            TransitionFW => ModeFlag::TransitionToFW,
            FixedWingCruise => ModeFlag::FW,
            TransitionMC => ModeFlag::TransitionToMC,
            _ => ModeFlag::MC,
        }
    }

    pub fn parse(s: &str) -> Option<FlightMode> {
        ALL_MODES
            .iter()
            .copied()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for FlightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_edges() {
        assert!(Disarmed.can_transition(ArmedIdle));
        assert!(ArmedIdle.can_transition(TakingOff));
        assert!(Landed.can_transition(Disarmed));
        assert!(!Disarmed.can_transition(TakingOff));
        assert!(!ArmedIdle.can_transition(OffboardActive));
        assert!(!Landed.can_transition(TakingOff));
        assert!(!FixedWingCruise.can_transition(Loiter));
    }

    #[test]
    fn offboard_only_from_airborne() {
        for m in ALL_MODES {
            if m.can_transition(OffboardActive) {
                assert!(m.is_airborne(), "{m} reaches offboard");
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for m in ALL_MODES {
            assert_eq!(FlightMode::parse(&m.to_string()), Some(m));
        }
        assert_eq!(FlightMode::parse("loiter"), Some(Loiter));
    }
}
