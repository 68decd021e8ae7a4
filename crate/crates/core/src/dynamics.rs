//! Simplified rigid-body models for the two airframe classes, stepped with
//! semi-implicit Euler at the physics rate. Frames are local NED (z down),
//! attitude maps body to NED.

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite vehicle state after step")]
    NonFiniteState,
}

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing vehicle parameters: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid vehicle parameters: {0}")]
    Invalid(String),
    #[error("unknown airframe preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    pub body_rate: Vector3<f64>,
}

impl RigidBodyState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        RigidBodyState {
            position,
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            body_rate: Vector3::zeros(),
        }
    }

    pub fn altitude(&self) -> f64 {
        -self.position.z
    }

    pub fn yaw(&self) -> f64 {
        self.attitude.euler_angles().2
    }

    /// Airspeed along the body x axis (no wind), never negative.
    pub fn forward_airspeed(&self) -> f64 {
        (self.attitude * Vector3::x()).dot(&self.velocity).max(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.coords.iter().all(|v| v.is_finite())
            && self.body_rate.iter().all(|v| v.is_finite())
    }

    pub fn on_ground(&self) -> bool {
        self.position.z >= -1e-3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    Multicopter,
    QuadPlaneVtol,
}

fn default_rate_tau() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub name: String,
    pub kind: VehicleKind,
    pub mass: f64,
    pub max_thrust: f64,
    pub linear_drag: [f64; 3],
    #[serde(default)]
    pub max_pusher_thrust: f64,
    pub fw_cruise_speed: f64,
    pub fw_stall_speed: f64,
    pub transition_airspeed: f64,
    /// First-order lag of the body-rate tracking.
    #[serde(default = "default_rate_tau")]
    pub rate_time_constant: f64,
}

pub const PRESET_NAMES: [&str; 4] = ["x500", "iris", "standard_vtol", "alti_transition"];

impl VehicleParams {
    pub fn preset(name: &str) -> Result<Self, ParamsError> {
        let p = match name {
            "x500" => VehicleParams {
                name: "x500".into(),
                kind: VehicleKind::Multicopter,
                mass: 2.0,
                max_thrust: 40.0,
                linear_drag: [0.4, 0.4, 0.6],
                max_pusher_thrust: 0.0,
                fw_cruise_speed: 20.0,
                fw_stall_speed: 12.0,
                transition_airspeed: 14.0,
                rate_time_constant: 0.05,
            },
            "iris" => VehicleParams {
                name: "iris".into(),
                kind: VehicleKind::Multicopter,
                mass: 1.5,
                max_thrust: 30.0,
                linear_drag: [0.3, 0.3, 0.45],
                max_pusher_thrust: 0.0,
                fw_cruise_speed: 20.0,
                fw_stall_speed: 12.0,
                transition_airspeed: 14.0,
                rate_time_constant: 0.05,
            },
            "standard_vtol" => VehicleParams {
                name: "standard_vtol".into(),
                kind: VehicleKind::QuadPlaneVtol,
                mass: 5.0,
                max_thrust: 100.0,
                linear_drag: [0.5, 0.5, 1.5],
                max_pusher_thrust: 30.0,
                fw_cruise_speed: 20.0,
                fw_stall_speed: 12.0,
                transition_airspeed: 14.0,
                rate_time_constant: 0.05,
            },
            "alti_transition" => VehicleParams {
                name: "alti_transition".into(),
                kind: VehicleKind::QuadPlaneVtol,
                mass: 15.0,
                max_thrust: 300.0,
                linear_drag: [1.5, 1.5, 4.5],
                max_pusher_thrust: 90.0,
                fw_cruise_speed: 24.0,
                fw_stall_speed: 14.0,
                transition_airspeed: 16.0,
                rate_time_constant: 0.05,
            },
            other => return Err(ParamsError::UnknownPreset(other.to_string())),
        };
        Ok(p)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ParamsError> {
        let params: VehicleParams = toml::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("vehicle params serialize")
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let bad = |msg: String| Err(ParamsError::Invalid(msg));
        if !(self.mass > 0.0) {
            return bad(format!("mass must be positive, got {}", self.mass));
        }
        if self.kind == VehicleKind::Multicopter && !(self.max_thrust > self.mass * GRAVITY) {
            return bad(format!(
                "max_thrust {} cannot lift mass {} kg",
                self.max_thrust, self.mass
            ));
        }
        if !(self.fw_stall_speed < self.transition_airspeed
            && self.transition_airspeed <= self.fw_cruise_speed)
        {
            return bad("expected fw_stall_speed < transition_airspeed <= fw_cruise_speed".into());
        }
        if self.linear_drag.iter().any(|d| !(*d >= 0.0)) || self.max_pusher_thrust < 0.0 {
            return bad("drag and pusher thrust must be non-negative".into());
        }
        if !(self.rate_time_constant > 0.0) {
            return bad("rate_time_constant must be positive".into());
        }
        Ok(())
    }

    pub fn drag(&self) -> Vector3<f64> {
        Vector3::from(self.linear_drag)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * GRAVITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeFlag {
    MC,
    FW,
    TransitionToFW,
    TransitionToMC,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub collective_thrust: f64,
    pub body_rate_cmd: Vector3<f64>,
    pub pusher_thrust: f64,
    pub mode_flag: ModeFlag,
}

impl ActuatorCommand {
    pub fn idle() -> Self {
        ActuatorCommand {
            collective_thrust: 0.0,
            body_rate_cmd: Vector3::zeros(),
            pusher_thrust: 0.0,
            mode_flag: ModeFlag::MC,
        }
    }
}

/// Fraction of weight carried by the wing at a given forward airspeed.
pub fn wing_lift_fraction(airspeed: f64, params: &VehicleParams) -> f64 {
    (airspeed / params.fw_stall_speed).clamp(0.0, 1.0)
}

/// Share of the collective command the lift motors still deliver in `flag`.
pub fn lift_motor_authority(flag: ModeFlag, airspeed: f64, params: &VehicleParams) -> f64 {
    match flag {
        ModeFlag::MC => 1.0,
        ModeFlag::FW => 0.0,
        ModeFlag::TransitionToFW | ModeFlag::TransitionToMC => {
            1.0 - wing_lift_fraction(airspeed, params)
        }
    }
}

struct ForceModel {
    lift_authority: f64,
    wing: bool,
    pusher: f64,
}

pub fn step_multicopter(
    state: &RigidBodyState,
    cmd: &ActuatorCommand,
    params: &VehicleParams,
    dt: f64,
) -> Result<RigidBodyState, DynamicsError> {
    integrate(
        state,
        cmd,
        params,
        dt,
        ForceModel {
            lift_authority: 1.0,
            wing: false,
            pusher: 0.0,
        },
    )
}

/// Quadplane step: MC behaves as a multicopter; FW uses pusher plus wing lift;
/// transitions blend lift-motor authority against wing lift by airspeed.
pub fn step_vtol(
    state: &RigidBodyState,
    cmd: &ActuatorCommand,
    params: &VehicleParams,
    dt: f64,
) -> Result<RigidBodyState, DynamicsError> {
    if params.kind == VehicleKind::Multicopter || cmd.mode_flag == ModeFlag::MC {
        return step_multicopter(state, cmd, params, dt);
    }
    let airspeed = state.forward_airspeed();
    let model = ForceModel {
        lift_authority: lift_motor_authority(cmd.mode_flag, airspeed, params),
        wing: true,
        pusher: cmd.pusher_thrust.clamp(0.0, params.max_pusher_thrust),
    };
    integrate(state, cmd, params, dt, model)
}

/// Dispatches on airframe kind.
pub fn step(
    state: &RigidBodyState,
    cmd: &ActuatorCommand,
    params: &VehicleParams,
    dt: f64,
) -> Result<RigidBodyState, DynamicsError> {
    match params.kind {
        VehicleKind::Multicopter => step_multicopter(state, cmd, params, dt),
        VehicleKind::QuadPlaneVtol => step_vtol(state, cmd, params, dt),
    }
}

fn integrate(
    state: &RigidBodyState,
    cmd: &ActuatorCommand,
    params: &VehicleParams,
    dt: f64,
    model: ForceModel,
) -> Result<RigidBodyState, DynamicsError> {
    let alpha = (dt / params.rate_time_constant).min(1.0);
    let body_rate = state.body_rate + (cmd.body_rate_cmd - state.body_rate) * alpha;
    let delta = UnitQuaternion::from_scaled_axis(body_rate * dt);
    let attitude = UnitQuaternion::new_normalize((state.attitude * delta).into_inner());

    let m = params.mass;
    let collective = cmd.collective_thrust.clamp(0.0, params.max_thrust);
    let mut force = Vector3::new(0.0, 0.0, m * GRAVITY);
    force += attitude * Vector3::new(model.pusher, 0.0, -collective * model.lift_authority);
    if model.wing {
        let s = wing_lift_fraction(state.forward_airspeed(), params);
        if s > 0.0 {
            let body_z = attitude * Vector3::z();
            let level = body_z.z.max(0.5);
            force -= body_z * (m * GRAVITY * s / level);
        }
    }
    force -= params.drag().component_mul(&state.velocity);

    let mut velocity = state.velocity + force / m * dt;
    let mut position = state.position + velocity * dt;
    if position.z > 0.0 {
        position.z = 0.0;
        velocity = Vector3::zeros();
    }
    let next = RigidBodyState {
        position,
        velocity,
        attitude,
        body_rate,
    };
    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    pub sigma_att: f64,
}

/// Produces (optionally noisy) truth samples from one vehicle's own stream.
pub struct TruthSampler {
    noise: NoiseConfig,
    rng: ChaCha8Rng,
}

impl TruthSampler {
    pub fn new(noise: NoiseConfig, rng: ChaCha8Rng) -> Self {
        TruthSampler { noise, rng }
    }

    fn perturb(rng: &mut impl Rng, v: Vector3<f64>, sigma: f64) -> Vector3<f64> {
        if sigma <= 0.0 {
            return v;
        }
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        v + Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    }

    pub fn sample(&mut self, state: &RigidBodyState) -> GroundTruth {
        let position = Self::perturb(&mut self.rng, state.position, self.noise.sigma_pos);
        let velocity = Self::perturb(&mut self.rng, state.velocity, self.noise.sigma_vel);
        let attitude = if self.noise.sigma_att > 0.0 {
            let axis = Self::perturb(&mut self.rng, Vector3::zeros(), self.noise.sigma_att);
            state.attitude * UnitQuaternion::from_scaled_axis(axis)
        } else {
            state.attitude
        };
        GroundTruth {
            position,
            velocity,
            attitude,
        }
    }

    /// Full state estimate: truth sample plus the true body rates.
    pub fn estimate(&mut self, state: &RigidBodyState) -> RigidBodyState {
        let s = self.sample(state);
        RigidBodyState {
            position: s.position,
            velocity: s.velocity,
            attitude: s.attitude,
            body_rate: state.body_rate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn iris() -> VehicleParams {
        let mut p = VehicleParams::preset("iris").unwrap();
        p.mass = 1.5;
        p
    }

    fn no_drag(mut p: VehicleParams) -> VehicleParams {
        p.linear_drag = [0.0; 3];
        p
    }

    fn thrust(t: f64) -> ActuatorCommand {
        ActuatorCommand {
            collective_thrust: t,
            ..ActuatorCommand::idle()
        }
    }

    #[test]
    fn hover_equilibrium_holds_position() {
        let p = iris();
        let s0 = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, -10.0));
        let s1 = step_multicopter(&s0, &thrust(14.715), &p, 0.004).unwrap();
        assert!((s1.position - s0.position).norm() < 1e-12);
    }

    #[test]
    fn free_fall_one_second() {
        let p = no_drag(iris());
        let mut s = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, -100.0));
        for _ in 0..250 {
            s = step_multicopter(&s, &thrust(0.0), &p, 0.004).unwrap();
        }
        assert!((s.velocity.z - 9.81).abs() < 1e-9);
        // closed form of the semi-implicit series: g dt^2 N(N+1)/2
        let drop = s.position.z + 100.0;
        assert!((drop - 4.92462).abs() < 1e-9, "drop {drop}");
    }

    #[test]
    fn ground_clamps_and_zeroes_velocity() {
        let p = iris();
        let mut s = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, -0.01));
        s.velocity = Vector3::new(1.0, 0.0, 5.0);
        let s1 = step_multicopter(&s, &thrust(0.0), &p, 0.004).unwrap();
        assert_eq!(s1.position.z, 0.0);
        assert_eq!(s1.velocity, Vector3::zeros());
    }

    #[test]
    fn quaternion_stays_normalized_under_rates() {
        let p = iris();
        let mut s = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, -50.0));
        let cmd = ActuatorCommand {
            collective_thrust: 15.0,
            body_rate_cmd: Vector3::new(3.0, -2.0, 1.5),
            ..ActuatorCommand::idle()
        };
        for _ in 0..5000 {
            s = step_multicopter(&s, &cmd, &p, 0.002).unwrap();
            assert!((s.attitude.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn energy_drift_bounded_without_thrust_or_drag() {
        let p = no_drag(iris());
        let mut s = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, -1000.0));
        s.velocity = Vector3::new(5.0, -3.0, 0.0);
        let energy = |s: &RigidBodyState| 0.5 * s.velocity.norm_squared() + GRAVITY * s.altitude();
        let e0 = energy(&s);
        for _ in 0..2500 {
            s = step_multicopter(&s, &thrust(0.0), &p, 0.004).unwrap();
        }
        let drift = (energy(&s) - e0).abs() / e0;
        assert!(drift < 0.005, "drift {drift}");
    }

    #[test]
    fn fixed_wing_cruise_holds_altitude() {
        let p = VehicleParams::preset("standard_vtol").unwrap();
        let mut s = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, -50.0));
        s.velocity = Vector3::new(p.fw_cruise_speed, 0.0, 0.0);
        let cmd = ActuatorCommand {
            collective_thrust: 0.0,
            body_rate_cmd: Vector3::zeros(),
            pusher_thrust: p.linear_drag[0] * p.fw_cruise_speed,
            mode_flag: ModeFlag::FW,
        };
        for _ in 0..250 {
            let next = step_vtol(&s, &cmd, &p, 0.004).unwrap();
            assert!((next.position.z - s.position.z).abs() < 1e-6);
            assert!((next.velocity.x - p.fw_cruise_speed).abs() < 1e-9);
            s = next;
        }
    }

    #[test]
    fn fixed_wing_at_zero_airspeed_sinks_at_full_gravity() {
        let p = VehicleParams::preset("standard_vtol").unwrap();
        let s = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, -50.0));
        let cmd = ActuatorCommand {
            collective_thrust: p.hover_thrust(),
            mode_flag: ModeFlag::FW,
            ..ActuatorCommand::idle()
        };
        let next = step_vtol(&s, &cmd, &p, 0.004).unwrap();
        assert!((next.velocity.z - GRAVITY * 0.004).abs() < 1e-12);
    }

    #[test]
    fn pusher_crossing_tick_matches_discrete_recurrence() {
        let p = VehicleParams::preset("standard_vtol").unwrap();
        let dt = 0.004;
        let (m, d, push) = (p.mass, p.linear_drag[0], p.max_pusher_thrust);
        // closed form of v_k = (P/d)(1 - (1 - d dt/m)^k)
        let oracle_k =
            ((1.0 - p.transition_airspeed * d / push).ln() / (1.0 - d * dt / m).ln()).ceil() as usize;

        let mut s = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, -30.0));
        let mut crossed = None;
        for k in 1..10_000 {
            let cmd = ActuatorCommand {
                collective_thrust: p.hover_thrust(),
                body_rate_cmd: Vector3::zeros(),
                pusher_thrust: push,
                mode_flag: ModeFlag::TransitionToFW,
            };
            s = step_vtol(&s, &cmd, &p, dt).unwrap();
            if s.forward_airspeed() >= p.transition_airspeed {
                crossed = Some(k);
                break;
            }
        }
        assert_eq!(crossed, Some(oracle_k));
    }

    #[test]
    fn truth_sample_exact_without_noise() {
        let mut sampler = TruthSampler::new(NoiseConfig::default(), SeedTree::new(1).stream("truth", 1));
        let mut s = RigidBodyState::at_rest(Vector3::new(1.0, 2.0, -3.0));
        s.velocity = Vector3::new(0.5, 0.0, 0.1);
        let g = sampler.sample(&s);
        assert_eq!(g.position, s.position);
        assert_eq!(g.velocity, s.velocity);
        assert_eq!(g.attitude, s.attitude);
    }

    #[test]
    fn truth_sample_mean_within_clt_bound() {
        let noise = NoiseConfig {
            sigma_pos: 0.1,
            ..NoiseConfig::default()
        };
        let mut sampler = TruthSampler::new(noise, SeedTree::new(7).stream("truth", 1));
        let s = RigidBodyState::at_rest(Vector3::new(10.0, -4.0, -20.0));
        let n = 10_000;
        let mut sum = Vector3::zeros();
        for _ in 0..n {
            sum += sampler.sample(&s).position;
        }
        let mean = sum / n as f64;
        let bound = 0.1 * 3.0 / (n as f64).sqrt();
        for axis in 0..3 {
            assert!((mean[axis] - s.position[axis]).abs() < bound);
        }
    }

    #[test]
    fn two_vehicles_draw_independent_noise() {
        let noise = NoiseConfig {
            sigma_pos: 0.1,
            ..NoiseConfig::default()
        };
        let tree = SeedTree::new(3);
        let mut a = TruthSampler::new(noise, tree.stream("truth", 1));
        let mut b = TruthSampler::new(noise, tree.stream("truth", 2));
        let s = RigidBodyState::at_rest(Vector3::zeros());
        assert_ne!(a.sample(&s).position, b.sample(&s).position);
    }

    #[test]
    fn presets_validate_and_round_trip_through_toml() {
        for name in PRESET_NAMES {
            let p = VehicleParams::preset(name).unwrap();
            p.validate().unwrap();
            let text = p.to_toml_string();
            assert_eq!(VehicleParams::from_toml_str(&text).unwrap(), p);
        }
        assert!(matches!(
            VehicleParams::preset("blimp"),
            Err(ParamsError::UnknownPreset(_))
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = VehicleParams::preset("iris").unwrap();
        p.max_thrust = 10.0;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::preset("standard_vtol").unwrap();
        p.fw_stall_speed = 15.0;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::preset("x500").unwrap();
        p.mass = 0.0;
        assert!(p.validate().is_err());
    }
}
