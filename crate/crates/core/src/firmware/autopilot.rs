//! Flavor-independent autopilot core: mode machine, navigator and the
//! per-step control law.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ControllerGains, FlavorConfig};
use super::control::{self, braking_point, wrap_pi, Cascade};
use super::messages::{FirmwareCommand, FirmwareEvent};
use super::modes::FlightMode;
use super::setpoint::Setpoint;
use crate::dynamics::{ActuatorCommand, RigidBodyState, VehicleKind, VehicleParams, GRAVITY};
use crate::kernel::SimTime;

pub const PARKING_RADIUS_M: f64 = 100.0;
pub const TAKEOFF_CLIMB_RATE: f64 = 3.0;
pub const LAND_DESCENT_RATE: f64 = 1.5;
pub const LAND_FINAL_RATE: f64 = 0.5;
pub const LAND_FINAL_ALT: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FirmwareError {
    #[error("vehicle is not armed")]
    NotArmed,
    #[error("offboard setpoints starved")]
    OffboardStarved,
    #[error("{0}")]
    WrongAirframe(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub reason: String,
}

impl Ack {
    pub fn ok() -> Self {
        Ack {
            accepted: true,
            reason: String::new(),
        }
    }

    pub fn reject(reason: &str) -> Self {
        Ack {
            accepted: false,
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TakeoffStage {
    Climb,
    Yaw,
    Transition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LandStage {
    AlignHeading,
    ToMulticopter,
    Approach,
    Descend,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NavGoal {
    Idle,
    Takeoff {
        target: Vector3<f64>,
        z_ref: f64,
        heading: Option<f64>,
        stage: TakeoffStage,
    },
    Orbit {
        center: Vector3<f64>,
        radius: f64,
        speed: f64,
    },
    Reposition {
        target: Vector3<f64>,
    },
    Land {
        heading: Option<f64>,
        stage: LandStage,
        alt_z: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavigatorState {
    pub goal: NavGoal,
    pub transition_heading: f64,
}

impl Default for NavigatorState {
    fn default() -> Self {
        NavigatorState {
            goal: NavGoal::Idle,
            transition_heading: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Autopilot {
    pub params: VehicleParams,
    pub gains: ControllerGains,
    pub flavor: FlavorConfig,
    mode: FlightMode,
    nav: NavigatorState,
    cascade: Cascade,
    home: Vector3<f64>,
    hold: Vector3<f64>,
    hold_yaw: f64,
    offboard: Option<Setpoint>,
    last_setpoint: Option<SimTime>,
    pusher: f64,
    events: Vec<FirmwareEvent>,
    last_cmd: ActuatorCommand,
    now: SimTime,
}

impl Autopilot {
    pub fn new(params: VehicleParams, gains: ControllerGains, flavor: FlavorConfig, home: Vector3<f64>) -> Self {
        Autopilot {
            params,
            gains,
            flavor,
            mode: FlightMode::Disarmed,
            nav: NavigatorState::default(),
            cascade: Cascade::default(),
            home,
            hold: home,
            hold_yaw: 0.0,
            offboard: None,
            last_setpoint: None,
            pusher: 0.0,
            events: Vec::new(),
            last_cmd: ActuatorCommand::idle(),
            now: SimTime::ZERO,
        }
    }

    pub fn mode(&self) -> FlightMode {
        self.mode
    }

    pub fn nav(&self) -> &NavigatorState {
        &self.nav
    }

    pub fn home(&self) -> Vector3<f64> {
        self.home
    }

    pub fn hold_point(&self) -> Vector3<f64> {
        self.hold
    }

    pub fn last_command(&self) -> &ActuatorCommand {
        &self.last_cmd
    }

    pub fn offboard_setpoint(&self) -> Option<&Setpoint> {
        self.offboard.as_ref()
    }

    pub fn take_events(&mut self) -> Vec<FirmwareEvent> {
        std::mem::take(&mut self.events)
    }

    fn is_vtol(&self) -> bool {
        self.params.kind == VehicleKind::QuadPlaneVtol
    }

    fn dt(&self) -> f64 {
        self.flavor.control_dt_ns as f64 * 1e-9
    }

    /// Moves along a legal edge of the mode graph; illegal requests are ignored.
    fn set_mode(&mut self, to: FlightMode) -> bool {
        if !self.mode.can_transition(to) {
            return false;
        }
        if to != self.mode {
            self.events.push(FirmwareEvent::ModeChanged { from: self.mode, to });
            self.mode = to;
        }
        true
    }

    fn enter_loiter(&mut self, est: &RigidBodyState) {
        if self.set_mode(FlightMode::Loiter) {
            self.hold = braking_point(est, self.gains.braking_accel());
            self.hold_yaw = est.yaw();
            self.nav.goal = NavGoal::Idle;
        }
    }

    fn parking_orbit(&self, est: &RigidBodyState, heading: f64, alt_z: f64) -> NavGoal {
        let right = Vector3::new(-heading.sin(), heading.cos(), 0.0);
        let mut center = est.position + right * PARKING_RADIUS_M;
        center.z = alt_z;
        NavGoal::Orbit {
            center,
            radius: PARKING_RADIUS_M,
            speed: self.params.fw_cruise_speed,
        }
    }

    pub fn handle_command(&mut self, cmd: &FirmwareCommand, est: &RigidBodyState) -> Ack {
        use FlightMode::*;
        let mode = self.mode;
        match cmd {
            FirmwareCommand::Arm => match mode {
                Disarmed if est.on_ground() => {
                    self.set_mode(ArmedIdle);
                    self.home = Vector3::new(est.position.x, est.position.y, 0.0);
                    Ack::ok()
                }
                Disarmed => Ack::reject("in-air"),
                _ => Ack::reject("already armed"),
            },
            FirmwareCommand::Disarm => match mode {
                ArmedIdle | Landed | Disarmed => {
                    self.set_mode(Disarmed);
                    self.nav.goal = NavGoal::Idle;
                    Ack::ok()
                }
                _ => Ack::reject("in-air"),
            },
            FirmwareCommand::Takeoff { alt, heading } => {
                if !(alt.is_finite() && *alt > 0.0) || heading.is_some_and(|h| !h.is_finite()) {
                    return Ack::reject("invalid target");
                }
                if heading.is_some() && !self.is_vtol() {
                    return Ack::reject("wrong-airframe");
                }
                match mode {
                    ArmedIdle => {
                        self.cascade.reset();
                        self.hold_yaw = est.yaw();
                        self.nav.goal = NavGoal::Takeoff {
                            target: Vector3::new(est.position.x, est.position.y, -alt),
                            z_ref: est.position.z,
                            heading: *heading,
                            stage: TakeoffStage::Climb,
                        };
                        self.set_mode(TakingOff);
                        Ack::ok()
                    }
                    Disarmed => Ack::reject("not armed"),
                    _ => Ack::reject("in-air"),
                }
            }
            FirmwareCommand::Land { heading } => {
                if heading.is_some() && !self.is_vtol() {
                    return Ack::reject("wrong-airframe");
                }
                match mode {
                    TakingOff | Loiter | OrbitNav | OffboardActive | RepositionNav => {
                        self.begin_descent(est);
                        Ack::ok()
                    }
                    LandingDescent => Ack::ok(),
                    FixedWingCruise => {
                        self.nav.goal = NavGoal::Land {
                            heading: *heading,
                            stage: if heading.is_some() {
                                LandStage::AlignHeading
                            } else {
                                LandStage::ToMulticopter
                            },
                            alt_z: est.position.z,
                        };
                        if heading.is_none() {
                            self.start_back_transition(est);
                        }
                        Ack::ok()
                    }
                    TransitionFW => {
                        self.nav.goal = NavGoal::Land {
                            heading: None,
                            stage: LandStage::ToMulticopter,
                            alt_z: est.position.z,
                        };
                        self.start_back_transition(est);
                        Ack::ok()
                    }
                    TransitionMC => {
                        self.nav.goal = NavGoal::Land {
                            heading: None,
                            stage: LandStage::ToMulticopter,
                            alt_z: est.position.z,
                        };
                        Ack::ok()
                    }
                    Disarmed => Ack::reject("not armed"),
                    ArmedIdle | Landed => Ack::reject("not airborne"),
                }
            }
            FirmwareCommand::Orbit {
                center,
                radius,
                speed,
            } => {
                if !(center.iter().all(|c| c.is_finite())
                    && radius.is_finite()
                    && *radius > 0.0
                    && speed.is_finite()
                    && *speed > 0.0)
                {
                    return Ack::reject("invalid target");
                }
                let goal = NavGoal::Orbit {
                    center: *center,
                    radius: *radius,
                    speed: *speed,
                };
                match mode {
                    Loiter | OrbitNav | OffboardActive | RepositionNav => {
                        self.nav.goal = goal;
                        self.set_mode(OrbitNav);
                        Ack::ok()
                    }
                    FixedWingCruise => {
                        self.nav.goal = NavGoal::Orbit {
                            center: *center,
                            radius: radius.max(self.min_fw_radius()),
                            speed: speed.max(self.params.transition_airspeed),
                        };
                        Ack::ok()
                    }
                    Disarmed => Ack::reject("not armed"),
                    ArmedIdle | Landed => Ack::reject("not airborne"),
                    _ => Ack::reject("busy"),
                }
            }
            FirmwareCommand::RepositionTo { target } => {
                if !target.iter().all(|c| c.is_finite()) {
                    return Ack::reject("invalid target");
                }
                match mode {
                    Loiter | OrbitNav | OffboardActive | RepositionNav => {
                        self.nav.goal = NavGoal::Reposition { target: *target };
                        self.set_mode(RepositionNav);
                        Ack::ok()
                    }
                    FixedWingCruise | TransitionFW | TransitionMC => Ack::reject("wrong-airframe"),
                    Disarmed => Ack::reject("not armed"),
                    ArmedIdle | Landed => Ack::reject("not airborne"),
                    TakingOff | LandingDescent => Ack::reject("busy"),
                }
            }
            FirmwareCommand::Hold => match mode {
                TakingOff | Loiter | OrbitNav | OffboardActive | RepositionNav | LandingDescent => {
                    self.enter_loiter(est);
                    Ack::ok()
                }
                FixedWingCruise => {
                    let heading = course_of(est);
                    self.nav.goal = self.parking_orbit(est, heading, est.position.z);
                    Ack::ok()
                }
                TransitionFW | TransitionMC => Ack::reject("busy"),
                Disarmed | ArmedIdle | Landed => Ack::ok(),
            },
            FirmwareCommand::StartOffboard => match mode {
                Loiter | OrbitNav | RepositionNav | OffboardActive => {
                    if self.flavor.flavor == super::config::Flavor::A && !self.setpoint_fresh() {
                        return Ack::reject("no setpoint");
                    }
                    self.hold = braking_point(est, self.gains.braking_accel());
                    self.hold_yaw = est.yaw();
                    self.nav.goal = NavGoal::Idle;
                    self.set_mode(OffboardActive);
                    Ack::ok()
                }
                Disarmed => Ack::reject("not armed"),
                ArmedIdle | Landed => Ack::reject("not airborne"),
                _ => Ack::reject("busy"),
            },
        }
    }

    fn min_fw_radius(&self) -> f64 {
        min_fixed_wing_radius(&self.params)
    }

    fn begin_descent(&mut self, est: &RigidBodyState) {
        self.nav.goal = NavGoal::Land {
            heading: None,
            stage: LandStage::Approach,
            alt_z: est.position.z.min(-0.5),
        };
        self.hold_yaw = est.yaw();
        self.set_mode(FlightMode::LandingDescent);
    }

    fn start_back_transition(&mut self, est: &RigidBodyState) {
        if self.set_mode(FlightMode::TransitionMC) {
            self.pusher = 0.0;
            self.hold_yaw = course_of(est);
            self.hold = est.position;
        }
    }

    fn setpoint_fresh(&self) -> bool {
        match self.last_setpoint {
            Some(t) => self.now.saturating_sub(t) <= self.flavor.keepalive_window_ns(),
            None => false,
        }
    }

    /// Accepts an offboard setpoint from the companion.
    pub fn push_setpoint(&mut self, sp: Setpoint, now: SimTime) -> Ack {
        if let Err(e) = sp.validate() {
            return Ack::reject(&format!("invalid field: {e}"));
        }
        if !sp.mode().supported_by(self.flavor.flavor) {
            return Ack::reject("mode unsupported by flavor");
        }
        self.offboard = Some(sp);
        self.last_setpoint = Some(now);
        Ack::ok()
    }

    /// One control step at `now` from the current estimate.
    pub fn step(&mut self, est: &RigidBodyState, now: SimTime) -> ActuatorCommand {
        self.now = now;
        if self.mode == FlightMode::OffboardActive
            && self.flavor.flavor == super::config::Flavor::A
            && !self.setpoint_fresh()
        {
            self.events.push(FirmwareEvent::OffboardStarved);
            self.offboard = None;
            self.enter_loiter(est);
        }
        let cmd = match self.mode {
            FlightMode::Disarmed | FlightMode::ArmedIdle => ActuatorCommand::idle(),
            FlightMode::Landed => {
                self.set_mode(FlightMode::Disarmed);
                ActuatorCommand::idle()
            }
            FlightMode::TakingOff => self.step_takeoff(est),
            FlightMode::Loiter => {
                if let NavGoal::Land { .. } = self.nav.goal {
                    self.begin_descent(est);
                    self.step_land(est)
                } else {
                    let (hold, yaw) = (self.hold, self.hold_yaw);
                    self.mc_position(est, &hold, &Vector3::zeros(), &Vector3::zeros(), yaw, 0.0)
                }
            }
            FlightMode::RepositionNav => {
                let target = match self.nav.goal {
                    NavGoal::Reposition { target } => target,
                    _ => self.hold,
                };
                let yaw = self.hold_yaw;
                self.mc_position(est, &target, &Vector3::zeros(), &Vector3::zeros(), yaw, 0.0)
            }
            FlightMode::OrbitNav => self.step_orbit_mc(est),
            FlightMode::OffboardActive => self.step_offboard(est),
            FlightMode::LandingDescent => self.step_land(est),
            FlightMode::TransitionFW => self.step_transition_fw(est),
            FlightMode::FixedWingCruise => self.step_fixed_wing(est),
            FlightMode::TransitionMC => self.step_transition_mc(est),
        };
        self.last_cmd = cmd;
        cmd
    }

    fn finish(&self, collective: f64, rates: Vector3<f64>, pusher: f64) -> ActuatorCommand {
        ActuatorCommand {
            collective_thrust: collective.clamp(0.0, self.params.max_thrust),
            body_rate_cmd: rates,
            pusher_thrust: pusher.clamp(0.0, self.params.max_pusher_thrust),
            mode_flag: self.mode.mode_flag(),
        }
    }

    /// Yaw setpoint handed to the attitude loop so that heading converges
    /// at `yaw_p` rather than the attitude bandwidth.
    fn shaped_yaw(&self, est: &RigidBodyState, yaw_sp: f64) -> f64 {
        let yaw = est.yaw();
        yaw + wrap_pi(yaw_sp - yaw) * (self.gains.yaw_p / self.gains.att_p).min(1.0)
    }

    fn mc_accel(&mut self, est: &RigidBodyState, accel: &Vector3<f64>, yaw_sp: f64, yaw_rate_ff: f64) -> ActuatorCommand {
        let yaw = self.shaped_yaw(est, yaw_sp);
        let out = Cascade::from_accel(&self.gains, &self.params, est, accel, yaw, yaw_rate_ff);
        self.finish(out.collective, out.body_rate_cmd, 0.0)
    }

    fn mc_velocity(
        &mut self,
        est: &RigidBodyState,
        vel: &Vector3<f64>,
        acc_ff: &Vector3<f64>,
        yaw_sp: f64,
        yaw_rate_ff: f64,
    ) -> ActuatorCommand {
        let dt = self.dt();
        let a = self.cascade.accel_command(&self.gains, est, vel, acc_ff, dt);
        self.mc_accel(est, &a, yaw_sp, yaw_rate_ff)
    }

    fn mc_position(
        &mut self,
        est: &RigidBodyState,
        pos: &Vector3<f64>,
        vel_ff: &Vector3<f64>,
        acc_ff: &Vector3<f64>,
        yaw_sp: f64,
        yaw_rate_ff: f64,
    ) -> ActuatorCommand {
        let v = self.cascade.velocity_command(&self.gains, est, pos, vel_ff);
        self.mc_velocity(est, &v, acc_ff, yaw_sp, yaw_rate_ff)
    }

    fn step_takeoff(&mut self, est: &RigidBodyState) -> ActuatorCommand {
        let NavGoal::Takeoff {
            target,
            mut z_ref,
            heading,
            stage,
        } = self.nav.goal
        else {
            self.enter_loiter(est);
            let (hold, yaw) = (self.hold, self.hold_yaw);
            return self.mc_position(est, &hold, &Vector3::zeros(), &Vector3::zeros(), yaw, 0.0);
        };
        let dt = self.dt();
        match stage {
            TakeoffStage::Climb => {
                let climbing = z_ref > target.z;
                z_ref = (z_ref - TAKEOFF_CLIMB_RATE * dt).max(target.z);
                let vel_ff = if climbing {
                    Vector3::new(0.0, 0.0, -TAKEOFF_CLIMB_RATE)
                } else {
                    Vector3::zeros()
                };
                let sp = Vector3::new(target.x, target.y, z_ref);
                let yaw = self.hold_yaw;
                let cmd = self.mc_position(est, &sp, &vel_ff, &Vector3::zeros(), yaw, 0.0);
                let settled = !climbing
                    && (est.position.z - target.z).abs() < 0.2
                    && est.velocity.z.abs() < 0.3;
                let next = if settled && self.is_vtol() {
                    TakeoffStage::Yaw
                } else {
                    TakeoffStage::Climb
                };
                self.nav.goal = NavGoal::Takeoff {
                    target,
                    z_ref,
                    heading,
                    stage: next,
                };
                if settled && !self.is_vtol() {
                    self.set_mode(FlightMode::Loiter);
                    self.hold = target;
                    self.nav.goal = NavGoal::Idle;
                }
                cmd
            }
            TakeoffStage::Yaw => {
                let h = heading.unwrap_or(self.hold_yaw);
                let aligned = wrap_pi(h - est.yaw()).abs() < 0.02 && est.body_rate.z.abs() < 0.05;
                if aligned {
                    self.nav.transition_heading = h;
                    self.nav.goal = NavGoal::Takeoff {
                        target,
                        z_ref,
                        heading,
                        stage: TakeoffStage::Transition,
                    };
                    self.pusher = 0.0;
                    self.hold = target;
                    self.set_mode(FlightMode::TransitionFW);
                    return self.step_transition_fw(est);
                }
                self.mc_position(est, &target, &Vector3::zeros(), &Vector3::zeros(), h, 0.0)
            }
            TakeoffStage::Transition => self.step_transition_fw(est),
        }
    }

    /// Level attitude at `yaw`; lift rotors hold `alt_z` vertically only.
    fn level_vertical_hold(&mut self, est: &RigidBodyState, alt_z: f64, yaw: f64) -> (f64, Vector3<f64>) {
        let dt = self.dt();
        let sp = Vector3::new(est.position.x, est.position.y, alt_z);
        let mut v = self.cascade.velocity_command(&self.gains, est, &sp, &Vector3::zeros());
        v.x = est.velocity.x;
        v.y = est.velocity.y;
        let a = self.cascade.accel_command(&self.gains, est, &v, &Vector3::zeros(), dt);
        let m = self.params.mass;
        let fz = m * (a.z - GRAVITY) + self.params.drag().z * est.velocity.z;
        let thrust = Vector3::new(0.0, 0.0, fz.min(-0.1 * m * GRAVITY));
        let att = control::attitude_from_thrust(&thrust, yaw);
        let rates = control::rates_from_attitude(&self.gains, &est.attitude, &att, 0.0);
        (control::collective(&self.params, est, &thrust), rates)
    }

    fn step_transition_fw(&mut self, est: &RigidBodyState) -> ActuatorCommand {
        let heading = self.nav.transition_heading;
        let alt_z = self.hold.z;
        if est.forward_airspeed() >= self.params.transition_airspeed {
            self.set_mode(FlightMode::FixedWingCruise);
            self.nav.goal = self.parking_orbit(est, heading, alt_z);
            return self.step_fixed_wing(est);
        }
        let max = self.params.max_pusher_thrust;
        let rate = if self.gains.pusher_ramp_s > 0.0 {
            max / self.gains.pusher_ramp_s
        } else {
            f64::INFINITY
        };
        self.pusher = (self.pusher + rate * self.dt()).min(max);
        let (collective, rates) = self.level_vertical_hold(est, alt_z, heading);
        self.finish(collective, rates, self.pusher)
    }

    fn step_transition_mc(&mut self, est: &RigidBodyState) -> ActuatorCommand {
        if est.forward_airspeed() < self.params.fw_stall_speed {
            let pending = self.nav.goal;
            self.enter_loiter(est);
            if let NavGoal::Land { .. } = pending {
                self.nav.goal = pending;
            }
            return self.step(est, self.now);
        }
        let (alt_z, yaw) = (self.hold.z, self.hold_yaw);
        let (collective, rates) = self.level_vertical_hold(est, alt_z, yaw);
        self.finish(collective, rates, 0.0)
    }

    fn step_fixed_wing(&mut self, est: &RigidBodyState) -> ActuatorCommand {
        let speed = est.velocity.xy().norm().max(1.0);
        let course = course_of(est);
        let (a_lat, alt_z, v_target) = match self.nav.goal {
            NavGoal::Orbit {
                center,
                radius,
                speed: v_sp,
            } => {
                let rel = est.position.xy() - center.xy();
                let d = rel.norm().max(1e-6);
                let u = rel / d;
                let tangent = nalgebra::Vector2::new(-u.y, u.x);
                let desired = tangent * v_sp + u * (0.3 * (radius - d)).clamp(-v_sp, v_sp);
                let course_sp = desired.y.atan2(desired.x);
                let a = speed * speed / radius + 1.5 * speed * wrap_pi(course_sp - course);
                (a, center.z, v_sp)
            }
            NavGoal::Land {
                heading: Some(h),
                stage: LandStage::AlignHeading,
                alt_z,
            } => {
                let err = wrap_pi(h - course);
                if err.abs() < 0.1 {
                    self.nav.goal = NavGoal::Land {
                        heading: Some(h),
                        stage: LandStage::ToMulticopter,
                        alt_z,
                    };
                    self.start_back_transition(est);
                    return self.step_transition_mc(est);
                }
                (1.5 * speed * err, alt_z, self.params.fw_cruise_speed)
            }
            _ => (0.0, est.position.z, self.params.fw_cruise_speed),
        };
        let max_bank = 0.6f64;
        let bank = (a_lat / GRAVITY).atan().clamp(-max_bank, max_bank);
        let alt_err = est.position.z - alt_z;
        let pitch = (0.05 * alt_err + 0.1 * est.velocity.z).clamp(-0.2, 0.2);
        let yaw_rate = GRAVITY * bank.tan() / speed;
        let att_sp = UnitQuaternion::from_euler_angles(bank, pitch, course);
        let rates = control::rates_from_attitude(&self.gains, &est.attitude, &att_sp, yaw_rate);
        let airspeed = est.forward_airspeed();
        let pusher = self.params.drag().x * v_target
            + self.params.mass * 0.8 * (v_target - airspeed);
        self.pusher = pusher.clamp(0.0, self.params.max_pusher_thrust);
        self.finish(0.0, rates, self.pusher)
    }

    fn step_orbit_mc(&mut self, est: &RigidBodyState) -> ActuatorCommand {
        let NavGoal::Orbit {
            center,
            radius,
            speed,
        } = self.nav.goal
        else {
            self.enter_loiter(est);
            return self.last_cmd;
        };
        let rel = est.position.xy() - center.xy();
        let d = rel.norm();
        let u = if d > 0.5 {
            rel / d
        } else {
            let y = est.yaw();
            nalgebra::Vector2::new(y.cos(), y.sin())
        };
        let tangent = nalgebra::Vector2::new(-u.y, u.x);
        let vxy = tangent * speed + u * (self.gains.pos_p * (radius - d));
        let vz_sp = self
            .cascade
            .velocity_command(&self.gains, est, &Vector3::new(est.position.x, est.position.y, center.z), &Vector3::zeros())
            .z;
        let vel = control::limit_velocity(&self.gains, Vector3::new(vxy.x, vxy.y, vz_sp));
        let blend = (d / radius).min(1.0);
        let centripetal = -u * (speed * speed / radius * blend);
        let acc_ff = Vector3::new(centripetal.x, centripetal.y, 0.0);
        let yaw_sp = (-u.y).atan2(-u.x);
        self.mc_velocity(est, &vel, &acc_ff, yaw_sp, speed / radius * blend)
    }

    fn step_offboard(&mut self, est: &RigidBodyState) -> ActuatorCommand {
        let dt = self.dt();
        match self.offboard.clone() {
            Some(Setpoint::Trajectory { pos, vel, yaw }) => {
                self.mc_position(est, &pos, &vel, &Vector3::zeros(), yaw, 0.0)
            }
            Some(Setpoint::Velocity { vel, yaw_rate }) => {
                self.hold_yaw = wrap_pi(self.hold_yaw + yaw_rate * dt);
                let yaw = self.hold_yaw;
                let v = control::limit_velocity(&self.gains, vel);
                self.mc_velocity(est, &v, &Vector3::zeros(), yaw, yaw_rate)
            }
            Some(Setpoint::Acceleration { accel }) => {
                let yaw = self.hold_yaw;
                self.mc_accel(est, &accel, yaw, 0.0)
            }
            Some(Setpoint::Attitude { quat, thrust_norm }) => {
                let att = Setpoint::attitude_quat(&quat);
                let rates = control::rates_from_attitude(&self.gains, &est.attitude, &att, 0.0);
                self.finish(thrust_norm * self.params.max_thrust, rates, 0.0)
            }
            Some(Setpoint::Rates {
                body_rates,
                thrust_norm,
            }) => self.finish(thrust_norm * self.params.max_thrust, body_rates, 0.0),
            None => {
                let (hold, yaw) = (self.hold, self.hold_yaw);
                self.mc_position(est, &hold, &Vector3::zeros(), &Vector3::zeros(), yaw, 0.0)
            }
        }
    }

    fn step_land(&mut self, est: &RigidBodyState) -> ActuatorCommand {
        let (stage, alt_z) = match self.nav.goal {
            NavGoal::Land { stage, alt_z, .. } => (stage, alt_z),
            _ => (LandStage::Descend, est.position.z),
        };
        let yaw = self.hold_yaw;
        let home_xy = Vector3::new(self.home.x, self.home.y, alt_z);
        match stage {
            LandStage::Approach | LandStage::AlignHeading | LandStage::ToMulticopter => {
                let dxy = (est.position.xy() - self.home.xy()).norm();
                if dxy < 0.5 && est.velocity.xy().norm() < 0.3 {
                    self.nav.goal = NavGoal::Land {
                        heading: None,
                        stage: LandStage::Descend,
                        alt_z,
                    };
                }
                self.mc_position(est, &home_xy, &Vector3::zeros(), &Vector3::zeros(), yaw, 0.0)
            }
            LandStage::Descend => {
                if est.position.z > -0.05 && est.velocity.norm() < 0.1 {
                    self.set_mode(FlightMode::Landed);
                    self.nav.goal = NavGoal::Idle;
                    self.cascade.reset();
                    return self.finish(0.0, Vector3::zeros(), 0.0);
                }
                let target = Vector3::new(self.home.x, self.home.y, est.position.z);
                let mut v = self.cascade.velocity_command(&self.gains, est, &target, &Vector3::zeros());
                v.z = if est.altitude() > LAND_FINAL_ALT {
                    LAND_DESCENT_RATE
                } else {
                    LAND_FINAL_RATE
                };
                self.mc_velocity(est, &v, &Vector3::zeros(), yaw, 0.0)
            }
        }
    }
}

/// Horizontal course over ground, or heading when nearly stationary.
/// Tightest circle flown at cruise speed within the bank limit used by
/// orbit guidance.
pub fn min_fixed_wing_radius(params: &VehicleParams) -> f64 {
    let v = params.fw_cruise_speed;
    v * v / (GRAVITY * 0.5f64.tan())
}

pub fn course_of(est: &RigidBodyState) -> f64 {
    let v = est.velocity.xy();
    if v.norm() > 1.0 {
        v.y.atan2(v.x)
    } else {
        est.yaw()
    }
}
