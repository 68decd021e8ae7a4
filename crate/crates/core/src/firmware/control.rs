//! Multicopter cascade: position -> velocity -> acceleration -> thrust
//! vector -> attitude -> body-rate command.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::config::ControllerGains;
use crate::dynamics::{RigidBodyState, VehicleParams, GRAVITY};

pub fn wrap_pi(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = (a + std::f64::consts::PI) % two_pi;
    if x < 0.0 {
        x += two_pi;
    }
    x - std::f64::consts::PI
}

fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, GRAVITY)
}

/// Stopping point for the current velocity under `brake` deceleration.
pub fn braking_point(state: &RigidBodyState, brake: f64) -> Vector3<f64> {
    let v = state.velocity;
    state.position + v * (v.norm() / (2.0 * brake))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Output {
    pub collective: f64,
    pub body_rate_cmd: Vector3<f64>,
    pub thrust_vector: Vector3<f64>,
    pub attitude_sp: UnitQuaternion<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Cascade {
    integral: Vector3<f64>,
}

impl Cascade {
    pub fn reset(&mut self) {
        self.integral = Vector3::zeros();
    }

    /// Square-root shaped position loop: linear near the target, bounded by
    /// the braking deceleration far from it, then speed limited.
    pub fn velocity_command(
        &self,
        gains: &ControllerGains,
        state: &RigidBodyState,
        pos_sp: &Vector3<f64>,
        vel_ff: &Vector3<f64>,
    ) -> Vector3<f64> {
        let err = pos_sp - state.position;
        let shape = |e: f64, a: f64| -> f64 {
            let lin = gains.pos_p * e;
            let root = (2.0 * a * e.abs()).sqrt() * e.signum();
            if lin.abs() < root.abs() {
                lin
            } else {
                root
            }
        };
        let exy = Vector3::new(err.x, err.y, 0.0);
        let dxy = exy.norm();
        let mut v = Vector3::zeros();
        if dxy > 1e-12 {
            v += exy / dxy * shape(dxy, gains.braking_accel());
        }
        v.z = shape(err.z, gains.braking_accel() * 0.5);
        v += vel_ff;
        limit_velocity(gains, v)
    }

    pub fn accel_command(
        &mut self,
        gains: &ControllerGains,
        state: &RigidBodyState,
        vel_sp: &Vector3<f64>,
        acc_ff: &Vector3<f64>,
        dt: f64,
    ) -> Vector3<f64> {
        let err = vel_sp - state.velocity;
        self.integral += err * (gains.vel_i * dt);
        let cap = 2.0;
        self.integral = self.integral.map(|x| x.clamp(-cap, cap));
        acc_ff + err * gains.vel_p + self.integral
    }

    /// Full cascade from an acceleration command.
    pub fn from_accel(
        gains: &ControllerGains,
        params: &VehicleParams,
        state: &RigidBodyState,
        accel: &Vector3<f64>,
        yaw_sp: f64,
        yaw_rate_ff: f64,
    ) -> Output {
        let thrust = thrust_vector(gains, params, state, accel);
        let att = attitude_from_thrust(&thrust, yaw_sp);
        let rates = rates_from_attitude(gains, &state.attitude, &att, yaw_rate_ff);
        Output {
            collective: collective(params, state, &thrust),
            body_rate_cmd: rates,
            thrust_vector: thrust,
            attitude_sp: att,
        }
    }
}

pub fn limit_velocity(gains: &ControllerGains, mut v: Vector3<f64>) -> Vector3<f64> {
    let h = (v.x * v.x + v.y * v.y).sqrt();
    if h > gains.max_horizontal_speed {
        let s = gains.max_horizontal_speed / h;
        v.x *= s;
        v.y *= s;
    }
    v.z = v.z.clamp(-gains.max_climb_rate, gains.max_descent_rate);
    v
}

/// Desired thrust force in NED (m·(a − g) plus drag compensation), with the
/// horizontal share limited to the tilt limit while keeping the vertical share.
pub fn thrust_vector(
    gains: &ControllerGains,
    params: &VehicleParams,
    state: &RigidBodyState,
    accel: &Vector3<f64>,
) -> Vector3<f64> {
    let m = params.mass;
    let mut f = (accel - gravity()) * m + params.drag().component_mul(&state.velocity);
    let min_up = 0.1 * m * GRAVITY;
    if -f.z < min_up {
        f.z = -min_up;
    }
    let up = -f.z;
    let h = (f.x * f.x + f.y * f.y).sqrt();
    let max_h = up * gains.accel_to_tilt_limit.tan();
    if h > max_h {
        let s = max_h / h;
        f.x *= s;
        f.y *= s;
    }
    let cap = params.max_thrust;
    let n = f.norm();
    if n > cap {
        f *= cap / n;
    }
    f
}

/// Attitude whose body −z points along `thrust` with heading `yaw`.
pub fn attitude_from_thrust(thrust: &Vector3<f64>, yaw: f64) -> UnitQuaternion<f64> {
    let z_b = -thrust.normalize();
    let x_c = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut y_b = z_b.cross(&x_c);
    if y_b.norm() < 1e-9 {
        y_b = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
    }
    let y_b = y_b.normalize();
    let x_b = y_b.cross(&z_b);
    let m = Matrix3::from_columns(&[x_b, y_b, z_b]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// P control on the quaternion error, expressed in body axes.
pub fn rates_from_attitude(
    gains: &ControllerGains,
    att: &UnitQuaternion<f64>,
    att_sp: &UnitQuaternion<f64>,
    yaw_rate_ff: f64,
) -> Vector3<f64> {
    let q = att.inverse() * att_sp;
    let q = q.into_inner();
    let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
    let mut rates = q.imag() * (2.0 * sign * gains.att_p);
    rates += att.inverse() * Vector3::new(0.0, 0.0, yaw_rate_ff);
    rates.map(|r| r.clamp(-gains.max_body_rate, gains.max_body_rate))
}

/// Projection of the desired force on the current thrust axis.
pub fn collective(params: &VehicleParams, state: &RigidBodyState, thrust: &Vector3<f64>) -> f64 {
    let axis = -(state.attitude * Vector3::z());
    thrust.dot(&axis).clamp(0.0, params.max_thrust)
}

/// Angle between body −z and straight up.
pub fn tilt_of(att: &UnitQuaternion<f64>) -> f64 {
    let up = -(att * Vector3::z());
    (-up.z).clamp(-1.0, 1.0).acos()
}
