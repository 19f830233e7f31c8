//! Classical controllers: geometric SE3 position/attitude control, an SO3
//! controller driven by desired accelerations, and a linear MPC for circle
//! tracking. All emit the same [`Action`] as the learned policy.

mod mpc;
mod reference;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use mpc::{clamp_acceleration, mpc_circle, mpc_track, riccati, MpcConfig, RiccatiStage};
pub use reference::CircleReference;

use crate::dynamics::{Action, MavParams, MavState};
use crate::math::{vee, E3};

/// Below this `‖a + g‖` (m/s²) the thrust direction is undefined.
pub const THRUST_DIRECTION_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Se3Gains {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Attitude error to body-rate gain.
    pub attitude: [f64; 3],
    /// Lower bound on commanded collective thrust as a fraction of weight.
    pub min_thrust_fraction: f64,
}

impl Default for Se3Gains {
    fn default() -> Self {
        Self {
            position: [9.0, 9.0, 12.0],
            velocity: [6.0, 6.0, 7.0],
            attitude: [10.0, 10.0, 5.0],
            min_thrust_fraction: 0.1,
        }
    }
}

/// Desired position, velocity, feed-forward acceleration and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3Target {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
    /// World-frame yaw rate feed-forward (rad/s).
    pub yaw_rate: f64,
}

impl Se3Target {
    pub fn hold(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            yaw,
            yaw_rate: 0.0,
        }
    }
}

/// Attitude whose body z is `b3` and whose heading is as close to `yaw` as possible.
pub fn attitude_from_thrust(b3: &Vector3<f64>, yaw: f64) -> Matrix3<f64> {
    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut b2 = b3.cross(&heading);
    if b2.norm() < 1e-9 {
        // thrust horizontal and along the heading; any perpendicular will do
        b2 = b3.cross(&Vector3::z());
    }
    let b2 = b2.normalize();
    let b1 = b2.cross(b3);
    Matrix3::from_columns(&[b1, b2, *b3])
}

/// `½ vee(R_dᵀR − RᵀR_d)`.
pub fn attitude_error(r: &Matrix3<f64>, r_des: &Matrix3<f64>) -> Vector3<f64> {
    0.5 * vee(&(r_des.transpose() * r - r.transpose() * r_des))
}

fn throttle_for(thrust: f64, params: &MavParams) -> f64 {
    (thrust / params.max_collective_thrust() * params.throttle_max).clamp(0.0, params.throttle_max)
}

/// Thrust and rate command that realises the acceleration `a_des` with heading `yaw`.
///
/// The collective thrust is the projection of `m (a_des + g e₃)` on the
/// current body z axis. If `‖a_des + g‖` is below [`THRUST_DIRECTION_EPS`] the
/// vehicle is told to level out at the minimum thrust.
pub fn so3_from_acceleration(
    a_des: &Vector3<f64>,
    yaw: f64,
    yaw_rate: f64,
    state: &MavState,
    params: &MavParams,
    gains: &Se3Gains,
) -> Action {
    let r = &state.attitude;
    let f = a_des + params.gravity * E3;
    let min_thrust = gains.min_thrust_fraction * params.weight();
    let (b3, thrust) = if f.norm() < THRUST_DIRECTION_EPS {
        (E3, min_thrust)
    } else {
        let b3 = f.normalize();
        let thrust = params.mass * f.dot(&(r * E3));
        (b3, thrust.max(min_thrust))
    };
    let r_des = attitude_from_thrust(&b3, yaw);
    let e_r = attitude_error(r, &r_des);
    let k = Vector3::from(gains.attitude);
    let ff = r.transpose() * (yaw_rate * E3);
    let mut rates = -k.component_mul(&e_r) + ff;
    for i in 0..3 {
        rates[i] = rates[i].clamp(-params.max_body_rate[i], params.max_body_rate[i]);
    }
    Action::new(throttle_for(thrust, params), rates)
}

/// Desired acceleration of the position PD law.
pub fn se3_acceleration(state: &MavState, target: &Se3Target, gains: &Se3Gains) -> Vector3<f64> {
    let ep = state.position - target.position;
    let ev = state.velocity - target.velocity;
    -Vector3::from(gains.position).component_mul(&ep)
        - Vector3::from(gains.velocity).component_mul(&ev)
        + target.acceleration
}

/// Geometric position and attitude controller.
pub fn se3_control(
    state: &MavState,
    target: &Se3Target,
    params: &MavParams,
    gains: &Se3Gains,
) -> Action {
    let a = se3_acceleration(state, target, gains);
    so3_from_acceleration(&a, target.yaw, target.yaw_rate, state, params, gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{rot_from_euler, rot_z};
    use approx::assert_relative_eq;

    fn hover() -> (MavState, MavParams) {
        let p = MavParams::default();
        (MavState::hover_at(Vector3::new(0.0, 0.0, 2.0), &p), p)
    }

    #[test]
    fn hover_at_target_is_hover_command() {
        let (s, p) = hover();
        let a = se3_control(
            &s,
            &Se3Target::hold(s.position, 0.0),
            &p,
            &Se3Gains::default(),
        );
        assert_relative_eq!(a.throttle, p.hover_throttle(), epsilon = 1e-9);
        assert_eq!(a.body_rate, Vector3::zeros());
    }

    #[test]
    fn yaw_error_is_odd_and_pure_z() {
        let (mut s, p) = hover();
        let g = Se3Gains::default();
        for psi in [0.3, 1.0, 2.5, 3.1] {
            s.attitude = rot_z(psi);
            let plus = se3_control(&s, &Se3Target::hold(s.position, 0.0), &p, &g);
            s.attitude = rot_z(-psi);
            let minus = se3_control(&s, &Se3Target::hold(s.position, 0.0), &p, &g);
            assert_eq!(plus.body_rate.x, 0.0);
            assert_eq!(plus.body_rate.y, 0.0);
            assert_eq!(plus.body_rate.z, -minus.body_rate.z);
            assert!(plus.body_rate.z < 0.0);
        }
    }

    #[test]
    fn sideways_acceleration_tilts_45_degrees() {
        let (s, p) = hover();
        let a = Vector3::new(p.gravity, 0.0, 0.0);
        let f = a + p.gravity * E3;
        let r_des = attitude_from_thrust(&f.normalize(), 0.0);
        assert_relative_eq!(
            (r_des * E3).z.acos(),
            std::f64::consts::FRAC_PI_4,
            epsilon = 1e-12
        );
        // at the setpoint the body z axis is parallel to a + g
        let mut at = s.clone();
        at.attitude = r_des;
        let act = so3_from_acceleration(&a, 0.0, 0.0, &at, &p, &Se3Gains::default());
        assert!((r_des * E3).cross(&f).norm() <= 1e-9 * f.norm());
        assert!(act.body_rate.norm() < 1e-12);
        assert_relative_eq!(
            act.throttle,
            throttle_for(p.mass * f.norm(), &p),
            epsilon = 1e-9
        );
    }

    #[test]
    fn zero_acceleration_is_upright_hover() {
        let (s, p) = hover();
        let act = so3_from_acceleration(&Vector3::zeros(), 0.0, 0.0, &s, &p, &Se3Gains::default());
        assert_relative_eq!(act.throttle, p.hover_throttle(), epsilon = 1e-9);
    }

    #[test]
    fn free_fall_command_is_clamped() {
        let (mut s, p) = hover();
        s.attitude = rot_from_euler(0.4, 0.0, 0.0);
        let g = Se3Gains::default();
        let act = so3_from_acceleration(&Vector3::new(0.0, 0.0, -p.gravity), 0.0, 0.0, &s, &p, &g);
        assert_relative_eq!(
            act.throttle,
            throttle_for(g.min_thrust_fraction * p.weight(), &p),
            epsilon = 1e-9
        );
        // levels out
        assert!(act.body_rate.x < 0.0);
    }
}
