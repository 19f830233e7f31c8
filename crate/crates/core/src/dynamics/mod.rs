//! Quadrotor physics: rigid body, rotor aerodynamics, first-order motors,
//! a battery surrogate and the 1 kHz body-rate loop that turns policy actions
//! into motor commands.
//!
//! Frames: world is z-up, `attitude` maps body vectors into the world frame,
//! body rates are expressed in the body frame.

mod battery;
mod params;
mod rate_control;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use battery::{battery_step, open_circuit_voltage};
pub use params::{
    x_frame_arms, BatteryParams, MavParams, SpeedPoly, DEFAULT_MASS, DEFAULT_MOTOR_DISTANCE,
    DEFAULT_THRUST_TO_WEIGHT, GRAVITY,
};
pub use rate_control::{RateCommand, RateController};

use crate::error::ParamsError;
use crate::math::{exp_so3, hat, orthonormalize, E3};

/// Inner-loop period (s).
pub const INNER_DT: f64 = 0.001;
/// Inner steps per policy step (100 Hz policy over a 1 kHz loop).
pub const INNER_STEPS_PER_POLICY_STEP: usize = 10;
pub const POLICY_DT: f64 = INNER_DT * INNER_STEPS_PER_POLICY_STEP as f64;

/// Collective throttle in `[0, throttle_max]` plus desired body rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub throttle: f64,
    pub body_rate: Vector3<f64>,
}

impl Action {
    pub fn new(throttle: f64, body_rate: Vector3<f64>) -> Self {
        Self {
            throttle,
            body_rate,
        }
    }

    pub fn hover(params: &MavParams) -> Self {
        Self::new(params.hover_throttle(), Vector3::zeros())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [
            self.throttle,
            self.body_rate.x,
            self.body_rate.y,
            self.body_rate.z,
        ]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], Vector3::new(a[1], a[2], a[3]))
    }

    /// Clamps throttle and per-axis rate into the actuator envelope.
    pub fn clamped(&self, params: &MavParams) -> Self {
        let t = if self.throttle.is_nan() {
            0.0
        } else {
            self.throttle
        };
        let mut w = self.body_rate;
        for i in 0..3 {
            let lim = params.max_body_rate[i];
            w[i] = if w[i].is_nan() {
                0.0
            } else {
                w[i].clamp(-lim, lim)
            };
        }
        Self::new(t.clamp(0.0, params.throttle_max), w)
    }
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MavState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Matrix3<f64>,
    pub body_rate: Vector3<f64>,
    pub motor_speeds: [f64; 4],
    pub voltage: f64,
    /// Charge drawn from the pack since it was full (C).
    pub charge_drawn: f64,
    pub time: f64,
}

impl MavState {
    /// Level hover at `position` with motors spinning at hover speed and a full pack.
    pub fn hover_at(position: Vector3<f64>, params: &MavParams) -> Self {
        let w = (params.weight() / (4.0 * params.k_force)).sqrt();
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Matrix3::identity(),
            body_rate: Vector3::zeros(),
            motor_speeds: [w; 4],
            voltage: params.battery.v_full,
            charge_drawn: 0.0,
            time: 0.0,
        }
    }

    pub fn body_velocity(&self) -> Vector3<f64> {
        self.attitude.transpose() * self.velocity
    }

    pub fn altitude(&self) -> f64 {
        self.position.z
    }

    /// World-z component of the body z axis: 1 upright, −1 inverted.
    pub fn tiltage(&self) -> f64 {
        self.attitude[(2, 2)]
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.attitude.iter().all(|x| x.is_finite())
            && self.body_rate.iter().all(|x| x.is_finite())
            && self.motor_speeds.iter().all(|x| x.is_finite())
            && self.voltage.is_finite()
    }
}

/// Parameters plus the derived matrices needed on every integrator stage.
#[derive(Debug, Clone)]
pub struct MavModel {
    pub params: MavParams,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    drag: Matrix3<f64>,
    arms: [Vector3<f64>; 4],
}

impl MavModel {
    pub fn new(params: MavParams) -> Result<Self, ParamsError> {
        params.validate()?;
        let inertia = params.inertia_matrix();
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| ParamsError::Invalid("singular inertia".into()))?;
        Ok(Self {
            inertia,
            inertia_inv,
            drag: params.drag_matrix(),
            arms: [params.arm(0), params.arm(1), params.arm(2), params.arm(3)],
            params,
        })
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }
}

/// Collective thrust and body torque produced by the four rotors.
pub fn forces_and_torques(omega: &[f64; 4], model: &MavModel) -> (f64, Vector3<f64>) {
    let p = &model.params;
    let mut f_sum = 0.0;
    let mut tau = Vector3::zeros();
    for i in 0..4 {
        let w2 = omega[i] * omega[i];
        let f = p.k_force * w2;
        f_sum += f;
        tau += model.arms[i].cross(&(E3 * f));
        tau.z += p.spin_signs[i] * p.k_torque * w2;
    }
    (f_sum, tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyDerivative {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Matrix3<f64>,
    pub body_rate: Vector3<f64>,
}

/// Newton–Euler equations with thrust along body z and linear body-frame drag.
pub fn rigid_body_derivative(
    state: &MavState,
    thrust: f64,
    torque: &Vector3<f64>,
    model: &MavModel,
) -> RigidBodyDerivative {
    let (vdot, wdot) = accelerations(
        &state.attitude,
        &state.velocity,
        &state.body_rate,
        thrust,
        torque,
        model,
    );
    RigidBodyDerivative {
        position: state.velocity,
        velocity: vdot,
        attitude: state.attitude * hat(&state.body_rate),
        body_rate: wdot,
    }
}

#[inline]
fn accelerations(
    r: &Matrix3<f64>,
    v: &Vector3<f64>,
    w: &Vector3<f64>,
    thrust: f64,
    torque: &Vector3<f64>,
    model: &MavModel,
) -> (Vector3<f64>, Vector3<f64>) {
    let p = &model.params;
    let v_body = r.transpose() * v;
    let body_force = E3 * thrust + model.drag * v_body;
    let vdot = r * body_force / p.mass - E3 * p.gravity;
    let jw = model.inertia * w;
    let wdot = model.inertia_inv * (torque - w.cross(&jw));
    (vdot, wdot)
}

/// Steady-state rotor speed for a normalised PWM at the given pack voltage.
///
/// Out-of-range inputs are clamped; the flag reports whether that happened.
pub fn steady_motor_speed(voltage: f64, pwm: f64, params: &MavParams) -> (f64, bool) {
    let b = &params.battery;
    let pwm_c = if pwm.is_nan() {
        0.0
    } else {
        pwm.clamp(0.0, 1.0)
    };
    let v_c = voltage.clamp(b.v_min, b.v_full);
    let clamped = pwm_c != pwm || v_c != voltage;
    (params.speed_poly.top_speed(v_c) * pwm_c.sqrt(), clamped)
}

/// First-order motor lag.
#[inline]
pub fn motor_derivative(omega: f64, omega_steady: f64, k_motor: f64) -> f64 {
    (omega_steady - omega) / k_motor
}

/// Non-finite state produced by the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("simulator produced a non-finite state")]
pub struct NonFiniteState;

#[derive(Clone, Copy)]
struct Stage {
    v: Vector3<f64>,
    w: Vector3<f64>,
    motors: [f64; 4],
}

/// Advances the vehicle by `dt` with the motor commands held constant.
///
/// Translational, rotational and motor states use classical RK4; attitude is
/// propagated on the rotation group with the exponential map and then
/// re-orthonormalised.
pub fn integrate_step(
    state: &MavState,
    pwm: &[f64; 4],
    dt: f64,
    model: &MavModel,
) -> Result<MavState, NonFiniteState> {
    let p = &model.params;
    let mut steady = [0.0; 4];
    for i in 0..4 {
        steady[i] = steady_motor_speed(state.voltage, pwm[i], p).0;
    }

    let deriv = |r: &Matrix3<f64>, s: &Stage| -> Stage {
        let (f, tau) = forces_and_torques(&s.motors, model);
        let (vdot, wdot) = accelerations(r, &s.v, &s.w, f, &tau, model);
        let mut m = [0.0; 4];
        for i in 0..4 {
            m[i] = motor_derivative(s.motors[i], steady[i], p.k_motor);
        }
        Stage {
            v: vdot,
            w: wdot,
            motors: m,
        }
    };
    let advance = |base: &Stage, k: &Stage, h: f64| -> Stage {
        let mut m = base.motors;
        for i in 0..4 {
            m[i] += h * k.motors[i];
        }
        Stage {
            v: base.v + k.v * h,
            w: base.w + k.w * h,
            motors: m,
        }
    };

    let r0 = state.attitude;
    let s0 = Stage {
        v: state.velocity,
        w: state.body_rate,
        motors: state.motor_speeds,
    };
    let half = 0.5 * dt;

    let k1 = deriv(&r0, &s0);
    let s1 = advance(&s0, &k1, half);
    let r1 = r0 * exp_so3(&(s0.w * half));
    let k2 = deriv(&r1, &s1);
    let s2 = advance(&s0, &k2, half);
    let r2 = r0 * exp_so3(&(s1.w * half));
    let k3 = deriv(&r2, &s2);
    let s3 = advance(&s0, &k3, dt);
    let r3 = r0 * exp_so3(&(s2.w * dt));
    let k4 = deriv(&r3, &s3);

    let sixth = dt / 6.0;
    let position = state.position + (s0.v + s1.v * 2.0 + s2.v * 2.0 + s3.v) * sixth;
    let velocity = s0.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * sixth;
    let body_rate = s0.w + (k1.w + k2.w * 2.0 + k3.w * 2.0 + k4.w) * sixth;
    let mut motors = [0.0; 4];
    for i in 0..4 {
        let m = s0.motors[i]
            + (k1.motors[i] + 2.0 * k2.motors[i] + 2.0 * k3.motors[i] + k4.motors[i]) * sixth;
        motors[i] = m.max(0.0);
    }
    let mean_rate = (s0.w + s1.w * 2.0 + s2.w * 2.0 + s3.w) / 6.0;
    let attitude = orthonormalize(&(r0 * exp_so3(&(mean_rate * dt))));

    let (voltage, charge_drawn) =
        battery_step(state.voltage, state.charge_drawn, &motors, dt, &p.battery);

    let next = MavState {
        position,
        velocity,
        attitude,
        body_rate,
        motor_speeds: motors,
        voltage,
        charge_drawn,
        time: state.time + dt,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(NonFiniteState)
    }
}

/// One 1 kHz tick: rate controller, then physics.
pub fn inner_tick(
    state: &MavState,
    action: &Action,
    controller: &RateController,
    model: &MavModel,
) -> Result<(MavState, RateCommand), NonFiniteState> {
    let cmd = controller.command(action, state);
    let next = integrate_step(state, &cmd.pwm, INNER_DT, model)?;
    Ok((next, cmd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> MavModel {
        MavModel::new(MavParams::default()).unwrap()
    }

    #[test]
    fn balanced_rotors_produce_no_torque() {
        let m = model();
        let (f, tau) = forces_and_torques(&[1500.0; 4], &m);
        assert_relative_eq!(f, 4.0 * m.params.k_force * 1500.0 * 1500.0);
        assert!(tau.norm() < 1e-15);
        let (f, tau) = forces_and_torques(&[0.0; 4], &m);
        assert_eq!(f, 0.0);
        assert_eq!(tau, Vector3::zeros());
    }

    #[test]
    fn single_rotor_torque_matches_hand_cross_product() {
        let m = model();
        let w = 2000.0;
        let (f, tau) = forces_and_torques(&[w, 0.0, 0.0, 0.0], &m);
        let p = &m.params;
        let a = 0.5 * 0.149 / 2f64.sqrt();
        let fi = p.k_force * w * w;
        // (a, -a, 0) × (0, 0, fi) = (-a·fi, -a·fi, 0)
        let expected = Vector3::new(-a * fi, -a * fi, p.k_torque * w * w);
        assert_relative_eq!(f, fi);
        assert_relative_eq!(tau, expected, epsilon = 1e-15);
    }

    #[test]
    fn forces_are_homogeneous_of_degree_two() {
        let m = model();
        let w = [900.0, 1400.0, 1100.0, 2000.0];
        let c = 1.7;
        let (f1, t1) = forces_and_torques(&w, &m);
        let (f2, t2) = forces_and_torques(&w.map(|x| x * c), &m);
        assert_relative_eq!(f2, c * c * f1, max_relative = 1e-14);
        assert_relative_eq!(t2, t1 * c * c, max_relative = 1e-13);
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let m = model();
        let s = MavState::hover_at(Vector3::new(0.0, 0.0, 1.0), &m.params);
        let hover_thrust = m.params.mass * m.params.gravity;
        assert_relative_eq!(hover_thrust, 4.5126, epsilon = 1e-12);
        let d = rigid_body_derivative(&s, hover_thrust, &Vector3::zeros(), &m);
        assert!(d.velocity.norm() < 1e-15);
        assert_eq!(d.body_rate, Vector3::zeros());
        let d = rigid_body_derivative(&s, 0.0, &Vector3::zeros(), &m);
        assert_relative_eq!(d.velocity, Vector3::new(0.0, 0.0, -9.81));
    }

    #[test]
    fn tilted_hover_thrust_rotates_with_attitude() {
        let m = model();
        let mut s = MavState::hover_at(Vector3::zeros(), &m.params);
        s.attitude = crate::math::rot_from_euler(0.3, 0.0, 0.0);
        let d = rigid_body_derivative(&s, m.params.weight(), &Vector3::zeros(), &m);
        // body z tilts toward -y for positive roll
        assert!(d.velocity.y < 0.0);
        assert_relative_eq!(d.velocity.z, 9.81 * (0.3f64.cos() - 1.0), epsilon = 1e-12);
    }

    #[test]
    fn steady_speed_model() {
        let p = MavParams::default();
        assert_eq!(steady_motor_speed(p.battery.v_full, 0.0, &p).0, 0.0);
        let (w, clamped) = steady_motor_speed(p.battery.v_full, 1.0, &p);
        assert!(!clamped);
        let thrust = 4.0 * p.k_force * w * w;
        assert_relative_eq!(thrust, 4.1 * 0.46 * 9.81, max_relative = 1e-12);
        assert_relative_eq!(thrust, 18.50, epsilon = 0.01);
        let (w_sag, _) = steady_motor_speed(0.9 * p.battery.v_full, 1.0, &p);
        assert!(w_sag < w);
        let (_, flagged) = steady_motor_speed(p.battery.v_full, 1.3, &p);
        assert!(flagged);
        let (w_low, flagged) = steady_motor_speed(1.0, 0.5, &p);
        assert!(flagged);
        assert_relative_eq!(w_low, steady_motor_speed(p.battery.v_min, 0.5, &p).0);
    }

    #[test]
    fn motor_derivative_arithmetic() {
        assert_eq!(motor_derivative(700.0, 700.0, 0.02), 0.0);
        assert_relative_eq!(motor_derivative(0.0, 1000.0, 0.05), 20000.0);
    }

    #[test]
    fn action_clamping() {
        let p = MavParams::default();
        let a = Action::new(1200.0, Vector3::new(30.0, -25.0, f64::NAN)).clamped(&p);
        assert_eq!(a.throttle, 1000.0);
        assert_eq!(a.body_rate, Vector3::new(20.0, -20.0, 0.0));
    }

    #[test]
    fn non_finite_state_is_a_fault() {
        let m = model();
        let mut s = MavState::hover_at(Vector3::zeros(), &m.params);
        s.velocity.x = f64::NAN;
        assert_eq!(
            integrate_step(&s, &[0.2; 4], INNER_DT, &m),
            Err(NonFiniteState)
        );
    }
}
