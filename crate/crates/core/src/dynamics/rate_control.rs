//! Body-rate flight controller: P feedback with gyroscopic feedforward,
//! thrust allocation and inversion of the motor speed model.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use super::params::MavParams;
use super::{Action, MavState};
use crate::error::ParamsError;

/// Motor command produced by one controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCommand {
    pub pwm: [f64; 4],
    /// Per-motor thrust requested before clamping (N).
    pub desired_thrusts: [f64; 4],
    /// Set when any motor thrust or PWM had to be clamped.
    pub saturated: bool,
}

/// Controller tuned against nominal parameters; the plant it drives may differ.
#[derive(Debug, Clone)]
pub struct RateController {
    params: MavParams,
    inertia: Matrix3<f64>,
    allocation_inv: Matrix4<f64>,
    max_thrust: f64,
}

impl RateController {
    pub fn new(params: &MavParams) -> Result<Self, ParamsError> {
        params.validate()?;
        let allocation_inv = params
            .allocation_matrix()
            .try_inverse()
            .ok_or_else(|| ParamsError::Invalid("allocation matrix is singular".into()))?;
        Ok(Self {
            inertia: params.inertia_matrix(),
            allocation_inv,
            max_thrust: params.max_collective_thrust(),
            params: params.clone(),
        })
    }

    pub fn params(&self) -> &MavParams {
        &self.params
    }

    pub fn allocation_inverse(&self) -> &Matrix4<f64> {
        &self.allocation_inv
    }

    /// Collective thrust requested by a throttle value (N).
    pub fn thrust_for_throttle(&self, throttle: f64) -> f64 {
        throttle / self.params.throttle_max * self.max_thrust
    }

    pub fn throttle_for_thrust(&self, thrust: f64) -> f64 {
        thrust / self.max_thrust * self.params.throttle_max
    }

    /// Desired body torque for a rate setpoint.
    pub fn desired_torque(&self, rate_des: &Vector3<f64>, rate: &Vector3<f64>) -> Vector3<f64> {
        let k = Vector3::from(self.params.rate_gain);
        let err = (rate_des - rate).component_mul(&k);
        self.inertia * err + rate.cross(&(self.inertia * rate))
    }

    pub fn command(&self, action: &Action, state: &MavState) -> RateCommand {
        let p = &self.params;
        let a = action.clamped(p);
        let thrust = self.thrust_for_throttle(a.throttle);
        let tau = self.desired_torque(&a.body_rate, &state.body_rate);
        let wrench = Vector4::new(thrust, tau.x, tau.y, tau.z);
        let per_motor = self.allocation_inv * wrench;

        let top = p
            .speed_poly
            .top_speed(state.voltage.clamp(p.battery.v_min, p.battery.v_full));
        let motor_max = p.k_force * top * top;
        let mut saturated = false;
        let mut pwm = [0.0; 4];
        let mut desired = [0.0; 4];
        for i in 0..4 {
            desired[i] = per_motor[i];
            let f = per_motor[i].clamp(0.0, motor_max);
            saturated |= f != per_motor[i];
            let w_des = (f / p.k_force).sqrt();
            let w_cmd = (w_des + p.motor_lead * (w_des - state.motor_speeds[i])).max(0.0);
            let raw = (w_cmd / top).powi(2);
            pwm[i] = raw.min(1.0);
        }
        RateCommand {
            pwm,
            desired_thrusts: desired,
            saturated,
        }
    }
}
