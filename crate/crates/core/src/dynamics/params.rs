use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ParamsError;

/// Steady-state motor speed model `Ω = (offset + per_volt · V) · √pwm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedPoly {
    pub offset: f64,
    pub per_volt: f64,
}

impl SpeedPoly {
    /// Builds a model reaching `omega_max` at full throttle and `v_full`,
    /// with `offset_fraction` of the top speed independent of voltage.
    pub fn calibrated(omega_max: f64, v_full: f64, offset_fraction: f64) -> Self {
        Self {
            offset: offset_fraction * omega_max,
            per_volt: (1.0 - offset_fraction) * omega_max / v_full,
        }
    }

    #[inline]
    pub fn top_speed(&self, voltage: f64) -> f64 {
        self.offset + self.per_volt * voltage
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Open-circuit voltage of a full pack (V).
    pub v_full: f64,
    /// Cut-off voltage (V).
    pub v_min: f64,
    /// Series resistance (Ω).
    pub internal_resistance: f64,
    /// Usable charge between `v_full` and `v_min` (C).
    pub capacity: f64,
    /// Electrical power per unit `ΣΩ³` (W·s³/rad³).
    pub power_coeff: f64,
    /// Time constant of the terminal-voltage response (s).
    pub sag_time_constant: f64,
}

/// Physical constants of the vehicle plus the inner-loop gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MavParams {
    pub mass: f64,
    /// Row-major inertia tensor (kg·m²).
    pub inertia: [[f64; 3]; 3],
    /// Row-major drag matrix applied to body velocity (N·s/m, negative semi-definite).
    pub drag: [[f64; 3]; 3],
    pub k_force: f64,
    pub k_torque: f64,
    pub k_motor: f64,
    /// Rotor hub positions in the body frame (m).
    pub arm_positions: [[f64; 3]; 4],
    /// Reaction-torque sign of each rotor.
    pub spin_signs: [f64; 4],
    pub speed_poly: SpeedPoly,
    pub battery: BatteryParams,
    pub throttle_max: f64,
    /// Per-axis limit of the commanded body rate (rad/s).
    pub max_body_rate: [f64; 3],
    pub gravity: f64,
    /// Proportional body-rate gains (1/s).
    pub rate_gain: [f64; 3],
    /// Per-motor speed lead that speeds up the apparent motor response.
    pub motor_lead: f64,
}

/// Centre-to-motor distance on each axis for the given diagonal motor spacing.
pub fn x_frame_arms(motor_distance: f64) -> [[f64; 3]; 4] {
    let a = 0.5 * motor_distance / std::f64::consts::SQRT_2;
    // front-right, rear-right, rear-left, front-left
    [[a, -a, 0.0], [-a, -a, 0.0], [-a, a, 0.0], [a, a, 0.0]]
}

pub const DEFAULT_MASS: f64 = 0.46;
pub const DEFAULT_MOTOR_DISTANCE: f64 = 0.149;
pub const DEFAULT_THRUST_TO_WEIGHT: f64 = 4.1;
pub const GRAVITY: f64 = 9.81;

impl Default for MavParams {
    fn default() -> Self {
        let mass = DEFAULT_MASS;
        let k_force = 5.0e-7;
        let v_full = 16.8;
        let max_thrust = DEFAULT_THRUST_TO_WEIGHT * mass * GRAVITY;
        let omega_max = (max_thrust / (4.0 * k_force)).sqrt();
        let omega_hover = (mass * GRAVITY / (4.0 * k_force)).sqrt();
        Self {
            mass,
            inertia: [[7.0e-4, 0.0, 0.0], [0.0, 7.0e-4, 0.0], [0.0, 0.0, 1.2e-3]],
            drag: [[-0.3, 0.0, 0.0], [0.0, -0.3, 0.0], [0.0, 0.0, -0.1]],
            k_force,
            k_torque: 8.0e-9,
            k_motor: 0.02,
            arm_positions: x_frame_arms(DEFAULT_MOTOR_DISTANCE),
            spin_signs: [1.0, -1.0, 1.0, -1.0],
            speed_poly: SpeedPoly::calibrated(omega_max, v_full, 0.2),
            battery: BatteryParams {
                v_full,
                v_min: 13.2,
                internal_resistance: 0.06,
                // about 90 flips of 0.47 s at twice-weight mean thrust
                capacity: 765.0,
                // 70 W electrical at hover
                power_coeff: 70.0 / (4.0 * omega_hover.powi(3)),
                sag_time_constant: 0.05,
            },
            throttle_max: 1000.0,
            max_body_rate: [20.0, 20.0, 20.0],
            gravity: GRAVITY,
            rate_gain: [50.0, 50.0, 25.0],
            motor_lead: 1.0,
        }
    }
}

impl MavParams {
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        mat3(&self.inertia)
    }

    pub fn drag_matrix(&self) -> Matrix3<f64> {
        mat3(&self.drag)
    }

    pub fn arm(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.arm_positions[i])
    }

    /// Largest distance between two rotor hubs.
    pub fn motor_distance(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                best = best.max((self.arm(i) - self.arm(j)).norm());
            }
        }
        best
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    /// Collective thrust at full throttle and a full battery (N).
    pub fn max_collective_thrust(&self) -> f64 {
        let w = self.speed_poly.top_speed(self.battery.v_full);
        4.0 * self.k_force * w * w
    }

    pub fn hover_throttle(&self) -> f64 {
        self.throttle_max * self.weight() / self.max_collective_thrust()
    }

    /// Rows map per-motor thrusts to `[f_Σ, τx, τy, τz]`.
    pub fn allocation_matrix(&self) -> Matrix4<f64> {
        let ratio = self.k_torque / self.k_force;
        let mut a = Matrix4::zeros();
        for i in 0..4 {
            let r = self.arm(i);
            a[(0, i)] = 1.0;
            // r × e3 = (r_y, -r_x, 0)
            a[(1, i)] = r.y;
            a[(2, i)] = -r.x;
            a[(3, i)] = self.spin_signs[i] * ratio;
        }
        a
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let positive = [
            ("mass", self.mass),
            ("k_force", self.k_force),
            ("k_torque", self.k_torque),
            ("k_motor", self.k_motor),
            ("throttle_max", self.throttle_max),
            ("battery.capacity", self.battery.capacity),
            ("battery.power_coeff", self.battery.power_coeff),
            ("battery.sag_time_constant", self.battery.sag_time_constant),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ParamsError::NotPositive(name));
            }
        }
        if !(self.battery.v_min > 0.0 && self.battery.v_min < self.battery.v_full) {
            return Err(ParamsError::Invalid("battery voltage range".into()));
        }
        if self.battery.internal_resistance < 0.0 {
            return Err(ParamsError::Invalid("negative internal resistance".into()));
        }
        let j = self.inertia_matrix();
        if (j - j.transpose()).abs().max() > 1e-12 * j.abs().max() {
            return Err(ParamsError::Invalid("inertia is not symmetric".into()));
        }
        if j.cholesky().is_none() {
            return Err(ParamsError::Invalid(
                "inertia is not positive definite".into(),
            ));
        }
        let d = self.drag_matrix();
        let sym = (d + d.transpose()) * 0.5;
        if sym.symmetric_eigenvalues().iter().any(|&e| e > 1e-12) {
            return Err(ParamsError::Invalid(
                "drag matrix must be negative semi-definite".into(),
            ));
        }
        if self.spin_signs.iter().any(|s| s.abs() != 1.0)
            || self.spin_signs.iter().sum::<f64>() != 0.0
        {
            return Err(ParamsError::Invalid(
                "spin signs must be two +1 and two -1".into(),
            ));
        }
        if self.allocation_matrix().try_inverse().is_none() {
            return Err(ParamsError::Invalid("allocation matrix is singular".into()));
        }
        if self.max_body_rate.iter().any(|&w| !(w > 0.0)) {
            return Err(ParamsError::Invalid(
                "max body rate must be positive".into(),
            ));
        }
        if !(self.speed_poly.top_speed(self.battery.v_min) > 0.0) || self.speed_poly.per_volt < 0.0
        {
            return Err(ParamsError::Invalid(
                "speed polynomial must be increasing and positive".into(),
            ));
        }
        Ok(())
    }
}

fn mat3(m: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| m[r][c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_are_valid() {
        let p = MavParams::default();
        p.validate().unwrap();
        assert_relative_eq!(p.motor_distance(), 0.149, epsilon = 1e-12);
        let arm_sum: Vector3<f64> = (0..4).map(|i| p.arm(i)).sum();
        assert!(arm_sum.norm() < 1e-15);
        assert_relative_eq!(p.max_collective_thrust() / p.weight(), 4.1, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = MavParams::default();
        p.mass = 0.0;
        assert!(p.validate().is_err());
        let mut p = MavParams::default();
        p.spin_signs = [1.0, 1.0, 1.0, -1.0];
        assert!(p.validate().is_err());
        let mut p = MavParams::default();
        p.drag[0][0] = 0.2;
        assert!(p.validate().is_err());
        let mut p = MavParams::default();
        p.inertia[0][1] = 1.0;
        assert!(p.validate().is_err());
    }
}
