//! Unconstrained linear-quadratic tracking on a double integrator, one axis at a time.

use nalgebra::{Matrix2, RowVector2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::reference::CircleReference;
use crate::dynamics::{MavParams, MavState};
use crate::math::E3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub input_weight: f64,
    pub terminal_position_weight: f64,
    pub terminal_velocity_weight: f64,
    /// Largest tilt the acceleration clamp allows (rad).
    pub max_tilt: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.05,
            position_weight: 10.0,
            velocity_weight: 1.0,
            input_weight: 0.05,
            terminal_position_weight: 10.0,
            terminal_velocity_weight: 1.0,
            max_tilt: 80f64.to_radians(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 {
            return Err("horizon must be positive".into());
        }
        for (name, v) in [
            ("dt", self.dt),
            ("input_weight", self.input_weight),
            ("max_tilt", self.max_tilt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("position_weight", self.position_weight),
            ("velocity_weight", self.velocity_weight),
            ("terminal_position_weight", self.terminal_position_weight),
            ("terminal_velocity_weight", self.terminal_velocity_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn dynamics(&self) -> (Matrix2<f64>, Vector2<f64>) {
        let dt = self.dt;
        (
            Matrix2::new(1.0, dt, 0.0, 1.0),
            Vector2::new(0.5 * dt * dt, dt),
        )
    }
}

/// Feedback `δu = −K e − k` and cost-to-go `eᵀPe + 2qᵀe` at one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiStage {
    pub gain: RowVector2<f64>,
    pub offset: f64,
    pub cost: Matrix2<f64>,
    pub linear: Vector2<f64>,
}

/// Backward Riccati recursion for `e' = A e + B δu + d_k` with stage cost
/// `eᵀQe + r δu²` and terminal cost `eᵀQ_f e`. `residuals.len()` is the horizon.
pub fn riccati(
    a: &Matrix2<f64>,
    b: &Vector2<f64>,
    q: &Matrix2<f64>,
    r: f64,
    qf: &Matrix2<f64>,
    residuals: &[Vector2<f64>],
) -> Vec<RiccatiStage> {
    let n = residuals.len();
    let mut p = *qf;
    let mut lin = Vector2::zeros();
    let mut stages = Vec::with_capacity(n);
    for d in residuals.iter().rev() {
        let pb = p * b;
        let s = r + b.dot(&pb);
        let gain = (pb.transpose() * a) / s;
        let carry = p * d + lin;
        let offset = b.dot(&carry) / s;
        let closed = a - b * gain;
        let next_p = q + a.transpose() * p * closed;
        lin = closed.transpose() * carry;
        p = 0.5 * (next_p + next_p.transpose());
        stages.push(RiccatiStage {
            gain,
            offset,
            cost: p,
            linear: lin,
        });
    }
    stages.reverse();
    stages
}

/// Clamps `a` so that `a + g e₃` stays inside the thrust cone and magnitude limit.
pub fn clamp_acceleration(a: &Vector3<f64>, params: &MavParams, max_tilt: f64) -> Vector3<f64> {
    let g = params.gravity;
    let mut f = a + g * E3;
    let min_z = 0.1 * g;
    if f.z < min_z {
        f.z = min_z;
    }
    let horiz = f.x.hypot(f.y);
    let max_horiz = f.z * max_tilt.tan();
    if horiz > max_horiz {
        let s = max_horiz / horiz;
        f.x *= s;
        f.y *= s;
    }
    let f_max = params.max_collective_thrust() / params.mass;
    let norm = f.norm();
    if norm > f_max {
        f *= f_max / norm;
    }
    f - g * E3
}

/// First acceleration of the LQ tracking plan towards a reference sample.
///
/// The reference is treated as dynamically consistent over the horizon, so
/// the plan is the feed-forward `a_ref` plus Riccati feedback on the error.
pub fn mpc_track(
    state: &MavState,
    p_ref: &Vector3<f64>,
    v_ref: &Vector3<f64>,
    a_ref: &Vector3<f64>,
    cfg: &MpcConfig,
    params: &MavParams,
) -> Vector3<f64> {
    let (a, b) = cfg.dynamics();
    let q = Matrix2::new(cfg.position_weight, 0.0, 0.0, cfg.velocity_weight);
    let qf = Matrix2::new(
        cfg.terminal_position_weight,
        0.0,
        0.0,
        cfg.terminal_velocity_weight,
    );
    let stages = riccati(
        &a,
        &b,
        &q,
        cfg.input_weight,
        &qf,
        &vec![Vector2::zeros(); cfg.horizon],
    );
    let mut out = Vector3::zeros();
    for axis in 0..3 {
        let e0 = Vector2::new(
            state.position[axis] - p_ref[axis],
            state.velocity[axis] - v_ref[axis],
        );
        out[axis] = a_ref[axis] - (stages[0].gain * e0)[0] - stages[0].offset;
    }
    clamp_acceleration(&out, params, cfg.max_tilt)
}

/// [`mpc_track`] on a circle reference evaluated at time `t`.
pub fn mpc_circle(
    state: &MavState,
    reference: &CircleReference,
    t: f64,
    cfg: &MpcConfig,
    params: &MavParams,
) -> Vector3<f64> {
    mpc_track(
        state,
        &reference.position(t),
        &reference.velocity(t),
        &reference.acceleration(t),
        cfg,
        params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    #[test]
    fn one_step_terminal_only_matches_hand_gain() {
        let cfg = MpcConfig {
            dt: 0.1,
            ..MpcConfig::default()
        };
        let (a, b) = cfg.dynamics();
        let qf = Matrix2::new(3.0, 0.0, 0.0, 2.0);
        let r = 0.5;
        let st = riccati(&a, &b, &Matrix2::zeros(), r, &qf, &[Vector2::zeros()]);
        // b = (0.005, 0.1); bᵀQ_f b = 3·0.005² + 2·0.1² = 0.020075
        // bᵀQ_f A = (0.015, 3·0.005·0.1 + 0.2) = (0.015, 0.2015)
        let s = 0.5 + 0.020075;
        assert_relative_eq!(st[0].gain[0], 0.015 / s, epsilon = 1e-14);
        assert_relative_eq!(st[0].gain[1], 0.2015 / s, epsilon = 1e-14);
        assert_eq!(st[0].offset, 0.0);
    }

    #[test]
    fn cost_to_go_is_symmetric_psd() {
        let cfg = MpcConfig::default();
        let (a, b) = cfg.dynamics();
        let q = Matrix2::new(10.0, 0.0, 0.0, 1.0);
        let d = vec![Vector2::new(1e-3, -2e-3); cfg.horizon];
        for st in riccati(&a, &b, &q, cfg.input_weight, &q, &d) {
            assert_eq!(st.cost, st.cost.transpose());
            let eig = SymmetricEigen::new(st.cost).eigenvalues;
            assert!(eig.min() >= -1e-12);
        }
    }

    #[test]
    fn on_reference_returns_feedforward() {
        let p = MavParams::default();
        let r = CircleReference::new(Vector3::new(0.0, 0.0, 2.0), 1.2, 5.0, 0.0);
        let mut s = MavState::hover_at(r.position(0.0), &p);
        s.velocity = r.velocity(0.0);
        let cfg = MpcConfig {
            max_tilt: 89f64.to_radians(),
            ..MpcConfig::default()
        };
        let acc = mpc_circle(&s, &r, 0.0, &cfg, &p);
        assert!((acc - r.acceleration(0.0)).norm() < 1e-12, "{acc}");
        assert_relative_eq!(r.acceleration(0.0).norm(), 25.0 / 1.2, epsilon = 1e-12);
    }

    #[test]
    fn zero_reference_zero_state_is_zero() {
        let p = MavParams::default();
        let r = CircleReference::new(Vector3::zeros(), 1.0, 0.0, 0.0);
        let mut s = MavState::hover_at(r.position(0.0), &p);
        s.velocity = Vector3::zeros();
        let acc = mpc_circle(&s, &r, 0.0, &MpcConfig::default(), &p);
        assert_eq!(acc, Vector3::zeros());
    }

    #[test]
    fn clamp_respects_envelope() {
        let p = MavParams::default();
        let a = clamp_acceleration(&Vector3::new(500.0, 0.0, -100.0), &p, 1.2);
        let f = a + p.gravity * E3;
        assert!(f.z > 0.0);
        assert!(f.norm() <= p.max_collective_thrust() / p.mass + 1e-9);
        assert!(f.x.hypot(f.y) <= f.z * 1.2f64.tan() + 1e-9);
    }
}
