//! Product-of-fractions rewards.
//!
//! Every task reward is a product of sub-rewards
//! `r(x) = Σᵢ 1 / (1 + λᵢ‖x‖²)`, each peaking at `n` when `x = 0`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::task::{target_state, TaskKind, TaskSpec};
use crate::dynamics::MavState;
use crate::math::{angle_between, rotation_angle, E3};

/// Coefficients `λ₁..λₙ` of one sub-reward; `n` is the list length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubReward {
    pub lambdas: Vec<f64>,
}

impl SubReward {
    pub fn new(lambdas: Vec<f64>) -> Self {
        Self { lambdas }
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    pub fn max(&self) -> f64 {
        self.lambdas.len() as f64
    }

    /// `r` as a function of the squared norm of its argument.
    #[inline]
    pub fn eval_sq(&self, norm_sq: f64) -> f64 {
        self.lambdas.iter().map(|l| 1.0 / (1.0 + l * norm_sq)).sum()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_sq(x * x)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.lambdas.is_empty() {
            return Err("sub-reward needs at least one coefficient".into());
        }
        if self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err("sub-reward coefficients must be positive".into());
        }
        Ok(())
    }
}

/// `r(x, λ, n)` for a vector argument.
pub fn sub_reward(x: &[f64], cfg: &SubReward) -> f64 {
    cfg.eval_sq(x.iter().map(|v| v * v).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Relative position (POS, FLIP).
    pub position: SubReward,
    /// Relative attitude angle (POS) and x-axis deviation (FLIP).
    pub attitude: SubReward,
    /// Height error about the circle plane.
    pub altitude: SubReward,
    /// Radial error of the circle.
    pub radius: SubReward,
    /// Tangential speed error of the circle.
    pub speed: SubReward,
    /// Heading-to-centre angle of the circle.
    pub heading: SubReward,
    /// Remaining flip angle.
    pub flip: SubReward,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let linear = || SubReward::new(vec![1.0, 100.0]);
        let angular = || SubReward::new(vec![4.0 / (PI * PI)]);
        Self {
            position: linear(),
            attitude: angular(),
            altitude: linear(),
            radius: linear(),
            speed: linear(),
            heading: angular(),
            flip: angular(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        for s in [
            &self.position,
            &self.attitude,
            &self.altitude,
            &self.radius,
            &self.speed,
            &self.heading,
            &self.flip,
        ] {
            s.validate()?;
        }
        Ok(())
    }

    /// Largest attainable reward of a task (product of the `n`s).
    pub fn max_reward(&self, kind: TaskKind) -> f64 {
        match kind {
            TaskKind::Pos => self.position.max() * self.attitude.max(),
            TaskKind::Circle => {
                self.altitude.max() * self.radius.max() * self.speed.max() * self.heading.max()
            }
            TaskKind::Flip => self.position.max() * self.attitude.max() * self.flip.max(),
        }
    }
}

/// Total reward and its factors; unused factor slots hold 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub total: f64,
    pub terms: [f64; 4],
}

impl RewardBreakdown {
    fn from_terms(terms: &[f64]) -> Self {
        let mut t = [1.0; 4];
        t[..terms.len()].copy_from_slice(terms);
        Self {
            total: terms.iter().product(),
            terms: t,
        }
    }
}

pub fn reward_pos(mav: &MavState, task: &TaskSpec, cfg: &RewardConfig) -> RewardBreakdown {
    let (p_v, r_v) = target_state(task);
    let rt = mav.attitude.transpose();
    let p_rel = rt * (p_v - mav.position);
    let alpha = rotation_angle(&(rt * r_v));
    RewardBreakdown::from_terms(&[
        cfg.position.eval_sq(p_rel.norm_squared()),
        cfg.attitude.eval(alpha),
    ])
}

/// Horizontal geometry of the vehicle relative to the circle centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleGeometry {
    /// World-frame `p_v - p`.
    pub p_rel: Vector3<f64>,
    /// Horizontal distance to the centre.
    pub distance: f64,
    /// Counter-clockwise unit tangent in the XOY plane.
    pub tangent: Vector3<f64>,
    /// Signed tangential speed (positive counter-clockwise).
    pub tangential_speed: f64,
    /// Angle between the horizontal body x axis and the direction to the centre.
    pub heading_error: f64,
}

/// Below this horizontal distance the tangent is held from the previous step.
pub const DEGENERATE_CENTER_DISTANCE: f64 = 0.01;

pub fn circle_geometry(
    mav: &MavState,
    center: &Vector3<f64>,
    fallback_tangent: &Vector3<f64>,
) -> CircleGeometry {
    let p_rel = center - mav.position;
    let horizontal = Vector3::new(p_rel.x, p_rel.y, 0.0);
    let distance = horizontal.norm();
    let tangent = if distance < DEGENERATE_CENTER_DISTANCE {
        *fallback_tangent
    } else {
        // e3 × (p - p_v) / |·|
        Vector3::new(horizontal.y, -horizontal.x, 0.0) / distance
    };
    let body_x = mav.attitude.column(0);
    let heading = Vector3::new(body_x[0], body_x[1], 0.0);
    CircleGeometry {
        p_rel,
        distance,
        tangent,
        tangential_speed: mav.velocity.dot(&tangent),
        heading_error: angle_between(&heading, &horizontal),
    }
}

pub fn reward_circle(
    geom: &CircleGeometry,
    task: &TaskSpec,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    RewardBreakdown::from_terms(&[
        cfg.altitude.eval(E3.dot(&geom.p_rel)),
        cfg.radius.eval(geom.distance - task.radius),
        cfg.speed.eval(geom.tangential_speed - task.speed),
        cfg.heading.eval(geom.heading_error),
    ])
}

pub fn reward_flip(mav: &MavState, task: &TaskSpec, cfg: &RewardConfig) -> RewardBreakdown {
    let (p_v, r_v) = target_state(task);
    let p_rel = mav.attitude.transpose() * (p_v - mav.position);
    let body_x = mav.attitude.column(0).into_owned();
    let target_x = r_v.column(0).into_owned();
    let alpha = angle_between(&body_x, &target_x);
    RewardBreakdown::from_terms(&[
        cfg.position.eval_sq(p_rel.norm_squared()),
        cfg.attitude.eval(alpha),
        cfg.flip.eval(task.flip.remaining()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::MavParams;
    use crate::math::{rot_from_euler, rot_z};
    use approx::assert_relative_eq;

    fn hover(p: Vector3<f64>) -> MavState {
        MavState::hover_at(p, &MavParams::default())
    }

    #[test]
    fn sub_reward_values() {
        let one = SubReward::new(vec![1.0]);
        assert_eq!(
            sub_reward(&[0.0, 0.0, 0.0], &SubReward::new(vec![3.0, 7.0, 0.1])),
            3.0
        );
        assert_relative_eq!(sub_reward(&[1.0], &one), 0.5);
        let two = SubReward::new(vec![1.0, 100.0]);
        assert_relative_eq!(two.eval(0.1), 1.0 / 1.01 + 0.5, epsilon = 1e-15);
        assert_relative_eq!(two.eval(0.1), 1.490_099, epsilon = 1e-6);
    }

    #[test]
    fn pos_reward_peaks_at_target() {
        let cfg = RewardConfig::default();
        let target = Vector3::new(0.0, 0.0, 2.0);
        let r = reward_pos(&hover(target), &TaskSpec::pos(target, 0.0), &cfg);
        assert_relative_eq!(r.total, cfg.max_reward(TaskKind::Pos));
        let mut flipped = hover(target);
        flipped.attitude = rot_z(PI);
        let r = reward_pos(&flipped, &TaskSpec::pos(target, 0.0), &cfg);
        assert_relative_eq!(r.terms[1], cfg.attitude.eval(PI), epsilon = 1e-12);
    }

    #[test]
    fn circle_reward_on_the_circle() {
        let cfg = RewardConfig::default();
        let center = Vector3::new(0.0, 0.0, 2.0);
        let task = TaskSpec::circle(center, 1.2, 3.0);
        // vehicle at +x of the centre, moving +y (counter-clockwise), nose toward -x
        let mut s = hover(Vector3::new(1.2, 0.0, 2.0));
        s.velocity = Vector3::new(0.0, 3.0, 0.0);
        s.attitude = rot_z(PI);
        let g = circle_geometry(&s, &center, &Vector3::x());
        assert_relative_eq!(g.tangential_speed, 3.0, epsilon = 1e-12);
        let r = reward_circle(&g, &task, &cfg);
        assert_relative_eq!(r.total, cfg.max_reward(TaskKind::Circle), epsilon = 1e-9);

        // one metre above the plane only changes the altitude factor
        s.position.z += 1.0;
        let g = circle_geometry(&s, &center, &Vector3::x());
        let r2 = reward_circle(&g, &task, &cfg);
        assert_relative_eq!(r2.terms[0], cfg.altitude.eval(1.0));
        assert_relative_eq!(r2.terms[1], r.terms[1]);
        assert_relative_eq!(r2.terms[2], r.terms[2]);
        assert_relative_eq!(r2.terms[3], r.terms[3]);

        // clockwise motion reads as negative speed
        s.velocity = Vector3::new(0.0, -2.0, 0.0);
        let g = circle_geometry(&s, &center, &Vector3::x());
        assert_relative_eq!(g.tangential_speed, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn circle_radial_argument() {
        let center = Vector3::zeros();
        let task = TaskSpec::circle(center, 1.2, 0.0);
        let s = hover(Vector3::new(0.0, -1.5, 0.0));
        let g = circle_geometry(&s, &center, &Vector3::x());
        let r = reward_circle(&g, &task, &RewardConfig::default());
        assert_relative_eq!(g.distance - task.radius, 0.3, epsilon = 1e-12);
        assert_relative_eq!(
            r.terms[1],
            RewardConfig::default().radius.eval(0.3),
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_centre_uses_fallback_tangent() {
        let center = Vector3::new(0.0, 0.0, 1.0);
        let mut s = hover(Vector3::new(0.001, 0.0, 1.0));
        s.velocity = Vector3::new(0.0, 2.0, 0.0);
        let g = circle_geometry(&s, &center, &Vector3::y());
        assert_eq!(g.tangent, Vector3::y());
        assert_eq!(g.tangential_speed, 2.0);
    }

    #[test]
    fn flip_reward_terms() {
        let cfg = RewardConfig::default();
        let target = Vector3::new(0.0, 0.0, 2.0);
        let task = TaskSpec::flip(target, 0.0);
        let r = reward_flip(&hover(target), &task, &cfg);
        assert_relative_eq!(r.total, cfg.max_reward(TaskKind::Flip));

        // rolled 90° mid-flip: x axes still aligned
        let mut s = hover(target);
        s.attitude = rot_from_euler(PI / 2.0, 0.0, 0.0);
        let mut t = task.clone();
        t.flip.accumulated = PI / 2.0;
        t.flip.commanded = 2.0 * PI;
        let r = reward_flip(&s, &t, &cfg);
        assert_relative_eq!(r.terms[0], cfg.position.max());
        assert_relative_eq!(r.terms[1], 1.0, epsilon = 1e-15);
        assert!(r.terms[2] < cfg.flip.max());

        let mut t = task.clone();
        t.trigger_flip(1.0);
        let r = reward_flip(&hover(target), &t, &cfg);
        let expected: f64 = cfg
            .flip
            .lambdas
            .iter()
            .map(|l| 1.0 / (1.0 + l * (2.0 * PI).powi(2)))
            .sum();
        assert_relative_eq!(r.terms[2], expected, epsilon = 1e-15);
    }
}
