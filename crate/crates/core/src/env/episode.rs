use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::{TaskKind, TaskSpec};
use crate::dynamics::{open_circuit_voltage, MavParams, MavState};
use crate::math::{roll_of, rot_from_euler};

/// Full-width randomisation ranges; each is scaled by the curriculum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRanges {
    /// Half-width of the initial position offset per axis (m).
    pub position: [f64; 3],
    /// Half-width of initial roll and pitch (rad).
    pub tilt: f64,
    /// Half-width of initial yaw (rad).
    pub yaw: f64,
    /// Half-width of each initial velocity component (m/s).
    pub velocity: f64,
    /// Half-width of each initial body-rate component (rad/s).
    pub body_rate: f64,
    /// Relative half-width of the initial motor speeds around hover.
    pub motor_speed: f64,
    /// Half-width of the POS target yaw (rad).
    pub target_yaw: f64,
    /// Relative half-width of the multiplicative parameter perturbation.
    pub dynamics: f64,
    /// Largest fraction of the pack already drained at reset.
    pub battery_drawn: f64,
    /// Half-width of the initial radial offset from the circle (m).
    pub circle_radial: f64,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            position: [1.5, 1.5, 1.0],
            tilt: 0.8,
            yaw: PI,
            velocity: 2.0,
            body_rate: 4.0,
            motor_speed: 0.3,
            target_yaw: PI,
            dynamics: 0.1,
            battery_drawn: 0.6,
            circle_radial: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Task of each environment, assigned round-robin.
    pub tasks: Vec<TaskKind>,
    /// Policy steps before truncation.
    pub max_steps: usize,
    /// Episodes end below this altitude (m); the floor is at z = 0.
    pub min_altitude: f64,
    pub target_position: [f64; 3],
    pub circle_radius: f64,
    pub max_circle_speed: f64,
    pub ranges: RandomizationRanges,
    /// Mean rate of random CIRCLE speed changes during an episode (Hz).
    pub circle_command_rate: f64,
    /// Mean rate of random FLIP triggers while no flip is pending (Hz).
    pub flip_trigger_rate: f64,
    /// Probability that a FLIP episode starts with one flip pending.
    pub initial_flip_probability: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            tasks: vec![TaskKind::Pos],
            max_steps: 1500,
            min_altitude: 0.1,
            target_position: [0.0, 0.0, 2.0],
            circle_radius: 1.2,
            max_circle_speed: 5.0,
            ranges: RandomizationRanges::default(),
            circle_command_rate: 0.1,
            flip_trigger_rate: 0.4,
            initial_flip_probability: 0.5,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.tasks.is_empty() {
            return Err("episode config needs at least one task".into());
        }
        if self.max_steps == 0 {
            return Err("max_steps must be positive".into());
        }
        let r = &self.ranges;
        let all = [
            r.position[0],
            r.position[1],
            r.position[2],
            r.tilt,
            r.yaw,
            r.velocity,
            r.body_rate,
            r.motor_speed,
            r.target_yaw,
            r.dynamics,
            r.battery_drawn,
            r.circle_radial,
            self.circle_command_rate,
            self.flip_trigger_rate,
            self.max_circle_speed,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err("randomisation ranges and rates must be nonnegative".into());
        }
        if r.dynamics >= 1.0 || r.motor_speed >= 1.0 || r.battery_drawn > 1.0 {
            return Err("relative ranges must stay below 1".into());
        }
        if !(0.0..=1.0).contains(&self.initial_flip_probability) {
            return Err("initial_flip_probability must be in [0, 1]".into());
        }
        if self.circle_radius <= 0.0 {
            return Err("circle radius must be positive".into());
        }
        Ok(())
    }

    pub fn target(&self) -> Vector3<f64> {
        Vector3::from(self.target_position)
    }
}

/// Fraction of the full randomisation width used at a curriculum level.
pub fn range_scale(curriculum: f64) -> f64 {
    0.1 + 0.9 * curriculum.clamp(0.0, 1.0)
}

/// Curriculum level after `update` of a schedule that saturates at `ramp_updates`.
pub fn curriculum_level(update: usize, ramp_updates: usize) -> f64 {
    if ramp_updates == 0 {
        1.0
    } else {
        (update as f64 / ramp_updates as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStart {
    pub state: MavState,
    pub task: TaskSpec,
    /// Perturbed plant parameters for this episode.
    pub params: MavParams,
}

fn sym<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

pub fn perturb_params<R: Rng + ?Sized>(nominal: &MavParams, rel: f64, rng: &mut R) -> MavParams {
    let mut p = nominal.clone();
    let scale = |rng: &mut R| 1.0 + sym(rng, rel);
    p.mass *= scale(rng);
    let j = scale(rng);
    for row in p.inertia.iter_mut() {
        for v in row.iter_mut() {
            *v *= j;
        }
    }
    p.k_force *= scale(rng);
    p.k_torque *= scale(rng);
    p.k_motor *= scale(rng);
    let d = scale(rng);
    for row in p.drag.iter_mut() {
        for v in row.iter_mut() {
            *v *= d;
        }
    }
    p
}

/// Samples an initial state and task around the nominal configuration.
pub fn reset<R: Rng + ?Sized>(
    cfg: &EpisodeConfig,
    kind: TaskKind,
    nominal: &MavParams,
    curriculum: f64,
    rng: &mut R,
) -> EpisodeStart {
    let s = range_scale(curriculum);
    let r = &cfg.ranges;
    let params = perturb_params(nominal, r.dynamics * s, rng);
    let target = cfg.target();

    let mut state = MavState::hover_at(target, &params);
    let roll = sym(rng, r.tilt * s);
    let pitch = sym(rng, r.tilt * s);
    let mut yaw = sym(rng, r.yaw * s);
    let mut offset = Vector3::new(
        sym(rng, r.position[0] * s),
        sym(rng, r.position[1] * s),
        sym(rng, r.position[2] * s),
    );
    let mut velocity = Vector3::new(
        sym(rng, r.velocity * s),
        sym(rng, r.velocity * s),
        sym(rng, r.velocity * s),
    );

    let task = match kind {
        TaskKind::Pos => TaskSpec::pos(target, sym(rng, r.target_yaw * s)),
        TaskKind::Circle => {
            let speed = sym(rng, cfg.max_circle_speed * s);
            let theta = rng.random_range(-PI..PI);
            let radial = cfg.circle_radius + sym(rng, r.circle_radial * s);
            let outward = Vector3::new(theta.cos(), theta.sin(), 0.0);
            offset = outward * radial + Vector3::new(0.0, 0.0, offset.z);
            // heading toward the centre, perturbed
            yaw = (theta + PI) + sym(rng, r.yaw * s);
            let tangent = Vector3::new(-outward.y, outward.x, 0.0);
            velocity += tangent * (speed * rng.random_range(0.0..=1.0));
            TaskSpec::circle(target, cfg.circle_radius, speed)
        }
        TaskKind::Flip => TaskSpec::flip(target, 0.0),
    };

    state.position = target + offset;
    state.velocity = velocity;
    state.attitude = rot_from_euler(roll, pitch, yaw);
    state.body_rate = Vector3::new(
        sym(rng, r.body_rate * s),
        sym(rng, r.body_rate * s),
        sym(rng, r.body_rate * s),
    );
    for w in state.motor_speeds.iter_mut() {
        *w *= 1.0 + sym(rng, r.motor_speed * s);
    }
    let drawn = rng.random_range(0.0..=1.0) * r.battery_drawn * s * params.battery.capacity;
    state.charge_drawn = drawn;
    state.voltage = open_circuit_voltage(drawn, &params.battery);
    let min_z = cfg.min_altitude + 0.5;
    if state.position.z < min_z {
        state.position.z = min_z;
    }

    let mut task = task;
    if kind == TaskKind::Flip {
        task.flip = super::task::FlipProgress::starting_at(roll_of(&state.attitude));
        if rng.random_bool(cfg.initial_flip_probability) {
            task.trigger_flip(1.0);
        }
    }
    EpisodeStart {
        state,
        task,
        params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn curriculum_schedule() {
        assert_eq!(curriculum_level(0, 60), 0.0);
        assert_eq!(curriculum_level(30, 60), 0.5);
        assert_eq!(curriculum_level(60, 60), 1.0);
        assert_eq!(curriculum_level(100, 60), 1.0);
        assert!((range_scale(0.0) - 0.1).abs() < 1e-15);
        assert_eq!(range_scale(1.0), 1.0);
    }

    #[test]
    fn same_seed_same_reset() {
        let cfg = EpisodeConfig::default();
        let p = MavParams::default();
        for kind in [TaskKind::Pos, TaskKind::Circle, TaskKind::Flip] {
            let a = reset(&cfg, kind, &p, 0.7, &mut ChaCha8Rng::seed_from_u64(9));
            let b = reset(&cfg, kind, &p, 0.7, &mut ChaCha8Rng::seed_from_u64(9));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn low_curriculum_narrows_the_spread() {
        let cfg = EpisodeConfig::default();
        let p = MavParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut max_dx: f64 = 0.0;
        let mut max_yaw: f64 = 0.0;
        for _ in 0..2000 {
            let e = reset(&cfg, TaskKind::Pos, &p, 0.0, &mut rng);
            max_dx = max_dx.max((e.state.position.x - cfg.target_position[0]).abs());
            max_yaw = max_yaw.max(crate::math::yaw_of(&e.state.attitude).abs());
            assert!((e.params.mass / p.mass - 1.0).abs() <= 0.1 * cfg.ranges.dynamics + 1e-12);
        }
        // 10% of the full width, and the samples fill it
        assert!(max_dx <= 0.15 + 1e-12 && max_dx > 0.14);
        assert!(max_yaw <= 0.1 * PI + 1e-9 && max_yaw > 0.09 * PI);
    }

    #[test]
    fn circle_speed_covers_full_range() {
        let cfg = EpisodeConfig::default();
        let p = MavParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let speeds: Vec<f64> = (0..4000)
            .map(|_| reset(&cfg, TaskKind::Circle, &p, 1.0, &mut rng).task.speed)
            .collect();
        assert!(speeds.iter().all(|v| v.abs() <= 5.0));
        assert!(speeds.iter().any(|&v| v > 4.9) && speeds.iter().any(|&v| v < -4.9));
    }

    #[test]
    fn reset_states_are_valid() {
        let cfg = EpisodeConfig::default();
        let p = MavParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let e = reset(&cfg, TaskKind::Flip, &p, 1.0, &mut rng);
            let s = &e.state;
            assert!(
                (s.attitude.transpose() * s.attitude - nalgebra::Matrix3::identity()).norm() < 1e-9
            );
            assert!(s.motor_speeds.iter().all(|w| *w >= 0.0));
            assert!(s.voltage >= p.battery.v_min && s.voltage <= p.battery.v_full);
            assert!(s.position.z > cfg.min_altitude);
            e.params.validate().unwrap();
        }
    }
}
