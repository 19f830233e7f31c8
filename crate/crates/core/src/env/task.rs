use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::math::{rot_z, wrap_pi};

/// Maneuver type; its numeric flag is fed to the network as-is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Pos,
    Circle,
    Flip,
}

impl TaskKind {
    pub fn flag(self) -> f64 {
        match self {
            TaskKind::Pos => 0.0,
            TaskKind::Circle => 1.0,
            TaskKind::Flip => -1.0,
        }
    }

    pub fn from_flag(flag: f64) -> Option<Self> {
        if flag == 0.0 {
            Some(TaskKind::Pos)
        } else if flag == 1.0 {
            Some(TaskKind::Circle)
        } else if flag == -1.0 {
            Some(TaskKind::Flip)
        } else {
            None
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Pos => "pos",
            TaskKind::Circle => "circle",
            TaskKind::Flip => "flip",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pos" => Ok(TaskKind::Pos),
            "circle" => Ok(TaskKind::Circle),
            "flip" => Ok(TaskKind::Flip),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// Cumulative roll bookkeeping for FLIP.
///
/// `accumulated` is the unwrapped roll angle; `commanded` grows by 2π per
/// operator trigger, so the remaining rotation is `commanded - accumulated`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipProgress {
    pub commanded: f64,
    pub accumulated: f64,
}

impl FlipProgress {
    pub fn starting_at(roll: f64) -> Self {
        Self {
            commanded: 0.0,
            accumulated: roll,
        }
    }

    pub fn remaining(&self) -> f64 {
        self.commanded - self.accumulated
    }
}

/// Task flag, command and target description for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// `p*`: hover point or circle centre (m, world).
    pub target_position: Vector3<f64>,
    /// `ψ*` for POS (rad).
    pub target_yaw: f64,
    /// `r*` for CIRCLE (m).
    pub radius: f64,
    /// `v*` for CIRCLE (m/s); positive is counter-clockwise seen from +z.
    pub speed: f64,
    pub flip: FlipProgress,
}

impl TaskSpec {
    pub fn pos(target: Vector3<f64>, yaw: f64) -> Self {
        Self {
            kind: TaskKind::Pos,
            target_position: target,
            target_yaw: yaw,
            radius: 0.0,
            speed: 0.0,
            flip: FlipProgress::starting_at(0.0),
        }
    }

    pub fn circle(center: Vector3<f64>, radius: f64, speed: f64) -> Self {
        Self {
            kind: TaskKind::Circle,
            target_position: center,
            target_yaw: 0.0,
            radius,
            speed,
            flip: FlipProgress::starting_at(0.0),
        }
    }

    /// FLIP task with no pending rotation for a vehicle currently at `roll`.
    pub fn flip(target: Vector3<f64>, roll: f64) -> Self {
        Self {
            kind: TaskKind::Flip,
            target_position: target,
            target_yaw: 0.0,
            radius: 0.0,
            speed: 0.0,
            flip: FlipProgress::starting_at(roll),
        }
    }

    pub fn flag(&self) -> f64 {
        self.kind.flag()
    }

    /// The scalar command `s_t2`.
    pub fn command(&self) -> f64 {
        match self.kind {
            TaskKind::Pos => 0.0,
            TaskKind::Circle => self.speed,
            TaskKind::Flip => self.flip.remaining(),
        }
    }

    /// Adds `direction · 2π` to the commanded FLIP rotation.
    pub fn trigger_flip(&mut self, direction: f64) {
        self.flip.commanded += direction.signum() * TAU;
    }
}

/// Virtual target pose `(p_v, R_v)` of a task.
pub fn target_state(task: &TaskSpec) -> (Vector3<f64>, Matrix3<f64>) {
    let r = match task.kind {
        TaskKind::Pos => rot_z(task.target_yaw),
        TaskKind::Circle | TaskKind::Flip => Matrix3::identity(),
    };
    (task.target_position, r)
}

/// Accumulates the wrapped roll change into the FLIP bookkeeping.
///
/// Consecutive samples must differ by less than π in true roll.
pub fn update_flip_progress(task: &TaskSpec, roll_prev: f64, roll_now: f64) -> TaskSpec {
    let mut next = task.clone();
    if task.kind == TaskKind::Flip {
        next.flip.accumulated += wrap_pi(roll_now - roll_prev);
    }
    next
}
