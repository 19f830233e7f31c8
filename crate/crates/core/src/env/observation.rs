//! Fixed-layout state vectors.
//!
//! Matrix mode (26):
//! `[p_rel^B (3) | vec(R_rel^B) (9, column-major) | s_t1 | s_t2 | v^B (3) | ω^B (3) | h | V | a_{t-1} (4)]`
//!
//! Quaternion mode (21) swaps the nine rotation entries for `[w, x, y, z]`
//! with `w >= 0`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::task::{target_state, TaskSpec};
use crate::dynamics::{Action, MavState};
use crate::math::quat_wxyz;

pub const MATRIX_OBS_DIM: usize = 26;
pub const QUAT_OBS_DIM: usize = 21;
/// Noiseless matrix observation plus the four motor speeds.
pub const CRITIC_OBS_DIM: usize = MATRIX_OBS_DIM + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationMode {
    #[serde(rename = "mat")]
    Matrix,
    #[serde(rename = "quat")]
    Quaternion,
}

impl ObservationMode {
    pub fn dim(self) -> usize {
        match self {
            ObservationMode::Matrix => MATRIX_OBS_DIM,
            ObservationMode::Quaternion => QUAT_OBS_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObservationMode::Matrix => "mat",
            ObservationMode::Quaternion => "quat",
        }
    }

    /// Width of the attitude block.
    pub fn rotation_len(self) -> usize {
        match self {
            ObservationMode::Matrix => 9,
            ObservationMode::Quaternion => 4,
        }
    }

    /// Index of the first entry after the attitude block (`s_t1`).
    pub fn flag_index(self) -> usize {
        3 + self.rotation_len()
    }
}

impl std::str::FromStr for ObservationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mat" | "matrix" => Ok(ObservationMode::Matrix),
            "quat" | "quaternion" => Ok(ObservationMode::Quaternion),
            other => Err(format!("unknown observation mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mode: ObservationMode,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn relative_position(&self) -> Vector3<f64> {
        Vector3::new(self.values[0], self.values[1], self.values[2])
    }

    pub fn flag(&self) -> f64 {
        self.values[self.mode.flag_index()]
    }

    pub fn command(&self) -> f64 {
        self.values[self.mode.flag_index() + 1]
    }
}

/// Writes the observation into `out`, which must have `mode.dim()` entries.
pub fn write_observation(
    mav: &MavState,
    task: &TaskSpec,
    prev_action: &Action,
    mode: ObservationMode,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), mode.dim());
    let (p_v, r_v) = target_state(task);
    let rt = mav.attitude.transpose();
    let p_rel = rt * (p_v - mav.position);
    let r_rel = rt * r_v;
    out[..3].copy_from_slice(p_rel.as_slice());
    let mut i = 3;
    match mode {
        ObservationMode::Matrix => {
            out[i..i + 9].copy_from_slice(r_rel.as_slice());
            i += 9;
        }
        ObservationMode::Quaternion => {
            out[i..i + 4].copy_from_slice(&quat_wxyz(&r_rel));
            i += 4;
        }
    }
    out[i] = task.flag();
    out[i + 1] = task.command();
    i += 2;
    let v_body = rt * mav.velocity;
    out[i..i + 3].copy_from_slice(v_body.as_slice());
    out[i + 3..i + 6].copy_from_slice(mav.body_rate.as_slice());
    out[i + 6] = mav.altitude();
    out[i + 7] = mav.voltage;
    out[i + 8..i + 12].copy_from_slice(&prev_action.to_array());
}

pub fn build_observation(
    mav: &MavState,
    task: &TaskSpec,
    prev_action: &Action,
    mode: ObservationMode,
) -> Observation {
    let mut values = vec![0.0; mode.dim()];
    write_observation(mav, task, prev_action, mode, &mut values);
    Observation { mode, values }
}

/// Privileged critic input: the matrix observation plus motor speeds.
pub fn write_critic_observation(
    mav: &MavState,
    task: &TaskSpec,
    prev_action: &Action,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), CRITIC_OBS_DIM);
    write_observation(
        mav,
        task,
        prev_action,
        ObservationMode::Matrix,
        &mut out[..MATRIX_OBS_DIM],
    );
    out[MATRIX_OBS_DIM..].copy_from_slice(&mav.motor_speeds);
}
