//! Per-policy-step trajectory log, one comma-separated row per step.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::reward::RewardBreakdown;
use super::task::TaskSpec;
use crate::dynamics::{Action, MavState};
use crate::error::EvalError;

/// One logged step. `r_ij` is the row-major attitude matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub r00: f64,
    pub r01: f64,
    pub r02: f64,
    pub r10: f64,
    pub r11: f64,
    pub r12: f64,
    pub r20: f64,
    pub r21: f64,
    pub r22: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub motor1: f64,
    pub motor2: f64,
    pub motor3: f64,
    pub motor4: f64,
    pub voltage: f64,
    pub throttle: f64,
    pub rate_x: f64,
    pub rate_y: f64,
    pub rate_z: f64,
    pub reward: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub term4: f64,
    pub task_flag: f64,
    pub command: f64,
    pub target_x: f64,
    pub target_y: f64,
    pub target_z: f64,
    pub radius: f64,
    pub target_yaw: f64,
    pub flip_accumulated: f64,
}

impl LogRow {
    pub fn new(
        state: &MavState,
        action: &Action,
        reward: &RewardBreakdown,
        task: &TaskSpec,
    ) -> Self {
        let r = &state.attitude;
        Self {
            t: state.time,
            px: state.position.x,
            py: state.position.y,
            pz: state.position.z,
            vx: state.velocity.x,
            vy: state.velocity.y,
            vz: state.velocity.z,
            r00: r[(0, 0)],
            r01: r[(0, 1)],
            r02: r[(0, 2)],
            r10: r[(1, 0)],
            r11: r[(1, 1)],
            r12: r[(1, 2)],
            r20: r[(2, 0)],
            r21: r[(2, 1)],
            r22: r[(2, 2)],
            wx: state.body_rate.x,
            wy: state.body_rate.y,
            wz: state.body_rate.z,
            motor1: state.motor_speeds[0],
            motor2: state.motor_speeds[1],
            motor3: state.motor_speeds[2],
            motor4: state.motor_speeds[3],
            voltage: state.voltage,
            throttle: action.throttle,
            rate_x: action.body_rate.x,
            rate_y: action.body_rate.y,
            rate_z: action.body_rate.z,
            reward: reward.total,
            term1: reward.terms[0],
            term2: reward.terms[1],
            term3: reward.terms[2],
            term4: reward.terms[3],
            task_flag: task.flag(),
            command: task.command(),
            target_x: task.target_position.x,
            target_y: task.target_position.y,
            target_z: task.target_position.z,
            radius: task.radius,
            target_yaw: task.target_yaw,
            flip_accumulated: task.flip.accumulated,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.px, self.py, self.pz)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn target(&self) -> Vector3<f64> {
        Vector3::new(self.target_x, self.target_y, self.target_z)
    }

    pub fn attitude(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.r00, self.r01, self.r02, self.r10, self.r11, self.r12, self.r20, self.r21,
            self.r22,
        )
    }

    pub fn body_rate(&self) -> Vector3<f64> {
        Vector3::new(self.wx, self.wy, self.wz)
    }

    /// World-z component of the body z axis.
    pub fn tiltage(&self) -> f64 {
        self.r22
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
}

impl TrajectoryLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(r)
                .map_err(|e| EvalError::Log(e.to_string()))?;
        }
        wtr.flush().map_err(|e| EvalError::Log(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, EvalError> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr
            .deserialize()
            .collect::<Result<Vec<LogRow>, _>>()
            .map_err(|e| EvalError::Log(e.to_string()))?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let f = std::fs::File::create(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let f = std::fs::File::open(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
