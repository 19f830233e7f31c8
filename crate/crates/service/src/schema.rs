//! Wire types. Every message is one JSON object carrying `version` and a
//! `type` tag; over the stream socket each message is one text frame.

use serde::{Deserialize, Serialize};
use taco_core::controller::ControllerSpec;
use taco_core::dynamics::MavParams;
use taco_core::env::log::LogRow;
use taco_core::env::TaskKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub version: u32,
    #[serde(flatten)]
    pub payload: ServerPayload,
}

impl ServerMessage {
    pub fn new(payload: ServerPayload) -> Self {
        Self {
            version: SCHEMA_VERSION,
            payload,
        }
    }

    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        Self::new(ServerPayload::Error {
            id,
            message: message.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerPayload {
    /// First message on a new stream subscription.
    Hello {
        session: SessionInfo,
    },
    Frame(Frame),
    Ack(Ack),
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub version: u32,
    #[serde(flatten)]
    pub payload: ClientPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientPayload {
    Command {
        #[serde(default)]
        id: Option<u64>,
        edit: CommandEdit,
    },
    Pause {
        #[serde(default)]
        id: Option<u64>,
    },
    Resume {
        #[serde(default)]
        id: Option<u64>,
    },
}

fn forward() -> f64 {
    1.0
}

/// An online edit of the running task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandEdit {
    /// CIRCLE speed `v*` (m/s), clamped to the configured limit.
    SetSpeed { speed: f64 },
    /// Adds one 2π rotation to the pending FLIP command.
    TriggerFlip {
        #[serde(default = "forward")]
        direction: f64,
    },
    /// New hover point or circle centre; `yaw` applies to POS only.
    SetTarget {
        position: [f64; 3],
        #[serde(default)]
        yaw: Option<f64>,
    },
    SwitchTask {
        task: TaskKind,
        #[serde(default)]
        speed: Option<f64>,
        #[serde(default)]
        radius: Option<f64>,
    },
    /// Wall-clock pacing factor, clamped to [0.1, 10].
    SetTimeScale { scale: f64 },
    /// Back to the initial state and task.
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    #[serde(default)]
    pub id: Option<u64>,
    /// The edit as applied, after clamping.
    pub applied: CommandEdit,
    pub warnings: Vec<String>,
    /// Simulation time and step at which the edit takes effect.
    pub t: f64,
    pub step: u64,
}

/// Telemetry of one policy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub session: String,
    pub seq: u64,
    pub step: u64,
    pub t: f64,
    pub p: [f64; 3],
    pub v: [f64; 3],
    /// Row-major attitude matrix.
    pub r: [f64; 9],
    /// Body rates (rad/s).
    pub omega: [f64; 3],
    pub throttle: f64,
    /// Commanded body rates (rad/s).
    pub rate_cmd: [f64; 3],
    pub reward: f64,
    pub reward_terms: [f64; 4],
    pub task: TaskKind,
    pub task_flag: f64,
    pub command: f64,
    pub target: [f64; 3],
    pub tiltage: f64,
    pub paused: bool,
    pub crashed: bool,
}

impl Frame {
    pub fn from_row(
        session: &str,
        seq: u64,
        step: u64,
        task: TaskKind,
        row: &LogRow,
        paused: bool,
        crashed: bool,
    ) -> Self {
        Self {
            session: session.to_string(),
            seq,
            step,
            t: row.t,
            p: [row.px, row.py, row.pz],
            v: [row.vx, row.vy, row.vz],
            r: [
                row.r00, row.r01, row.r02, row.r10, row.r11, row.r12, row.r20, row.r21, row.r22,
            ],
            omega: [row.wx, row.wy, row.wz],
            throttle: row.throttle,
            rate_cmd: [row.rate_x, row.rate_y, row.rate_z],
            reward: row.reward,
            reward_terms: [row.term1, row.term2, row.term3, row.term4],
            task,
            task_flag: row.task_flag,
            command: row.command,
            target: [row.target_x, row.target_y, row.target_z],
            tiltage: row.tiltage(),
            paused,
            crashed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub controller: String,
    pub task: TaskKind,
    pub paused: bool,
    pub crashed: bool,
    pub t: f64,
    pub step: u64,
    pub time_scale: f64,
    pub stream_hz: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskRequest {
    pub kind: TaskKind,
    /// Hover point or circle centre; defaults to the configured target.
    pub target: Option<[f64; 3]>,
    pub yaw: Option<f64>,
    pub radius: Option<f64>,
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub controller: ControllerSpec,
    #[serde(default)]
    pub task: TaskRequest,
    /// Replaces the configured vehicle parameters for this session.
    #[serde(default)]
    pub params: Option<MavParams>,
    #[serde(default)]
    pub time_scale: Option<f64>,
    #[serde(default)]
    pub stream_hz: Option<f64>,
}
