//! One interface over learned policies and classical baselines: state in,
//! [`Action`] out, once per policy step.

use crate::baselines::{
    mpc_track, se3_control, so3_from_acceleration, CircleReference, MpcConfig, Se3Gains, Se3Target,
};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, MavParams, MavState};
use crate::env::{write_observation, Env, TaskKind, TaskSpec};
use crate::error::PolicyError;
use crate::policy::PolicyNet;

pub trait Controller: Send {
    fn name(&self) -> &str;

    /// Forgets any internal state, e.g. at an episode boundary.
    fn reset(&mut self) {}

    fn act(&mut self, state: &MavState, task: &TaskSpec, prev: &Action) -> Action;

    fn act_env(&mut self, env: &Env) -> Action {
        self.act(env.state(), env.task(), env.prev_action())
    }
}

/// Serializable reference to a controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerSpec {
    Policy { checkpoint: PathBuf },
    Se3,
    Mpc,
}

impl ControllerSpec {
    pub fn build(
        &self,
        params: &MavParams,
        gains: &Se3Gains,
        mpc: &MpcConfig,
    ) -> Result<Box<dyn Controller>, PolicyError> {
        Ok(match self {
            ControllerSpec::Policy { checkpoint } => {
                Box::new(PolicyController::new(PolicyNet::load(checkpoint)?))
            }
            ControllerSpec::Se3 => Box::new(Se3Controller::new(params.clone(), gains.clone())),
            ControllerSpec::Mpc => Box::new(MpcController::new(
                params.clone(),
                gains.clone(),
                mpc.clone(),
            )),
        })
    }
}

/// Deterministic (mean) action of a trained policy.
pub struct PolicyController {
    policy: PolicyNet,
    name: String,
    obs: Vec<f64>,
}

impl PolicyController {
    pub fn new(policy: PolicyNet) -> Self {
        let name = match policy.k_lip {
            Some(k) => format!("{}-{}", policy.mode.name(), k),
            None => format!("{}-None", policy.mode.name()),
        };
        let obs = vec![0.0; policy.input_dim()];
        Self { policy, name, obs }
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }
}

impl Controller for PolicyController {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, state: &MavState, task: &TaskSpec, prev: &Action) -> Action {
        write_observation(state, task, prev, self.policy.mode, &mut self.obs);
        self.policy
            .act(&self.obs)
            .expect("observation length matches the policy")
    }
}

/// Tracks the phase of a moving point on the commanded circle.
#[derive(Debug, Clone, Default)]
struct CirclePhase {
    angle: Option<f64>,
    last_time: f64,
}

impl CirclePhase {
    fn reference(&mut self, state: &MavState, task: &TaskSpec) -> CircleReference {
        let angle = match self.angle {
            None => {
                let r = CircleReference::through(
                    task.target_position,
                    task.radius,
                    task.speed,
                    &state.position,
                );
                r.phase
            }
            Some(a) => a + task.speed / task.radius * (state.time - self.last_time),
        };
        self.angle = Some(angle);
        self.last_time = state.time;
        CircleReference::new(task.target_position, task.radius, task.speed, angle)
    }
}

/// Target for tasks a classical controller cannot perform: hold `p*`.
fn hold_target(task: &TaskSpec) -> Se3Target {
    let yaw = if task.kind == TaskKind::Pos {
        task.target_yaw
    } else {
        0.0
    };
    Se3Target::hold(task.target_position, yaw)
}

pub struct Se3Controller {
    params: MavParams,
    gains: Se3Gains,
    phase: CirclePhase,
}

impl Se3Controller {
    pub fn new(params: MavParams, gains: Se3Gains) -> Self {
        Self {
            params,
            gains,
            phase: CirclePhase::default(),
        }
    }

    pub fn target(&mut self, state: &MavState, task: &TaskSpec) -> Se3Target {
        match task.kind {
            TaskKind::Circle => {
                let r = self.phase.reference(state, task);
                Se3Target {
                    position: r.position(0.0),
                    velocity: r.velocity(0.0),
                    acceleration: r.acceleration(0.0),
                    yaw: r.inward_yaw(0.0),
                    yaw_rate: r.angular_rate(),
                }
            }
            _ => hold_target(task),
        }
    }
}

impl Controller for Se3Controller {
    fn name(&self) -> &str {
        "se3"
    }

    fn reset(&mut self) {
        self.phase = CirclePhase::default();
    }

    fn act(&mut self, state: &MavState, task: &TaskSpec, _prev: &Action) -> Action {
        let target = self.target(state, task);
        se3_control(state, &target, &self.params, &self.gains)
    }
}

/// Linear MPC producing accelerations, realised by the SO3 attitude law.
pub struct MpcController {
    params: MavParams,
    gains: Se3Gains,
    mpc: MpcConfig,
    phase: CirclePhase,
}

impl MpcController {
    pub fn new(params: MavParams, gains: Se3Gains, mpc: MpcConfig) -> Self {
        Self {
            params,
            gains,
            mpc,
            phase: CirclePhase::default(),
        }
    }
}

impl Controller for MpcController {
    fn name(&self) -> &str {
        "mpc"
    }

    fn reset(&mut self) {
        self.phase = CirclePhase::default();
    }

    fn act(&mut self, state: &MavState, task: &TaskSpec, _prev: &Action) -> Action {
        let (p, v, a, yaw, yaw_rate) = match task.kind {
            TaskKind::Circle => {
                let r = self.phase.reference(state, task);
                (
                    r.position(0.0),
                    r.velocity(0.0),
                    r.acceleration(0.0),
                    r.inward_yaw(0.0),
                    r.angular_rate(),
                )
            }
            _ => {
                let t = hold_target(task);
                (t.position, t.velocity, t.acceleration, t.yaw, 0.0)
            }
        };
        let acc = mpc_track(state, &p, &v, &a, &self.mpc, &self.params);
        so3_from_acceleration(&acc, yaw, yaw_rate, state, &self.params, &self.gains)
    }
}
