use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use taco_core::baselines::{MpcConfig, Se3Gains};
use taco_core::controller::Controller;
use taco_core::dynamics::{MavState, POLICY_DT};
use taco_core::env::log::{LogRow, TrajectoryLog};
use taco_core::env::{Env, EnvConfig, RewardBreakdown, TaskKind, TaskSpec};
use taco_core::math::roll_of;

use crate::error::ServiceError;
use crate::schema::{Ack, CommandEdit, CreateSession, Frame, SessionInfo, TaskRequest};

const TIME_SCALE_RANGE: (f64, f64) = (0.1, 10.0);

/// Reward shown before the first step.
const NO_REWARD: RewardBreakdown = RewardBreakdown {
    total: 0.0,
    terms: [0.0; 4],
};

/// Service-wide settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub stream_hz: f64,
    pub time_scale: f64,
    /// Frames buffered per subscriber before the oldest are dropped.
    pub queue: usize,
    /// Cap on policy steps per stream tick when the loop falls behind.
    pub max_steps_per_tick: usize,
    /// Oldest rows are discarded beyond this length.
    pub max_log_rows: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            stream_hz: 50.0,
            time_scale: 1.0,
            queue: 64,
            max_steps_per_tick: 100,
            max_log_rows: 360_000,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.stream_hz > 0.0 && self.stream_hz <= 1000.0) {
            return Err(format!(
                "stream_hz must be in (0, 1000], got {}",
                self.stream_hz
            ));
        }
        if !(self.time_scale >= TIME_SCALE_RANGE.0 && self.time_scale <= TIME_SCALE_RANGE.1) {
            return Err(format!(
                "time_scale must be in [0.1, 10], got {}",
                self.time_scale
            ));
        }
        if self.queue == 0 || self.max_steps_per_tick == 0 || self.max_log_rows == 0 {
            return Err("queue, max_steps_per_tick and max_log_rows must be positive".into());
        }
        Ok(())
    }
}

/// What a new session is built from besides the request itself.
#[derive(Debug, Clone, Default)]
pub struct SessionDefaults {
    pub env: EnvConfig,
    pub se3: Se3Gains,
    pub mpc: MpcConfig,
    pub service: ServiceConfig,
}

/// Simulation state of one session. All mutation goes through `&mut self`,
/// so edits land between policy steps.
pub struct SessionCore {
    id: String,
    controller: Box<dyn Controller>,
    env: Env,
    start: (MavState, TaskSpec),
    last: LogRow,
    log: TrajectoryLog,
    step: u64,
    seq: u64,
    paused: bool,
    crashed: bool,
    time_scale: f64,
    stream_hz: f64,
    max_speed: f64,
    max_log_rows: usize,
    warnings: Vec<String>,
}

fn finite(values: &[f64], what: &str) -> Result<(), ServiceError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ServiceError::BadRequest(format!("{what} must be finite")))
    }
}

fn clamp_speed(speed: f64, max: f64, warnings: &mut Vec<String>) -> f64 {
    let v = speed.clamp(-max, max);
    if v != speed {
        warnings.push(format!("speed {speed} clamped to {v}"));
    }
    v
}

fn clamp_time_scale(scale: f64, warnings: &mut Vec<String>) -> f64 {
    let s = scale.clamp(TIME_SCALE_RANGE.0, TIME_SCALE_RANGE.1);
    if s != scale {
        warnings.push(format!("time scale {scale} clamped to {s}"));
    }
    s
}

impl SessionCore {
    pub fn new(
        id: String,
        req: &CreateSession,
        defaults: &SessionDefaults,
    ) -> Result<Self, ServiceError> {
        let mut env_cfg = defaults.env.clone();
        if let Some(p) = &req.params {
            env_cfg.params = p.clone();
        }
        env_cfg
            .params
            .validate()
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        // sessions run until deleted
        env_cfg.episode.max_steps = usize::MAX;
        let max_speed = env_cfg.episode.max_circle_speed;

        let mut warnings = Vec::new();
        let time_scale = clamp_time_scale(
            req.time_scale.unwrap_or(defaults.service.time_scale),
            &mut warnings,
        );
        finite(&[time_scale], "time_scale")?;
        let stream_hz = req.stream_hz.unwrap_or(defaults.service.stream_hz);
        if !(stream_hz > 0.0 && stream_hz <= 1000.0) {
            return Err(ServiceError::BadRequest(format!(
                "stream_hz must be in (0, 1000], got {stream_hz}"
            )));
        }

        let (state, task) = initial_condition(&req.task, &env_cfg, max_speed, &mut warnings)?;
        let controller = req
            .controller
            .build(&env_cfg.params, &defaults.se3, &defaults.mpc)
            .map_err(|e| ServiceError::Controller(e.to_string()))?;
        let env = Env::with_state(env_cfg, state.clone(), task.clone())
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let last = LogRow::new(env.state(), env.prev_action(), &NO_REWARD, env.task());
        Ok(Self {
            id,
            controller,
            env,
            start: (state, task),
            last,
            log: TrajectoryLog::default(),
            step: 0,
            seq: 0,
            paused: false,
            crashed: false,
            time_scale,
            stream_hz,
            max_speed,
            max_log_rows: defaults.service.max_log_rows,
            warnings,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn stream_hz(&self) -> f64 {
        self.stream_hz
    }

    pub fn is_live(&self) -> bool {
        !self.paused && !self.crashed
    }

    pub fn task(&self) -> &TaskSpec {
        self.env.task()
    }

    pub fn state(&self) -> &MavState {
        self.env.state()
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    /// Advances one policy step unless paused or crashed.
    pub fn step(&mut self) {
        if !self.is_live() {
            return;
        }
        let action = self.controller.act_env(&self.env);
        let out = self.env.step(&action);
        self.step += 1;
        self.last = LogRow::new(
            self.env.state(),
            self.env.prev_action(),
            &out.reward,
            self.env.task(),
        );
        if self.log.len() >= self.max_log_rows {
            let drop = (self.max_log_rows / 10).max(1);
            self.log.rows.drain(..drop);
        }
        self.log.push(self.last.clone());
        if out.crashed || out.fault {
            self.crashed = true;
        }
    }

    pub fn advance(&mut self, steps: usize) {
        for _ in 0..steps {
            if !self.is_live() {
                break;
            }
            self.step();
        }
    }

    pub fn set_paused(&mut self, paused: bool) {
        self.paused = paused;
    }

    /// Latest step, with the task as currently edited.
    pub fn frame(&mut self) -> Frame {
        self.seq += 1;
        let task = self.env.task();
        let mut f = Frame::from_row(
            &self.id,
            self.seq,
            self.step,
            task.kind,
            &self.last,
            self.paused,
            self.crashed,
        );
        f.task_flag = task.flag();
        f.command = task.command();
        f.target = task.target_position.into();
        f
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            id: self.id.clone(),
            controller: self.controller.name().to_string(),
            task: self.env.task().kind,
            paused: self.paused,
            crashed: self.crashed,
            t: self.env.state().time,
            step: self.step,
            time_scale: self.time_scale,
            stream_hz: self.stream_hz,
            warnings: self.warnings.clone(),
        }
    }

    pub fn apply(&mut self, id: Option<u64>, edit: &CommandEdit) -> Result<Ack, ServiceError> {
        let mut warnings = Vec::new();
        let applied = match edit {
            CommandEdit::SetSpeed { speed } => {
                finite(&[*speed], "speed")?;
                self.require(TaskKind::Circle, "set_speed")?;
                let v = clamp_speed(*speed, self.max_speed, &mut warnings);
                self.env.task_mut().speed = v;
                CommandEdit::SetSpeed { speed: v }
            }
            CommandEdit::TriggerFlip { direction } => {
                finite(&[*direction], "direction")?;
                if *direction == 0.0 {
                    return Err(ServiceError::BadRequest(
                        "direction must be non-zero".into(),
                    ));
                }
                self.require(TaskKind::Flip, "trigger_flip")?;
                let d = direction.signum();
                self.env.task_mut().trigger_flip(d);
                CommandEdit::TriggerFlip { direction: d }
            }
            CommandEdit::SetTarget { position, yaw } => {
                finite(position, "position")?;
                finite(&[yaw.unwrap_or(0.0)], "yaw")?;
                let task = self.env.task_mut();
                task.target_position = Vector3::from(*position);
                let yaw = match yaw {
                    Some(y) if task.kind == TaskKind::Pos => {
                        task.target_yaw = *y;
                        Some(*y)
                    }
                    Some(_) => {
                        warnings.push("yaw ignored outside POS".into());
                        None
                    }
                    None => None,
                };
                CommandEdit::SetTarget {
                    position: *position,
                    yaw,
                }
            }
            CommandEdit::SwitchTask {
                task,
                speed,
                radius,
            } => {
                finite(
                    &[speed.unwrap_or(0.0), radius.unwrap_or(1.0)],
                    "task parameters",
                )?;
                let current = self.env.task().clone();
                let req = TaskRequest {
                    kind: *task,
                    target: Some(current.target_position.into()),
                    yaw: None,
                    radius: *radius,
                    speed: *speed,
                };
                let next = build_task(
                    &req,
                    self.env.config(),
                    self.env.state(),
                    self.max_speed,
                    &mut warnings,
                )?;
                let applied = CommandEdit::SwitchTask {
                    task: *task,
                    speed: (*task == TaskKind::Circle).then_some(next.speed),
                    radius: (*task == TaskKind::Circle).then_some(next.radius),
                };
                *self.env.task_mut() = next;
                self.controller.reset();
                applied
            }
            CommandEdit::SetTimeScale { scale } => {
                finite(&[*scale], "scale")?;
                self.time_scale = clamp_time_scale(*scale, &mut warnings);
                CommandEdit::SetTimeScale {
                    scale: self.time_scale,
                }
            }
            CommandEdit::Reset => {
                let (state, task) = self.start.clone();
                self.env = Env::with_state(self.env.config().clone(), state, task)
                    .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
                self.controller.reset();
                self.crashed = false;
                self.last = LogRow::new(
                    self.env.state(),
                    self.env.prev_action(),
                    &NO_REWARD,
                    self.env.task(),
                );
                CommandEdit::Reset
            }
        };
        Ok(Ack {
            id,
            applied,
            warnings,
            t: self.env.state().time,
            step: self.step,
        })
    }

    fn require(&self, kind: TaskKind, what: &str) -> Result<(), ServiceError> {
        let current = self.env.task().kind;
        if current == kind {
            Ok(())
        } else {
            Err(ServiceError::BadRequest(format!(
                "{what} needs a {} task, session is running {}",
                kind.name(),
                current.name()
            )))
        }
    }
}

fn build_task(
    req: &TaskRequest,
    env: &EnvConfig,
    state: &MavState,
    max_speed: f64,
    warnings: &mut Vec<String>,
) -> Result<TaskSpec, ServiceError> {
    let target = Vector3::from(req.target.unwrap_or(env.episode.target_position));
    finite(target.as_slice(), "target")?;
    Ok(match req.kind {
        TaskKind::Pos => TaskSpec::pos(target, req.yaw.unwrap_or(0.0)),
        TaskKind::Circle => {
            let radius = req.radius.unwrap_or(env.episode.circle_radius);
            if !(radius > 0.0) {
                return Err(ServiceError::BadRequest(format!(
                    "radius must be positive, got {radius}"
                )));
            }
            let speed = clamp_speed(req.speed.unwrap_or(0.0), max_speed, warnings);
            TaskSpec::circle(target, radius, speed)
        }
        TaskKind::Flip => TaskSpec::flip(target, roll_of(&state.attitude)),
    })
}

/// Hover at the target, or on the circle at `centre + r·x̂`.
fn initial_condition(
    req: &TaskRequest,
    env: &EnvConfig,
    max_speed: f64,
    warnings: &mut Vec<String>,
) -> Result<(MavState, TaskSpec), ServiceError> {
    let hover = MavState::hover_at(Vector3::zeros(), &env.params);
    let task = build_task(req, env, &hover, max_speed, warnings)?;
    let mut p = task.target_position;
    if task.kind == TaskKind::Circle {
        p.x += task.radius;
    }
    let state = MavState::hover_at(p, &env.params);
    let task = match task.kind {
        TaskKind::Flip => TaskSpec::flip(task.target_position, roll_of(&state.attitude)),
        _ => task,
    };
    Ok((state, task))
}

/// Wall-clock to simulation-step bookkeeping for one session loop.
#[derive(Debug, Clone, Default)]
pub struct Pacer {
    owed: f64,
}

impl Pacer {
    /// Steps due after `wall` seconds at `time_scale`, at most `cap`.
    pub fn due(&mut self, wall: f64, time_scale: f64, cap: usize) -> usize {
        self.owed += wall * time_scale;
        let n = (self.owed / POLICY_DT + 1e-9).floor();
        if n >= cap as f64 {
            // fall behind real time rather than spiral
            self.owed = 0.0;
            return cap;
        }
        self.owed -= n * POLICY_DT;
        n as usize
    }

    pub fn clear(&mut self) {
        self.owed = 0.0;
    }
}
