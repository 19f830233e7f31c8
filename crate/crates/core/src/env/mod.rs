//! The target-and-command MDP: task semantics, observations, rewards,
//! randomised resets and vectorised stepping.

mod episode;
pub mod log;
mod observation;
mod reward;
mod task;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use episode::{
    curriculum_level, perturb_params, range_scale, reset, EpisodeConfig, EpisodeStart,
    RandomizationRanges,
};
pub use observation::{
    build_observation, write_critic_observation, write_observation, Observation, ObservationMode,
    CRITIC_OBS_DIM, MATRIX_OBS_DIM, QUAT_OBS_DIM,
};
pub use reward::{
    circle_geometry, reward_circle, reward_flip, reward_pos, sub_reward, CircleGeometry,
    RewardBreakdown, RewardConfig, SubReward, DEGENERATE_CENTER_DISTANCE,
};
pub use task::{target_state, update_flip_progress, FlipProgress, TaskKind, TaskSpec};

use crate::dynamics::{
    inner_tick, Action, MavModel, MavParams, MavState, RateController, INNER_STEPS_PER_POLICY_STEP,
    POLICY_DT,
};
use crate::error::ParamsError;
use crate::math::{roll_of, rotation_angle};

/// Everything needed to build environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EnvConfig {
    pub params: MavParams,
    pub episode: EpisodeConfig,
    pub reward: RewardConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.params.validate().map_err(|e| e.to_string())?;
        self.episode.validate()?;
        self.reward.validate()
    }
}

/// Per-episode statistics reported when an episode ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub task: TaskKind,
    pub total_reward: f64,
    pub length: usize,
    pub crashed: bool,
    /// Distance to `p*` at the final step (m).
    pub final_position_error: f64,
    /// Rotation angle between the vehicle and the target attitude at the final step (rad).
    pub final_attitude_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    pub done: bool,
    /// Ended by the step limit rather than a crash or fault.
    pub truncated: bool,
    pub crashed: bool,
    pub fault: bool,
    /// Any inner-loop tick saturated a motor.
    pub saturated: bool,
    /// Critic observation of the final state when the episode was truncated.
    pub terminal_critic_obs: Option<Vec<f64>>,
    pub episode: Option<EpisodeSummary>,
}

/// Serializable image of an environment for checkpoint/resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub kind: TaskKind,
    pub plant: MavParams,
    pub state: MavState,
    pub task: TaskSpec,
    pub prev_action: Action,
    pub steps: usize,
    pub last_tangent: Vector3<f64>,
    pub curriculum: f64,
    pub episode_return: f64,
    pub rng: ChaCha8Rng,
}

/// One simulated vehicle running one task.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    kind: TaskKind,
    controller: RateController,
    model: MavModel,
    state: MavState,
    task: TaskSpec,
    prev_action: Action,
    steps: usize,
    last_tangent: Vector3<f64>,
    curriculum: f64,
    episode_return: f64,
    rng: ChaCha8Rng,
    random_commands: bool,
}

impl Env {
    /// Builds an environment and performs its first reset.
    pub fn new(
        cfg: EnvConfig,
        kind: TaskKind,
        seed: u64,
        stream: u64,
    ) -> Result<Self, ParamsError> {
        cfg.params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let controller = RateController::new(&cfg.params)?;
        let model = MavModel::new(cfg.params.clone())?;
        let state = MavState::hover_at(cfg.episode.target(), &cfg.params);
        let task = TaskSpec::pos(cfg.episode.target(), 0.0);
        let mut env = Self {
            prev_action: Action::hover(&cfg.params),
            kind,
            controller,
            model,
            state,
            task,
            steps: 0,
            last_tangent: Vector3::x(),
            curriculum: 0.0,
            episode_return: 0.0,
            rng,
            random_commands: true,
            cfg,
        };
        env.reset();
        Ok(env)
    }

    /// Environment with a fixed initial state and task, used for evaluation.
    pub fn with_state(
        cfg: EnvConfig,
        state: MavState,
        task: TaskSpec,
    ) -> Result<Self, ParamsError> {
        let kind = task.kind;
        let mut env = Self::new(cfg, kind, 0, 0)?;
        env.model = MavModel::new(env.cfg.params.clone())?;
        env.state = state;
        env.task = task;
        env.steps = 0;
        env.episode_return = 0.0;
        env.prev_action = Action::hover(&env.cfg.params);
        env.random_commands = false;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn state(&self) -> &MavState {
        &self.state
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    /// Operator edits; applied between policy steps.
    pub fn task_mut(&mut self) -> &mut TaskSpec {
        &mut self.task
    }

    pub fn prev_action(&self) -> &Action {
        &self.prev_action
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn set_curriculum(&mut self, level: f64) {
        self.curriculum = level.clamp(0.0, 1.0);
    }

    /// Enables or disables random in-episode command changes.
    pub fn set_random_commands(&mut self, on: bool) {
        self.random_commands = on;
    }

    pub fn plant(&self) -> &MavParams {
        &self.model.params
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn reset(&mut self) {
        let start = reset(
            &self.cfg.episode,
            self.kind,
            &self.cfg.params,
            self.curriculum,
            &mut self.rng,
        );
        // perturbed parameters stay within the validated envelope
        self.model = MavModel::new(start.params).expect("perturbed parameters are valid");
        self.state = start.state;
        self.task = start.task;
        self.prev_action = Action::hover(&self.cfg.params);
        self.steps = 0;
        self.episode_return = 0.0;
        self.last_tangent = Vector3::x();
    }

    pub fn observe(&self, mode: ObservationMode, out: &mut [f64]) {
        write_observation(&self.state, &self.task, &self.prev_action, mode, out);
    }

    pub fn observation(&self, mode: ObservationMode) -> Observation {
        build_observation(&self.state, &self.task, &self.prev_action, mode)
    }

    pub fn critic_observe(&self, out: &mut [f64]) {
        write_critic_observation(&self.state, &self.task, &self.prev_action, out);
    }

    pub fn reward(&mut self) -> RewardBreakdown {
        match self.task.kind {
            TaskKind::Pos => reward_pos(&self.state, &self.task, &self.cfg.reward),
            TaskKind::Circle => {
                let g =
                    circle_geometry(&self.state, &self.task.target_position, &self.last_tangent);
                self.last_tangent = g.tangent;
                reward_circle(&g, &self.task, &self.cfg.reward)
            }
            TaskKind::Flip => reward_flip(&self.state, &self.task, &self.cfg.reward),
        }
    }

    /// Advances one policy step (ten inner ticks) without auto-reset.
    pub fn step(&mut self, action: &Action) -> StepOutcome {
        let action = action.clamped(&self.cfg.params);
        let mut saturated = false;
        let mut fault = false;
        for _ in 0..INNER_STEPS_PER_POLICY_STEP {
            let roll_prev = roll_of(&self.state.attitude);
            match inner_tick(&self.state, &action, &self.controller, &self.model) {
                Ok((next, cmd)) => {
                    saturated |= cmd.saturated;
                    self.state = next;
                }
                Err(_) => {
                    fault = true;
                    break;
                }
            }
            if self.task.kind == TaskKind::Flip {
                let roll_now = roll_of(&self.state.attitude);
                self.task = update_flip_progress(&self.task, roll_prev, roll_now);
            }
        }
        self.prev_action = action;
        self.steps += 1;

        let reward = if fault {
            RewardBreakdown {
                total: 0.0,
                terms: [0.0; 4],
            }
        } else {
            self.reward()
        };
        self.episode_return += reward.total;

        let crashed = !fault && self.state.altitude() < self.cfg.episode.min_altitude;
        let timeout = self.steps >= self.cfg.episode.max_steps;
        let done = fault || crashed || timeout;
        let truncated = timeout && !crashed && !fault;

        if !done && self.random_commands {
            self.random_command_events();
        }

        let terminal_critic_obs = truncated.then(|| {
            let mut v = vec![0.0; CRITIC_OBS_DIM];
            self.critic_observe(&mut v);
            v
        });
        let episode = done.then(|| self.summary(crashed || fault));
        StepOutcome {
            reward,
            done,
            truncated,
            crashed,
            fault,
            saturated,
            terminal_critic_obs,
            episode,
        }
    }

    fn summary(&self, crashed: bool) -> EpisodeSummary {
        let (p_v, r_v) = target_state(&self.task);
        EpisodeSummary {
            task: self.task.kind,
            total_reward: self.episode_return,
            length: self.steps,
            crashed,
            final_position_error: (p_v - self.state.position).norm(),
            final_attitude_error: rotation_angle(&(self.state.attitude.transpose() * r_v)),
        }
    }

    fn random_command_events(&mut self) {
        let ep = &self.cfg.episode;
        match self.task.kind {
            TaskKind::Pos => {}
            TaskKind::Circle => {
                if ep.circle_command_rate > 0.0
                    && self
                        .rng
                        .random_bool((ep.circle_command_rate * POLICY_DT).min(1.0))
                {
                    let half = ep.max_circle_speed * range_scale(self.curriculum);
                    self.task.speed = self.rng.random_range(-half..=half);
                }
            }
            TaskKind::Flip => {
                if ep.flip_trigger_rate > 0.0
                    && self.task.flip.remaining().abs() < 0.5
                    && self
                        .rng
                        .random_bool((ep.flip_trigger_rate * POLICY_DT).min(1.0))
                {
                    self.task.trigger_flip(1.0);
                }
            }
        }
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            kind: self.kind,
            plant: self.model.params.clone(),
            state: self.state.clone(),
            task: self.task.clone(),
            prev_action: self.prev_action,
            steps: self.steps,
            last_tangent: self.last_tangent,
            curriculum: self.curriculum,
            episode_return: self.episode_return,
            rng: self.rng.clone(),
        }
    }

    pub fn from_snapshot(cfg: EnvConfig, snap: EnvSnapshot) -> Result<Self, ParamsError> {
        Ok(Self {
            controller: RateController::new(&cfg.params)?,
            model: MavModel::new(snap.plant)?,
            kind: snap.kind,
            state: snap.state,
            task: snap.task,
            prev_action: snap.prev_action,
            steps: snap.steps,
            last_tangent: snap.last_tangent,
            curriculum: snap.curriculum,
            episode_return: snap.episode_return,
            rng: snap.rng,
            random_commands: true,
            cfg,
        })
    }
}

/// A batch of independent environments stepped in lockstep.
#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<Env>,
    mode: ObservationMode,
    parallel: bool,
}

impl VecEnv {
    /// `n` environments with tasks assigned round-robin from the config.
    pub fn new(
        cfg: &EnvConfig,
        n: usize,
        seed: u64,
        mode: ObservationMode,
    ) -> Result<Self, ParamsError> {
        let tasks = &cfg.episode.tasks;
        let envs = (0..n)
            .map(|i| Env::new(cfg.clone(), tasks[i % tasks.len()], seed, i as u64))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_envs(envs, mode))
    }

    pub fn from_envs(envs: Vec<Env>, mode: ObservationMode) -> Self {
        Self {
            envs,
            mode,
            parallel: false,
        }
    }

    /// Steps environments on the rayon pool; results do not depend on it.
    pub fn set_parallel(&mut self, on: bool) {
        self.parallel = on;
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn mode(&self) -> ObservationMode {
        self.mode
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    pub fn envs_mut(&mut self) -> &mut [Env] {
        &mut self.envs
    }

    pub fn into_envs(self) -> Vec<Env> {
        self.envs
    }

    pub fn set_curriculum(&mut self, level: f64) {
        for e in &mut self.envs {
            e.set_curriculum(level);
        }
    }

    /// Row-major `len × mode.dim()` observations.
    pub fn observe(&self, out: &mut [f64]) {
        let d = self.mode.dim();
        for (e, row) in self.envs.iter().zip(out.chunks_mut(d)) {
            e.observe(self.mode, row);
        }
    }

    pub fn critic_observe(&self, out: &mut [f64]) {
        for (e, row) in self.envs.iter().zip(out.chunks_mut(CRITIC_OBS_DIM)) {
            e.critic_observe(row);
        }
    }

    /// Steps every environment and resets the ones that finished.
    pub fn step(&mut self, actions: &[Action]) -> Vec<StepOutcome> {
        assert_eq!(actions.len(), self.envs.len(), "one action per environment");
        let run = |(env, a): (&mut Env, &Action)| {
            let out = env.step(a);
            if out.done {
                env.reset();
            }
            out
        };
        if self.parallel {
            self.envs
                .par_iter_mut()
                .zip(actions.par_iter())
                .map(run)
                .collect()
        } else {
            self.envs.iter_mut().zip(actions.iter()).map(run).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_throttle_falls_until_done() {
        let cfg = EnvConfig::default();
        let mut env = Env::new(cfg, TaskKind::Pos, 1, 0).unwrap();
        let z0 = env.state().altitude();
        let mut last = z0;
        let mut done = None;
        for k in 0..500 {
            let out = env.step(&Action::new(0.0, Vector3::zeros()));
            if out.done {
                done = Some((k, out));
                break;
            }
            last = env.state().altitude();
        }
        let (_, out) = done.expect("falls through the threshold");
        assert!(out.crashed && !out.truncated);
        assert!(last < z0);
        assert!(out.episode.unwrap().crashed);
    }

    #[test]
    fn timeout_truncates_with_terminal_observation() {
        let mut cfg = EnvConfig::default();
        cfg.episode.max_steps = 5;
        let mut env = Env::new(cfg.clone(), TaskKind::Pos, 3, 0).unwrap();
        let hover = Action::hover(&cfg.params);
        let mut last = None;
        for _ in 0..5 {
            last = Some(env.step(&hover));
        }
        let out = last.unwrap();
        assert!(out.done && out.truncated);
        assert_eq!(out.terminal_critic_obs.unwrap().len(), CRITIC_OBS_DIM);
    }

    #[test]
    fn pos_observation_masks_command() {
        let cfg = EnvConfig::default();
        let mut v = VecEnv::new(&cfg, 4, 0, ObservationMode::Matrix).unwrap();
        let hover = vec![Action::hover(&cfg.params); 4];
        for _ in 0..20 {
            v.step(&hover);
            let mut obs = vec![0.0; 4 * 26];
            v.observe(&mut obs);
            for row in obs.chunks(26) {
                assert_eq!(row[12], 0.0);
                assert_eq!(row[13], 0.0);
            }
        }
    }
}
