//! PPO training loop: rollouts over a vectorised environment, GAE, clipped
//! surrogate updates with the Lipschitz projection, metrics and resumable state.

mod gae;
mod ppo;

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use gae::{compute_gae, normalize};
pub use ppo::{
    actor_loss_and_grads, actor_optimizer, apply_actor_step, critic_optimizer, ppo_update,
    value_loss_and_grads, ActorGrads, Batch, PpoConfig, UpdateStats, LOG_STD_MAX, LOG_STD_MIN,
};

use crate::dynamics::{Action, MavState};
use crate::env::{
    curriculum_level, write_observation, EnvConfig, EnvSnapshot, ObservationMode, TaskSpec, VecEnv,
    CRITIC_OBS_DIM,
};
use crate::error::TrainError;
use crate::math::exp_so3;
use crate::policy::{Adam, CriticNet, MlpCache, PolicyConfig, PolicyNet, ACTION_DIM};

pub const TRAINER_STATE_FORMAT: &str = "taco-trainer";
pub const TRAINER_STATE_VERSION: u32 = 1;

/// Standard deviations of the sensor noise added to policy observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsNoise {
    pub position: f64,
    /// Rotation-vector noise per axis (rad).
    pub attitude: f64,
    pub velocity: f64,
    pub body_rate: f64,
}

impl Default for ObsNoise {
    fn default() -> Self {
        Self {
            position: 0.005,
            attitude: 0.5f64.to_radians(),
            velocity: 0.02,
            body_rate: 0.05,
        }
    }
}

impl ObsNoise {
    pub fn none() -> Self {
        Self {
            position: 0.0,
            attitude: 0.0,
            velocity: 0.0,
            body_rate: 0.0,
        }
    }

    fn is_zero(&self) -> bool {
        *self == Self::none()
    }

    /// A copy of `state` as seen through noisy sensors.
    pub fn perturb<R: Rng + ?Sized>(&self, state: &MavState, rng: &mut R) -> MavState {
        let mut gauss = |s: f64| {
            Vector3::new(
                s * rng.sample::<f64, _>(StandardNormal),
                s * rng.sample::<f64, _>(StandardNormal),
                s * rng.sample::<f64, _>(StandardNormal),
            )
        };
        let mut s = state.clone();
        s.position += gauss(self.position);
        s.attitude *= exp_so3(&gauss(self.attitude));
        s.velocity += gauss(self.velocity);
        s.body_rate += gauss(self.body_rate);
        s
    }

    pub fn observe<R: Rng + ?Sized>(
        &self,
        state: &MavState,
        task: &TaskSpec,
        prev: &Action,
        mode: ObservationMode,
        rng: &mut R,
        out: &mut [f64],
    ) {
        if self.is_zero() {
            write_observation(state, task, prev, mode, out);
        } else {
            write_observation(&self.perturb(state, rng), task, prev, mode, out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub num_envs: usize,
    pub updates: usize,
    pub mode: ObservationMode,
    /// Updates over which randomisation ranges grow to full size.
    pub curriculum_updates: usize,
    /// Write a numbered policy checkpoint every this many updates (0 disables).
    pub checkpoint_every: usize,
    pub parallel: bool,
    pub noise: ObsNoise,
    pub ppo: PpoConfig,
    pub policy: PolicyConfig,
    pub critic_hidden: Vec<usize>,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_envs: 256,
            updates: 1000,
            mode: ObservationMode::Matrix,
            curriculum_updates: 300,
            checkpoint_every: 100,
            parallel: true,
            noise: ObsNoise::default(),
            ppo: PpoConfig::default(),
            policy: PolicyConfig::default(),
            critic_hidden: vec![128; 3],
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = TrainError::Config;
        if self.num_envs == 0 {
            return Err(bad("num_envs must be positive".into()));
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return Err(bad("critic_hidden widths must be positive".into()));
        }
        for (name, v) in [
            ("noise.position", self.noise.position),
            ("noise.attitude", self.noise.attitude),
            ("noise.velocity", self.noise.velocity),
            ("noise.body_rate", self.noise.body_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(format!("{name} must be non-negative")));
            }
        }
        self.ppo.validate().map_err(bad)?;
        self.policy.validate().map_err(bad)?;
        self.env.validate().map_err(bad)?;
        if self.env.episode.tasks.is_empty() {
            return Err(bad("at least one task is required".into()));
        }
        Ok(())
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: usize,
    pub env_steps: u64,
    pub curriculum: f64,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_length: f64,
    pub crash_rate: f64,
    pub final_position_error: f64,
    pub final_attitude_error_deg: f64,
    /// Mean per-step reward divided by the task maximum.
    pub mean_step_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub max_sigma: f64,
    pub lipschitz_bound: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub update: usize,
    pub env_steps: u64,
    pub policy: PolicyNet,
    pub critic: CriticNet,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub envs: Vec<EnvSnapshot>,
    pub rng: ChaCha8Rng,
}

pub struct Trainer {
    cfg: TrainConfig,
    policy: PolicyNet,
    critic: CriticNet,
    actor_opt: Adam,
    critic_opt: Adam,
    envs: VecEnv,
    rng: ChaCha8Rng,
    update: usize,
    env_steps: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let params = &cfg.env.params;
        let mut init = stream_rng(cfg.seed, u64::MAX - 1);
        let policy = PolicyNet::new(cfg.mode, &cfg.policy, params, &mut init);
        let critic = CriticNet::new(&cfg.critic_hidden, params, &mut init);
        let actor_opt = actor_optimizer(&policy, cfg.ppo.actor_lr);
        let critic_opt = critic_optimizer(&critic, cfg.ppo.critic_lr);
        let mut envs = VecEnv::new(&cfg.env, cfg.num_envs, cfg.seed, cfg.mode)?;
        envs.set_parallel(cfg.parallel);
        envs.set_curriculum(curriculum_level(0, cfg.curriculum_updates));
        // resample the first episodes at the starting curriculum level
        for e in envs.envs_mut() {
            e.reset();
        }
        Ok(Self {
            rng: stream_rng(cfg.seed, u64::MAX),
            cfg,
            policy,
            critic,
            actor_opt,
            critic_opt,
            envs,
            update: 0,
            env_steps: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut PolicyNet {
        &mut self.policy
    }

    pub fn critic(&self) -> &CriticNet {
        &self.critic
    }

    /// Changes where [`Trainer::train`] stops, e.g. to extend a resumed run.
    pub fn set_target_updates(&mut self, updates: usize) {
        self.cfg.updates = updates;
    }

    pub fn update_index(&self) -> usize {
        self.update
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            format: TRAINER_STATE_FORMAT.into(),
            version: TRAINER_STATE_VERSION,
            config: self.cfg.clone(),
            update: self.update,
            env_steps: self.env_steps,
            policy: self.policy.clone(),
            critic: self.critic.clone(),
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
            envs: self.envs.envs().iter().map(|e| e.snapshot()).collect(),
            rng: self.rng.clone(),
        }
    }

    pub fn from_state(state: TrainerState) -> Result<Self, TrainError> {
        if state.format != TRAINER_STATE_FORMAT || state.version != TRAINER_STATE_VERSION {
            return Err(TrainError::Config(format!(
                "unsupported trainer state `{}` version {}",
                state.format, state.version
            )));
        }
        state.config.validate()?;
        state.policy.validate()?;
        state.critic.validate()?;
        if state.envs.len() != state.config.num_envs {
            return Err(TrainError::Config(
                "environment count does not match config".into(),
            ));
        }
        let envs = state
            .envs
            .into_iter()
            .map(|s| crate::env::Env::from_snapshot(state.config.env.clone(), s))
            .collect::<Result<Vec<_>, _>>()?;
        let mut envs = VecEnv::from_envs(envs, state.config.mode);
        envs.set_parallel(state.config.parallel);
        Ok(Self {
            cfg: state.config,
            policy: state.policy,
            critic: state.critic,
            actor_opt: state.actor_opt,
            critic_opt: state.critic_opt,
            envs,
            rng: state.rng,
            update: state.update,
            env_steps: state.env_steps,
        })
    }

    pub fn save_state(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string(&self.state()).expect("trainer state serializes");
        std::fs::write(path, text).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_state(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let state: TrainerState =
            serde_json::from_str(&text).map_err(|source| TrainError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_state(state)
    }

    /// Collects one rollout of `horizon × num_envs` transitions.
    pub fn collect_rollout(&mut self) -> (Batch, RolloutStats) {
        let n = self.envs.len();
        let horizon = self.cfg.ppo.horizon;
        let mode = self.cfg.mode;
        let d = mode.dim();
        let gamma = self.cfg.ppo.gamma;
        let max_rewards: Vec<f64> = self
            .envs
            .envs()
            .iter()
            .map(|e| self.cfg.env.reward.max_reward(e.kind()))
            .collect();

        let total = horizon * n;
        let mut batch = Batch {
            obs_dim: d,
            obs: Vec::with_capacity(total * d),
            critic_obs: Vec::with_capacity(total * CRITIC_OBS_DIM),
            pre_squash: Vec::with_capacity(total * ACTION_DIM),
            log_prob: Vec::with_capacity(total),
            advantages: Vec::new(),
            returns: Vec::new(),
        };
        let mut rewards = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut dones = Vec::with_capacity(total);
        let mut stats = RolloutStats::default();

        let mut obs = vec![0.0; n * d];
        let mut normed = vec![0.0; n * d];
        let mut cobs = vec![0.0; n * CRITIC_OBS_DIM];
        let mut actor_cache = MlpCache::default();
        let mut critic_cache = MlpCache::default();
        for _ in 0..horizon {
            for (e, row) in self.envs.envs().iter().zip(obs.chunks_mut(d)) {
                self.cfg.noise.observe(
                    e.state(),
                    e.task(),
                    e.prev_action(),
                    mode,
                    &mut self.rng,
                    row,
                );
            }
            self.envs.critic_observe(&mut cobs);
            self.policy.normalize_batch(&obs, &mut normed);
            self.policy.mlp.forward_batch(&normed, n, &mut actor_cache);
            let v = self.critic.values_batch(&cobs, &mut critic_cache);

            let mut actions = Vec::with_capacity(n);
            for i in 0..n {
                let m = &actor_cache.output()[i * ACTION_DIM..(i + 1) * ACTION_DIM];
                let s = self
                    .policy
                    .sample_from_mean([m[0], m[1], m[2], m[3]], &mut self.rng);
                batch.pre_squash.extend_from_slice(&s.pre_squash);
                batch.log_prob.push(s.log_prob);
                actions.push(s.action);
            }
            batch.obs.extend_from_slice(&obs);
            batch.critic_obs.extend_from_slice(&cobs);
            values.extend_from_slice(&v);

            let outcomes = self.envs.step(&actions);
            for (i, out) in outcomes.into_iter().enumerate() {
                let norm_reward = out.reward.total / max_rewards[i];
                stats.reward_sum += norm_reward;
                let mut r = norm_reward * self.cfg.ppo.reward_scale;
                if let Some(term) = &out.terminal_critic_obs {
                    r += gamma * self.critic.value(term);
                }
                rewards.push(r);
                dones.push(out.done);
                if let Some(ep) = out.episode {
                    stats.push(&ep);
                }
            }
        }
        stats.steps = total;
        self.envs.critic_observe(&mut cobs);
        let last = self.critic.values_batch(&cobs, &mut critic_cache);
        let (mut adv, returns) = compute_gae(
            &rewards,
            &values,
            &dones,
            &last,
            n,
            gamma,
            self.cfg.ppo.lambda,
        );
        normalize(&mut adv);
        batch.advantages = adv;
        batch.returns = returns;
        self.env_steps += total as u64;
        (batch, stats)
    }

    /// Runs one rollout and one PPO update.
    pub fn step(&mut self) -> UpdateMetrics {
        let start = Instant::now();
        let level = curriculum_level(self.update, self.cfg.curriculum_updates);
        self.envs.set_curriculum(level);
        let (batch, roll) = self.collect_rollout();
        let s = ppo_update(
            &mut self.policy,
            &mut self.critic,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &batch,
            &self.cfg.ppo,
            &mut self.rng,
        );
        self.update += 1;
        let eps = roll.episodes.max(1) as f64;
        UpdateMetrics {
            update: self.update,
            env_steps: self.env_steps,
            curriculum: level,
            episodes: roll.episodes,
            mean_return: roll.return_sum / eps,
            mean_length: roll.length_sum / eps,
            crash_rate: roll.crashes as f64 / eps,
            final_position_error: roll.position_error_sum / eps,
            final_attitude_error_deg: roll.attitude_error_sum.to_degrees() / eps,
            mean_step_reward: roll.reward_sum / roll.steps.max(1) as f64,
            policy_loss: s.policy_loss,
            value_loss: s.value_loss,
            entropy: s.entropy,
            approx_kl: s.approx_kl,
            clip_fraction: s.clip_fraction,
            max_sigma: s.max_sigma,
            lipschitz_bound: self.policy.lipschitz_bound(),
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    /// Trains until `config.updates`, writing metrics, checkpoints and state under `out`.
    pub fn train(
        &mut self,
        out: &Path,
        mut on_update: impl FnMut(&UpdateMetrics),
    ) -> Result<TrainSummary, TrainError> {
        let io = |path: PathBuf| move |source| TrainError::Io { path, source };
        std::fs::create_dir_all(out).map_err(io(out.to_path_buf()))?;
        let metrics_path = out.join("metrics.csv");
        let fresh = self.update == 0 || !metrics_path.exists();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&metrics_path)
            .map_err(io(metrics_path.clone()))?;
        let mut wtr = csv::WriterBuilder::new()
            .has_headers(fresh)
            .from_writer(file);
        let csv_err = |e: csv::Error| TrainError::Config(format!("writing metrics: {e}"));
        let mut last = None;
        while self.update < self.cfg.updates {
            let m = self.step();
            wtr.serialize(m).map_err(csv_err)?;
            wtr.flush().map_err(io(metrics_path.clone()))?;
            on_update(&m);
            if self.cfg.checkpoint_every > 0 && self.update % self.cfg.checkpoint_every == 0 {
                self.policy
                    .save(&out.join(format!("policy_{:05}.json", self.update)))?;
                self.save_state(&out.join("trainer_state.json"))?;
            }
            last = Some(m);
        }
        self.policy.save(&out.join("policy.json"))?;
        self.critic.save(&out.join("critic.json"))?;
        self.save_state(&out.join("trainer_state.json"))?;
        Ok(TrainSummary {
            updates: self.update,
            env_steps: self.env_steps,
            last,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub updates: usize,
    pub env_steps: u64,
    pub last: Option<UpdateMetrics>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RolloutStats {
    pub steps: usize,
    pub reward_sum: f64,
    pub episodes: usize,
    pub return_sum: f64,
    pub length_sum: f64,
    pub crashes: usize,
    pub position_error_sum: f64,
    pub attitude_error_sum: f64,
}

impl RolloutStats {
    fn push(&mut self, ep: &crate::env::EpisodeSummary) {
        self.episodes += 1;
        self.return_sum += ep.total_reward;
        self.length_sum += ep.length as f64;
        self.crashes += ep.crashed as usize;
        self.position_error_sum += ep.final_position_error;
        self.attitude_error_sum += ep.final_attitude_error;
    }
}
