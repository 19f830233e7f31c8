//! Clipped-surrogate PPO update with the spectral projection after every step.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::CRITIC_OBS_DIM;
use crate::policy::{Adam, CriticNet, MlpCache, MlpGrads, PolicyNet, ACTION_DIM};

pub const LOG_STD_MIN: f64 = -3.0;
pub const LOG_STD_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub horizon: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Rewards are divided by the task's maximum reward and multiplied by this.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            epochs: 4,
            minibatches: 4,
            horizon: 64,
            entropy_coef: 1e-3,
            max_grad_norm: 0.5,
            reward_scale: 0.1,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must lie in [0, 1], got {v}"))
            }
        };
        unit("gamma", self.gamma)?;
        unit("lambda", self.lambda)?;
        for (name, v) in [
            ("clip", self.clip),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("max_grad_norm", self.max_grad_norm),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.epochs == 0 || self.minibatches == 0 || self.horizon == 0 {
            return Err("epochs, minibatches and horizon must be positive".into());
        }
        if !(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0) {
            return Err("entropy_coef must be non-negative".into());
        }
        Ok(())
    }
}

/// Flattened training samples.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub log_prob: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.log_prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prob.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Largest per-layer singular value seen before any projection in this update.
    pub max_sigma_before_projection: f64,
    /// Largest per-layer singular value after the final projection.
    pub max_sigma: f64,
}

/// Actor gradients: network weights plus the log standard deviation.
#[derive(Debug, Clone)]
pub struct ActorGrads {
    pub mlp: MlpGrads,
    pub log_std: [f64; ACTION_DIM],
}

impl ActorGrads {
    pub fn zeros_like(net: &PolicyNet) -> Self {
        Self {
            mlp: MlpGrads::zeros_like(&net.mlp),
            log_std: [0.0; ACTION_DIM],
        }
    }

    fn clip_norm(&mut self, max_norm: f64) {
        let n = (self.mlp.norm_sq() + self.log_std.iter().map(|x| x * x).sum::<f64>()).sqrt();
        if n > max_norm {
            let s = max_norm / n;
            self.mlp.scale(s);
            self.log_std.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Adam state sized for an actor: one slot per weight/bias plus the log std.
pub fn actor_optimizer(net: &PolicyNet, lr: f64) -> Adam {
    let mut sizes: Vec<usize> = net
        .mlp
        .layers
        .iter()
        .flat_map(|l| [l.weight.len(), l.bias.len()])
        .collect();
    sizes.push(ACTION_DIM);
    Adam::new(lr, &sizes)
}

pub fn critic_optimizer(net: &CriticNet, lr: f64) -> Adam {
    let sizes: Vec<usize> = net
        .mlp
        .layers
        .iter()
        .flat_map(|l| [l.weight.len(), l.bias.len()])
        .collect();
    Adam::new(lr, &sizes)
}

fn clip_grads(g: &mut MlpGrads, max_norm: f64) {
    let n = g.norm_sq().sqrt();
    if n > max_norm {
        g.scale(max_norm / n);
    }
}

fn gather(src: &[f64], width: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
    out
}

/// Surrogate loss and its gradients for one minibatch.
///
/// Returns `(loss, kl, clip_fraction)`; `grads` are overwritten.
pub fn actor_loss_and_grads(
    net: &PolicyNet,
    obs: &[f64],
    pre_squash: &[f64],
    old_log_prob: &[f64],
    advantages: &[f64],
    cfg: &PpoConfig,
    grads: &mut ActorGrads,
) -> (f64, f64, f64) {
    let b = old_log_prob.len();
    let mut x = vec![0.0; obs.len()];
    net.normalize_batch(obs, &mut x);
    let mut cache = MlpCache::default();
    net.mlp.forward_batch(&x, b, &mut cache);
    let mean = cache.output();
    let sd: [f64; ACTION_DIM] = std::array::from_fn(|j| net.log_std[j].exp());

    grads.mlp.clear();
    grads.log_std = [0.0; ACTION_DIM];
    let mut d_mean = vec![0.0; b * ACTION_DIM];
    let (mut loss, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let mu = &mean[i * ACTION_DIM..(i + 1) * ACTION_DIM];
        let u = &pre_squash[i * ACTION_DIM..(i + 1) * ACTION_DIM];
        let logp = crate::policy::gaussian_log_prob(mu, &net.log_std, u);
        let log_ratio = logp - old_log_prob[i];
        let ratio = log_ratio.exp();
        let a = advantages[i];
        let unclipped = ratio * a;
        let clipped_obj = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        loss -= unclipped.min(clipped_obj) * inv_b;
        kl += ((ratio - 1.0) - log_ratio) * inv_b;
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }
        if unclipped <= clipped_obj {
            let g = -ratio * a * inv_b;
            for j in 0..ACTION_DIM {
                let z = (u[j] - mu[j]) / sd[j];
                d_mean[i * ACTION_DIM + j] = g * z / sd[j];
                grads.log_std[j] += g * (z * z - 1.0);
            }
        }
    }
    let entropy = net.entropy();
    loss -= cfg.entropy_coef * entropy;
    for g in &mut grads.log_std {
        *g -= cfg.entropy_coef;
    }
    net.mlp.backward_batch(&cache, &d_mean, &mut grads.mlp);
    (loss, kl, clipped as f64 * inv_b)
}

/// Mean of `½ (V - R)²` and its gradients; `grads` are overwritten.
pub fn value_loss_and_grads(
    critic: &CriticNet,
    critic_obs: &[f64],
    returns: &[f64],
    grads: &mut MlpGrads,
) -> f64 {
    let b = returns.len();
    let mut cache = MlpCache::default();
    let v = critic.values_batch(critic_obs, &mut cache);
    let inv_b = 1.0 / b as f64;
    let mut dv = vec![0.0; b];
    let mut loss = 0.0;
    for i in 0..b {
        let e = v[i] - returns[i];
        loss += 0.5 * e * e * inv_b;
        dv[i] = e * inv_b;
    }
    grads.clear();
    critic.mlp.backward_batch(&cache, &dv, grads);
    loss
}

/// Applies an actor step and the spectral projection; returns the pre-projection max σ.
pub fn apply_actor_step(net: &mut PolicyNet, opt: &mut Adam, grads: &ActorGrads) -> Option<f64> {
    let mut params = net.mlp.param_slices_mut();
    params.push(net.log_std.as_mut_slice());
    let mut g = grads.mlp.slices();
    g.push(&grads.log_std);
    opt.update(&mut params, &g);
    for ls in &mut net.log_std {
        *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
    }
    net.project().map(|s| s.into_iter().fold(0.0, f64::max))
}

pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut PolicyNet,
    critic: &mut CriticNet,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    batch: &Batch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> UpdateStats {
    let n = batch.len();
    assert!(n > 0, "empty batch");
    let d = batch.obs_dim;
    let mb = n.div_ceil(cfg.minibatches);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut actor_grads = ActorGrads::zeros_like(policy);
    let mut critic_grads = MlpGrads::zeros_like(&critic.mlp);
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            let obs = gather(&batch.obs, d, chunk);
            let u = gather(&batch.pre_squash, ACTION_DIM, chunk);
            let old = gather(&batch.log_prob, 1, chunk);
            let adv = gather(&batch.advantages, 1, chunk);
            let (pl, kl, cf) =
                actor_loss_and_grads(policy, &obs, &u, &old, &adv, cfg, &mut actor_grads);
            actor_grads.clip_norm(cfg.max_grad_norm);
            if let Some(s) = apply_actor_step(policy, actor_opt, &actor_grads) {
                stats.max_sigma_before_projection = stats.max_sigma_before_projection.max(s);
            }

            let cobs = gather(&batch.critic_obs, CRITIC_OBS_DIM, chunk);
            let ret = gather(&batch.returns, 1, chunk);
            let vl = value_loss_and_grads(critic, &cobs, &ret, &mut critic_grads);
            clip_grads(&mut critic_grads, cfg.max_grad_norm);
            critic_opt.update(&mut critic.mlp.param_slices_mut(), &critic_grads.slices());

            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.approx_kl += kl;
            stats.clip_fraction += cf;
            count += 1.0;
        }
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.approx_kl /= count;
    stats.clip_fraction /= count;
    stats.entropy = policy.entropy();
    stats.max_sigma = policy.spectral_norms().into_iter().fold(0.0, f64::max);
    stats
}
