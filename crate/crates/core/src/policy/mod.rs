//! Actor and critic networks.
//!
//! The actor maps an observation to a body-rate command through
//! `a = c_o + K_o ⊙ tanh(f(K_i ⊙ (s - c_i)))`, where `f` is a ReLU MLP whose
//! layers can be held to a spectral-norm budget `k_lip`. Exploration is a
//! diagonal Gaussian on the pre-squash output with a state-independent
//! log standard deviation.

mod adam;
mod linear;
mod mlp;

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use linear::{max_singular_value, spectral_project, Linear, PowerIteration};
pub use mlp::{Mlp, MlpCache, MlpGrads};

use crate::dynamics::{Action, MavParams};
use crate::env::{ObservationMode, CRITIC_OBS_DIM, MATRIX_OBS_DIM};
use crate::error::PolicyError;

pub const ACTION_DIM: usize = 4;
pub const POLICY_FORMAT: &str = "taco-policy";
pub const CRITIC_FORMAT: &str = "taco-critic";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    /// Per-layer spectral budget; `None` leaves the weights unconstrained.
    pub k_lip: Option<f64>,
    pub init_log_std: f64,
    pub power_iteration: PowerIteration,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128; 3],
            k_lip: None,
            init_log_std: -1.0,
            power_iteration: PowerIteration::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err("hidden layer widths must be non-empty and positive".into());
        }
        if let Some(k) = self.k_lip {
            if !(k.is_finite() && k > 0.0) {
                return Err(format!("k_lip must be positive, got {k}"));
            }
        }
        if !self.init_log_std.is_finite() {
            return Err("init_log_std must be finite".into());
        }
        Ok(())
    }
}

/// Input scale and offset for the policy observation.
pub fn default_input_scaling(mode: ObservationMode, params: &MavParams) -> (Vec<f64>, Vec<f64>) {
    let mut scale = Vec::with_capacity(mode.dim());
    let mut offset = vec![0.0; mode.dim()];
    scale.extend([0.2; 3]);
    scale.extend(std::iter::repeat_n(1.0, mode.rotation_len()));
    // flag, command
    scale.extend([1.0, 0.2]);
    scale.extend([0.1; 3]);
    scale.extend([0.05; 3]);
    scale.push(0.2);
    let i_volt = scale.len();
    scale.push(1.0 / (params.battery.v_full - params.battery.v_min));
    offset[i_volt] = params.battery.v_full;
    let half = params.throttle_max / 2.0;
    scale.push(1.0 / half);
    offset[i_volt + 1] = half;
    scale.extend(params.max_body_rate.iter().map(|m| 1.0 / m));
    debug_assert_eq!(scale.len(), mode.dim());
    (scale, offset)
}

/// Input scale and offset for the critic observation.
pub fn default_critic_scaling(params: &MavParams) -> (Vec<f64>, Vec<f64>) {
    let (mut scale, mut offset) = default_input_scaling(ObservationMode::Matrix, params);
    let hover = (params.weight() / (4.0 * params.k_force)).sqrt();
    scale.extend([1.0 / hover; 4]);
    offset.extend([hover; 4]);
    (scale, offset)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn scale_into(obs: &[f64], scale: &[f64], offset: &[f64], out: &mut [f64]) {
    let d = scale.len();
    for (row_in, row_out) in obs.chunks(d).zip(out.chunks_mut(d)) {
        for i in 0..d {
            row_out[i] = scale[i] * (row_in[i] - offset[i]);
        }
    }
}

/// Log-density of a diagonal Gaussian at `u`.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub mode: ObservationMode,
    pub mlp: Mlp,
    pub input_scale: Vec<f64>,
    pub input_offset: Vec<f64>,
    pub output_scale: [f64; ACTION_DIM],
    pub output_center: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
    pub k_lip: Option<f64>,
    pub power_iteration: PowerIteration,
}

/// A sampled action together with what PPO needs to score it later.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySample {
    pub action: Action,
    pub pre_squash: [f64; ACTION_DIM],
    pub mean: [f64; ACTION_DIM],
    pub log_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile<T> {
    format: String,
    version: u32,
    network: T,
}

#[derive(Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
}

fn save_json<T: Serialize>(path: &Path, format: &str, network: &T) -> Result<(), PolicyError> {
    let file = CheckpointFile {
        format: format.to_string(),
        version: CHECKPOINT_VERSION,
        network,
    };
    let text = serde_json::to_string_pretty(&file).expect("networks serialize");
    std::fs::write(path, text).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path, format: &str) -> Result<T, PolicyError> {
    let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse = |source| PolicyError::Parse {
        path: path.to_path_buf(),
        source,
    };
    let header: CheckpointHeader = serde_json::from_str(&text).map_err(parse)?;
    if header.format != format || header.version != CHECKPOINT_VERSION {
        return Err(PolicyError::Version {
            format: header.format,
            version: header.version,
        });
    }
    let file: CheckpointFile<T> = serde_json::from_str(&text).map_err(parse)?;
    Ok(file.network)
}

fn check_mlp(mlp: &Mlp, input: usize, output: usize) -> Result<(), PolicyError> {
    if mlp.layers.is_empty() {
        return Err(PolicyError::Invalid("network has no layers".into()));
    }
    if mlp.input_dim() != input {
        return Err(PolicyError::Dimension {
            what: "network input",
            expected: input,
            actual: mlp.input_dim(),
        });
    }
    if mlp.output_dim() != output {
        return Err(PolicyError::Dimension {
            what: "network output",
            expected: output,
            actual: mlp.output_dim(),
        });
    }
    for (i, w) in mlp.layers.windows(2).enumerate() {
        if w[0].rows != w[1].cols {
            return Err(PolicyError::Invalid(format!(
                "layer {} output does not feed layer {}",
                i,
                i + 1
            )));
        }
    }
    for l in &mlp.layers {
        if l.weight.len() != l.rows * l.cols
            || l.bias.len() != l.rows
            || l.power_u.len() != l.rows
            || l.power_v.len() != l.cols
        {
            return Err(PolicyError::Invalid(
                "layer buffers do not match their shape".into(),
            ));
        }
        if l.weight.iter().chain(&l.bias).any(|x| !x.is_finite()) {
            return Err(PolicyError::Invalid("non-finite weight".into()));
        }
    }
    Ok(())
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        mode: ObservationMode,
        cfg: &PolicyConfig,
        params: &MavParams,
        rng: &mut R,
    ) -> Self {
        let mut mlp = Mlp::new(mode.dim(), &cfg.hidden, ACTION_DIM, 2f64.sqrt(), 0.01, rng);
        let (input_scale, input_offset) = default_input_scaling(mode, params);
        let half = params.throttle_max / 2.0;
        let output_scale = [
            half,
            params.max_body_rate[0],
            params.max_body_rate[1],
            params.max_body_rate[2],
        ];
        let output_center = [half, 0.0, 0.0, 0.0];
        // start near hover instead of half throttle
        let hover = (params.hover_throttle() - half) / half;
        mlp.layers.last_mut().unwrap().bias[0] = hover.clamp(-0.99, 0.99).atanh();
        let mut net = Self {
            mode,
            mlp,
            input_scale,
            input_offset,
            output_scale,
            output_center,
            log_std: [cfg.init_log_std; ACTION_DIM],
            k_lip: cfg.k_lip,
            power_iteration: cfg.power_iteration,
        };
        net.project();
        net
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let dim = self.mode.dim();
        check_mlp(&self.mlp, dim, ACTION_DIM)?;
        for (what, len) in [
            ("input scale", self.input_scale.len()),
            ("input offset", self.input_offset.len()),
        ] {
            if len != dim {
                return Err(PolicyError::Dimension {
                    what,
                    expected: dim,
                    actual: len,
                });
            }
        }
        if self.log_std.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::Invalid("non-finite log std".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.mode.dim()
    }

    fn check_obs(&self, obs: &[f64]) -> Result<(), PolicyError> {
        if obs.len() != self.input_dim() {
            return Err(PolicyError::Dimension {
                what: "observation",
                expected: self.input_dim(),
                actual: obs.len(),
            });
        }
        Ok(())
    }

    pub fn normalize_batch(&self, obs: &[f64], out: &mut [f64]) {
        scale_into(obs, &self.input_scale, &self.input_offset, out);
    }

    /// Pre-squash mean for a single observation.
    pub fn mean(&self, obs: &[f64]) -> Result<[f64; ACTION_DIM], PolicyError> {
        self.check_obs(obs)?;
        let mut x = vec![0.0; obs.len()];
        self.normalize_batch(obs, &mut x);
        let y = self.mlp.forward(&x);
        Ok([y[0], y[1], y[2], y[3]])
    }

    pub fn squash(&self, u: &[f64; ACTION_DIM]) -> Action {
        let a: [f64; ACTION_DIM] =
            std::array::from_fn(|i| self.output_center[i] + self.output_scale[i] * u[i].tanh());
        Action::from_array(a)
    }

    /// Deterministic action `c_o + K_o ⊙ tanh(μ)`.
    pub fn act(&self, obs: &[f64]) -> Result<Action, PolicyError> {
        Ok(self.squash(&self.mean(obs)?))
    }

    pub fn sample_from_mean<R: Rng + ?Sized>(
        &self,
        mean: [f64; ACTION_DIM],
        rng: &mut R,
    ) -> PolicySample {
        let u: [f64; ACTION_DIM] = std::array::from_fn(|i| {
            let z: f64 = rng.sample(StandardNormal);
            mean[i] + self.log_std[i].exp() * z
        });
        PolicySample {
            action: self.squash(&u),
            pre_squash: u,
            mean,
            log_prob: gaussian_log_prob(&mean, &self.log_std, &u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        rng: &mut R,
    ) -> Result<PolicySample, PolicyError> {
        Ok(self.sample_from_mean(self.mean(obs)?, rng))
    }

    /// Log-density of the pre-squash sample `u`.
    pub fn log_prob(&self, mean: &[f64; ACTION_DIM], u: &[f64; ACTION_DIM]) -> f64 {
        gaussian_log_prob(mean, &self.log_std, u)
    }

    /// Log-density of `action` in action space, including the squash Jacobian.
    pub fn action_log_prob(&self, obs: &[f64], action: &Action) -> Result<f64, PolicyError> {
        let mean = self.mean(obs)?;
        let a = action.to_array();
        let mut u = [0.0; ACTION_DIM];
        let mut log_jac = 0.0;
        for i in 0..ACTION_DIM {
            let t = ((a[i] - self.output_center[i]) / self.output_scale[i])
                .clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            u[i] = t.atanh();
            log_jac += (self.output_scale[i] * (1.0 - t * t)).ln();
        }
        Ok(self.log_prob(&mean, &u) - log_jac)
    }

    /// Entropy of the pre-squash Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln())
            .sum()
    }

    /// Applies the spectral budget to every layer, if one is set.
    pub fn project(&mut self) -> Option<Vec<f64>> {
        let k = self.k_lip?;
        Some(self.mlp.spectral_project(k, self.power_iteration))
    }

    pub fn spectral_norms(&mut self) -> Vec<f64> {
        let rule = self.power_iteration;
        self.mlp.spectral_norms(rule)
    }

    pub fn input_scale_norm(&self) -> f64 {
        inf_norm(&self.input_scale)
    }

    pub fn output_scale_norm(&self) -> f64 {
        inf_norm(&self.output_scale)
    }

    /// `‖K_o‖ ‖K_i‖ Π σ_max(W_l)` from the current weights.
    pub fn lipschitz_bound(&mut self) -> f64 {
        let prod: f64 = self.spectral_norms().iter().product();
        self.output_scale_norm() * self.input_scale_norm() * prod
    }

    /// `‖K_o‖ ‖K_i‖ k^L`, the bound implied by the budget alone.
    pub fn nominal_lipschitz_bound(&self) -> Option<f64> {
        self.k_lip.map(|k| {
            self.output_scale_norm() * self.input_scale_norm() * k.powi(self.mlp.depth() as i32)
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        save_json(path, POLICY_FORMAT, self)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let net: Self = load_json(path, POLICY_FORMAT)?;
        net.validate()?;
        Ok(net)
    }

    /// Loads a checkpoint and rejects it unless it was trained for `mode`.
    pub fn load_for(path: &Path, mode: ObservationMode) -> Result<Self, PolicyError> {
        let net = Self::load(path)?;
        if net.mode != mode {
            return Err(PolicyError::ObservationMode {
                expected: mode.name().into(),
                found: net.mode.name().into(),
            });
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub mlp: Mlp,
    pub input_scale: Vec<f64>,
    pub input_offset: Vec<f64>,
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], params: &MavParams, rng: &mut R) -> Self {
        let (input_scale, input_offset) = default_critic_scaling(params);
        Self {
            mlp: Mlp::new(CRITIC_OBS_DIM, hidden, 1, 2f64.sqrt(), 1.0, rng),
            input_scale,
            input_offset,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        check_mlp(&self.mlp, CRITIC_OBS_DIM, 1)?;
        if self.input_scale.len() != CRITIC_OBS_DIM || self.input_offset.len() != CRITIC_OBS_DIM {
            return Err(PolicyError::Dimension {
                what: "critic input scale",
                expected: CRITIC_OBS_DIM,
                actual: self.input_scale.len(),
            });
        }
        Ok(())
    }

    pub fn normalize_batch(&self, obs: &[f64], out: &mut [f64]) {
        scale_into(obs, &self.input_scale, &self.input_offset, out);
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        debug_assert_eq!(obs.len(), CRITIC_OBS_DIM);
        let mut x = vec![0.0; obs.len()];
        self.normalize_batch(obs, &mut x);
        self.mlp.forward(&x)[0]
    }

    pub fn values_batch(&self, obs: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        let batch = obs.len() / CRITIC_OBS_DIM;
        let mut x = vec![0.0; obs.len()];
        self.normalize_batch(obs, &mut x);
        self.mlp.forward_batch(&x, batch, cache);
        cache.output().to_vec()
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        save_json(path, CRITIC_FORMAT, self)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let net: Self = load_json(path, CRITIC_FORMAT)?;
        net.validate()?;
        Ok(net)
    }
}

const _: () = assert!(CRITIC_OBS_DIM == MATRIX_OBS_DIM + ACTION_DIM);
