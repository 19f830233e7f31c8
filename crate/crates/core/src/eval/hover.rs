use serde::{Deserialize, Serialize};

use super::{hover_scenario, run_scenario};
use crate::controller::Controller;
use crate::env::{target_state, EnvConfig};
use crate::error::EvalError;
use crate::math::rotation_angle;
use crate::trainer::ObsNoise;

/// Batch of POS episodes from the full randomization range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoverConfig {
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for HoverConfig {
    fn default() -> Self {
        Self {
            episodes: 256,
            steps: 1500,
            seed: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoverReport {
    pub episodes: usize,
    pub crashed: usize,
    /// Mean final distance to the target (m).
    pub mean_position_error: f64,
    /// Mean final attitude error (deg).
    pub mean_attitude_error_deg: f64,
    pub max_position_error: f64,
}

impl HoverReport {
    pub fn summary(&self) -> String {
        format!(
            "episodes {}  crashed {}  mean position error {:.4} m  mean attitude error {:.2} deg  max position error {:.4} m\n",
            self.episodes,
            self.crashed,
            self.mean_position_error,
            self.mean_attitude_error_deg,
            self.max_position_error
        )
    }
}

/// Final-state errors of `cfg.episodes` hover scenarios. A crashed episode
/// contributes its errors at the moment of the crash.
pub fn hover_evaluation(
    controller: &mut dyn Controller,
    env: &EnvConfig,
    cfg: &HoverConfig,
) -> Result<HoverReport, EvalError> {
    let mut pos = Vec::with_capacity(cfg.episodes);
    let mut att = Vec::with_capacity(cfg.episodes);
    let mut crashed = 0;
    for i in 0..cfg.episodes {
        let sc = hover_scenario(env, cfg.seed + i as u64, cfg.steps, ObsNoise::none())?;
        let out = run_scenario(controller, &sc)?;
        crashed += out.crashed as usize;
        let last = out
            .log
            .rows
            .last()
            .ok_or(EvalError::TooShort { needed: 1, got: 0 })?;
        let (p_v, r_v) = target_state(&sc.task);
        pos.push((last.position() - p_v).norm());
        att.push(rotation_angle(&(r_v.transpose() * last.attitude())).to_degrees());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(HoverReport {
        episodes: cfg.episodes,
        crashed,
        mean_position_error: mean(&pos),
        mean_attitude_error_deg: mean(&att),
        max_position_error: pos.iter().copied().fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::Se3Controller;

    #[test]
    fn geometric_controller_settles_from_random_starts() {
        let env = EnvConfig::default();
        let mut c = Se3Controller::new(env.params.clone(), Default::default());
        let short = HoverConfig {
            episodes: 8,
            steps: 1,
            ..Default::default()
        };
        let start = hover_evaluation(&mut c, &env, &short).unwrap();
        assert!(start.mean_position_error > 0.5);
        let settled = hover_evaluation(
            &mut c,
            &env,
            &HoverConfig {
                steps: 800,
                ..short
            },
        )
        .unwrap();
        assert_eq!(settled.crashed, 0);
        assert!(settled.mean_position_error < 0.01, "{}", settled.summary());
        assert!(settled.mean_attitude_error_deg < 1.0);
    }
}
