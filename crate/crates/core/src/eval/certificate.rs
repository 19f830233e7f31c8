use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, MavParams, MavState};
use crate::env::{write_observation, TaskSpec};
use crate::math::{exp_so3, rot_from_euler};
use crate::policy::PolicyNet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertificateConfig {
    pub pairs: usize,
    pub seed: u64,
    /// Fraction of pairs that are small perturbations of each other.
    pub adjacent_fraction: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            pairs: 10_000,
            seed: 0,
            adjacent_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub pairs: usize,
    pub max_quotient: f64,
    /// `k^L ‖K_i‖ ‖K_o‖` when constrained, otherwise the product of measured σ_max.
    pub bound: f64,
    /// Product of the measured per-layer σ_max with the scalings.
    pub measured_bound: f64,
    pub constrained: bool,
    pub violations: usize,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.max_quotient <= self.bound
    }

    pub fn summary(&self) -> String {
        format!(
            "pairs           {}\n\
             max quotient    {:.6}\n\
             bound           {:.6}{}\n\
             measured bound  {:.6}\n\
             violations      {}\n\
             result          {}\n",
            self.pairs,
            self.max_quotient,
            self.bound,
            if self.constrained { "" } else { " (measured)" },
            self.measured_bound,
            self.violations,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn random_vec<R: Rng + ?Sized>(rng: &mut R, half: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-half..=half))
}

/// A physically plausible state, task and previous action.
pub fn random_situation<R: Rng + ?Sized>(
    params: &MavParams,
    rng: &mut R,
) -> (MavState, TaskSpec, Action) {
    let target = Vector3::new(0.0, 0.0, 2.0);
    let mut s = MavState::hover_at(target + random_vec(rng, 3.0), params);
    s.attitude = rot_from_euler(
        rng.random_range(-PI..PI),
        rng.random_range(-PI / 2.0..PI / 2.0),
        rng.random_range(-PI..PI),
    );
    s.velocity = random_vec(rng, 4.0);
    s.body_rate = random_vec(rng, 8.0);
    s.voltage = rng.random_range(params.battery.v_min..=params.battery.v_full);
    let task = match rng.random_range(0..3) {
        0 => TaskSpec::pos(target, rng.random_range(-PI..PI)),
        1 => TaskSpec::circle(target, 1.2, rng.random_range(-5.0..=5.0)),
        _ => {
            let mut t = TaskSpec::flip(target, 0.0);
            t.flip.commanded = rng.random_range(0.0..4.0 * PI);
            t
        }
    };
    let prev = Action::new(
        rng.random_range(0.0..=params.throttle_max),
        Vector3::from_fn(|i, _| {
            rng.random_range(-params.max_body_rate[i]..=params.max_body_rate[i])
        }),
    );
    (s, task, prev)
}

fn nudge<R: Rng + ?Sized>(
    (s, task, prev): &(MavState, TaskSpec, Action),
    rng: &mut R,
) -> (MavState, TaskSpec, Action) {
    let mut s = s.clone();
    s.position += random_vec(rng, 0.01);
    s.velocity += random_vec(rng, 0.02);
    s.body_rate += random_vec(rng, 0.05);
    s.attitude *= exp_so3(&random_vec(rng, 0.01));
    let mut prev = *prev;
    prev.throttle += rng.random_range(-2.0..=2.0);
    prev.body_rate += random_vec(rng, 0.05);
    (s, task.clone(), prev)
}

/// Empirical Lipschitz quotients of the deterministic action map over random
/// and adjacent state pairs, compared with the analytic bound.
pub fn lipschitz_certificate(
    policy: &mut PolicyNet,
    params: &MavParams,
    cfg: &CertificateConfig,
) -> CertificateReport {
    let measured_bound = policy.lipschitz_bound();
    let bound = policy.nominal_lipschitz_bound().unwrap_or(measured_bound);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = policy.input_dim();
    let (mut o1, mut o2) = (vec![0.0; dim], vec![0.0; dim]);
    let mut max_quotient: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..cfg.pairs {
        let a = random_situation(params, &mut rng);
        let b = if rng.random_bool(cfg.adjacent_fraction.clamp(0.0, 1.0)) {
            nudge(&a, &mut rng)
        } else {
            random_situation(params, &mut rng)
        };
        write_observation(&a.0, &a.1, &a.2, policy.mode, &mut o1);
        write_observation(&b.0, &b.1, &b.2, policy.mode, &mut o2);
        let ds = o1
            .iter()
            .zip(&o2)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        if ds < 1e-12 {
            continue;
        }
        let u1 = policy
            .act(&o1)
            .expect("observation length matches")
            .to_array();
        let u2 = policy
            .act(&o2)
            .expect("observation length matches")
            .to_array();
        let da = u1
            .iter()
            .zip(&u2)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let q = da / ds;
        if q > bound * (1.0 + 1e-9) {
            violations += 1;
        }
        max_quotient = max_quotient.max(q);
    }
    CertificateReport {
        pairs: cfg.pairs,
        max_quotient,
        bound,
        measured_bound,
        constrained: policy.k_lip.is_some(),
        violations,
    }
}
