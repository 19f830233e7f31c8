use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::controller::Controller;
use crate::dynamics::{Action, MavParams, MavState};
use crate::env::TaskSpec;
use crate::error::EvalError;
use crate::math::rot_z;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub points: usize,
    /// The grid spans `[-π + δ, π - δ]`.
    pub endpoint_margin: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            points: 361,
            endpoint_margin: 1e-6,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Vec<f64> {
        let n = self.points.max(2);
        let lo = -PI + self.endpoint_margin;
        let step = 2.0 * (PI - self.endpoint_margin) / (n - 1) as f64;
        // mirrored construction keeps the grid exactly symmetric
        let mut g: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
        for i in 0..n / 2 {
            g[n - 1 - i] = -g[i];
        }
        if n % 2 == 1 {
            g[n / 2] = 0.0;
        }
        g
    }
}

/// Controller output over a sweep of yaw errors, with the four property metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub controller: String,
    pub yaw: Vec<f64>,
    pub throttle: Vec<f64>,
    pub rate_x: Vec<f64>,
    pub rate_y: Vec<f64>,
    pub rate_z: Vec<f64>,
    /// Largest |Δω| / Δψ over all three rate channels.
    pub spatial_smoothness: f64,
    /// Largest |ω_x| or |ω_y|.
    pub independence: f64,
    /// Largest |ω_z(ψ) + ω_z(−ψ)|.
    pub symmetry: f64,
    /// ‖ω(π − δ) − ω(−π + δ)‖.
    pub endpoint_gap: f64,
}

impl SweepResult {
    pub fn from_samples(controller: &str, yaw: Vec<f64>, actions: &[Action]) -> Self {
        let n = yaw.len();
        assert_eq!(n, actions.len());
        let rate = |i: usize| actions[i].body_rate;
        let mut spatial: f64 = 0.0;
        for i in 1..n {
            let dpsi = yaw[i] - yaw[i - 1];
            let d = rate(i) - rate(i - 1);
            spatial = spatial.max(d.amax() / dpsi.abs());
        }
        let independence = actions
            .iter()
            .map(|a| a.body_rate.x.abs().max(a.body_rate.y.abs()))
            .fold(0.0, f64::max);
        let symmetry = (0..n)
            .map(|i| (rate(i).z + rate(n - 1 - i).z).abs())
            .fold(0.0, f64::max);
        let endpoint_gap = if n > 0 {
            (rate(n - 1) - rate(0)).norm()
        } else {
            0.0
        };
        Self {
            controller: controller.to_string(),
            throttle: actions.iter().map(|a| a.throttle).collect(),
            rate_x: actions.iter().map(|a| a.body_rate.x).collect(),
            rate_y: actions.iter().map(|a| a.body_rate.y).collect(),
            rate_z: actions.iter().map(|a| a.body_rate.z).collect(),
            yaw,
            spatial_smoothness: spatial,
            independence,
            symmetry,
            endpoint_gap,
        }
    }

    /// `ω_z` at the first and last grid points.
    pub fn endpoint_yaw_rates(&self) -> (f64, f64) {
        (
            self.rate_z.first().copied().unwrap_or(0.0),
            self.rate_z.last().copied().unwrap_or(0.0),
        )
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| EvalError::Log(e.to_string());
        wtr.write_record(["yaw", "throttle", "rate_x", "rate_y", "rate_z"])
            .map_err(err)?;
        for i in 0..self.yaw.len() {
            wtr.write_record(
                [
                    self.yaw[i],
                    self.throttle[i],
                    self.rate_x[i],
                    self.rate_y[i],
                    self.rate_z[i],
                ]
                .map(|x| x.to_string()),
            )
            .map_err(err)?;
        }
        wtr.flush().map_err(|e| EvalError::Log(e.to_string()))
    }

    pub fn summary(&self) -> String {
        let (lo, hi) = self.endpoint_yaw_rates();
        format!(
            "controller          {}\n\
             points              {}\n\
             spatial smoothness  {:.6}\n\
             independence        {:.6}\n\
             symmetry            {:.6}\n\
             endpoint gap        {:.6}\n\
             rate_z at -pi, +pi  {:.6}, {:.6}\n",
            self.controller,
            self.yaw.len(),
            self.spatial_smoothness,
            self.independence,
            self.symmetry,
            self.endpoint_gap,
            lo,
            hi
        )
    }
}

/// Places the vehicle at `target` with zero velocity and yaw error `ψ` for
/// each grid point and records the controller's command.
pub fn yaw_sweep(
    controller: &mut dyn Controller,
    params: &MavParams,
    target: Vector3<f64>,
    cfg: &SweepConfig,
) -> SweepResult {
    let grid = cfg.grid();
    let task = TaskSpec::pos(target, 0.0);
    let prev = Action::hover(params);
    let actions: Vec<Action> = grid
        .iter()
        .map(|&psi| {
            let mut s = MavState::hover_at(target, params);
            s.attitude = rot_z(psi);
            controller.reset();
            controller.act(&s, &task, &prev)
        })
        .collect();
    SweepResult::from_samples(controller.name(), grid, &actions)
}
