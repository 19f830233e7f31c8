use std::fmt::Write as _;
use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{run_scenario, Scenario};
use crate::controller::Controller;
use crate::dynamics::MavState;
use crate::env::log::TrajectoryLog;
use crate::env::{EnvConfig, TaskSpec};
use crate::error::EvalError;

/// `(radius MSE, tangential velocity MSE)` over rows with `t ∈ [start, end]`.
///
/// The circle centre is read from each row's target columns; positive `v*`
/// is counter-clockwise.
pub fn tracking_mse(
    log: &TrajectoryLog,
    radius: f64,
    speed: f64,
    window: (f64, f64),
) -> Result<(f64, f64), EvalError> {
    let (start, end) = window;
    let (first, last) = match (log.rows.first(), log.rows.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(EvalError::TooShort { needed: 1, got: 0 }),
    };
    let eps = 1e-9;
    if !(start <= end && start >= first - eps && end <= last + eps) {
        return Err(EvalError::Window {
            start,
            end,
            log_start: first,
            log_end: last,
        });
    }
    let (mut er, mut ev, mut n) = (0.0, 0.0, 0usize);
    for row in log
        .rows
        .iter()
        .filter(|r| r.t >= start - eps && r.t <= end + eps)
    {
        let d = row.position() - row.target();
        let rho = d.x.hypot(d.y);
        let tangent = if rho > 1e-12 {
            Vector3::new(-d.y, d.x, 0.0) / rho
        } else {
            Vector3::zeros()
        };
        er += (rho - radius).powi(2);
        ev += (row.velocity().dot(&tangent) - speed).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::TooShort { needed: 1, got: 0 });
    }
    Ok((er / n as f64, ev / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    pub radius: f64,
    pub altitude: f64,
    /// Transient discarded after the command (s).
    pub settle: f64,
    /// Measured span after settling (s).
    pub window: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            radius: 1.2,
            altitude: 2.0,
            settle: 5.0,
            window: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingEntry {
    pub speed: f64,
    pub radius_mse: f64,
    pub velocity_mse: f64,
    pub crashed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub controller: String,
    pub radius: f64,
    pub entries: Vec<TrackingEntry>,
}

impl TrackingReport {
    pub fn entry(&self, speed: f64) -> Option<&TrackingEntry> {
        self.entries.iter().find(|e| e.speed == speed)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{} (r* = {} m)\n", self.controller, self.radius);
        s.push_str("  v* (m/s)   radius MSE (m^2)   velocity MSE (m^2/s^2)\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "  {:>8.2}   {:>16.6}   {:>22.6}{}",
                e.speed,
                e.radius_mse,
                e.velocity_mse,
                if e.crashed { "   crashed" } else { "" }
            );
        }
        s
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| EvalError::Log(e.to_string());
        wtr.write_record([
            "controller",
            "radius",
            "speed",
            "radius_mse",
            "velocity_mse",
            "crashed",
        ])
        .map_err(err)?;
        for e in &self.entries {
            wtr.write_record([
                self.controller.clone(),
                self.radius.to_string(),
                e.speed.to_string(),
                e.radius_mse.to_string(),
                e.velocity_mse.to_string(),
                e.crashed.to_string(),
            ])
            .map_err(err)?;
        }
        wtr.flush().map_err(|e| EvalError::Log(e.to_string()))
    }
}

/// Starts hovering on the circle, commands `v*` and returns the full log.
pub fn circle_run(
    controller: &mut dyn Controller,
    env: &EnvConfig,
    cfg: &TrackingConfig,
    speed: f64,
) -> Result<(TrajectoryLog, bool), EvalError> {
    let center = Vector3::new(0.0, 0.0, cfg.altitude);
    let start = center + Vector3::new(cfg.radius, 0.0, 0.0);
    let state = MavState::hover_at(start, &env.params);
    let task = TaskSpec::circle(center, cfg.radius, speed);
    let steps = ((cfg.settle + cfg.window) / crate::dynamics::POLICY_DT).round() as usize;
    let out = run_scenario(controller, &Scenario::new(env.clone(), state, task, steps))?;
    Ok((out.log, out.crashed))
}

/// One table row per speed; a crashed run reports infinite errors.
pub fn circle_tracking(
    controller: &mut dyn Controller,
    env: &EnvConfig,
    cfg: &TrackingConfig,
    speeds: &[f64],
) -> Result<TrackingReport, EvalError> {
    let mut entries = Vec::new();
    for &v in speeds {
        controller.reset();
        let (log, crashed) = circle_run(controller, env, cfg, v)?;
        let (radius_mse, velocity_mse) = if crashed {
            (f64::INFINITY, f64::INFINITY)
        } else {
            tracking_mse(&log, cfg.radius, v, (cfg.settle, cfg.settle + cfg.window))?
        };
        entries.push(TrackingEntry {
            speed: v,
            radius_mse,
            velocity_mse,
            crashed,
        });
    }
    Ok(TrackingReport {
        controller: controller.name().to_string(),
        radius: cfg.radius,
        entries,
    })
}
