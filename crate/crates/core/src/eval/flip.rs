use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{run_scenario, Scenario, TaskEvent};
use crate::controller::Controller;
use crate::dynamics::{MavState, POLICY_DT};
use crate::env::log::TrajectoryLog;
use crate::env::{EnvConfig, TaskSpec};
use crate::error::EvalError;
use crate::math::{roll_of, wrap_pi};

/// Scripted flip session: hover, then one trigger every `interval` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlipScenarioConfig {
    pub flips: usize,
    pub altitude: f64,
    /// Time of the first trigger (s).
    pub start: f64,
    pub interval: f64,
    /// Extra time after the last trigger (s).
    pub tail: f64,
}

impl Default for FlipScenarioConfig {
    fn default() -> Self {
        Self {
            flips: 3,
            altitude: 2.0,
            start: 1.0,
            interval: 1.0,
            tail: 2.0,
        }
    }
}

pub fn flip_run(
    controller: &mut dyn Controller,
    env: &EnvConfig,
    cfg: &FlipScenarioConfig,
) -> Result<(TrajectoryLog, bool), EvalError> {
    let target = Vector3::new(0.0, 0.0, cfg.altitude);
    let state = MavState::hover_at(target, &env.params);
    let task = TaskSpec::flip(target, 0.0);
    let step_of = |t: f64| (t / POLICY_DT).round() as usize;
    let end = cfg.start + cfg.interval * cfg.flips.saturating_sub(1) as f64 + cfg.tail;
    let mut sc = Scenario::new(env.clone(), state, task, step_of(end));
    sc.events = (0..cfg.flips)
        .map(|i| TaskEvent::TriggerFlip {
            step: step_of(cfg.start + i as f64 * cfg.interval),
            direction: 1.0,
        })
        .collect();
    let out = run_scenario(controller, &sc)?;
    Ok((out.log, out.crashed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    /// Completed 2π rotations about the roll axis.
    pub flips: usize,
    /// Operator flip commands seen in the log.
    pub commands: usize,
    pub completion_times: Vec<f64>,
    /// Time from the previous completion (or the first command) to each completion.
    pub durations: Vec<f64>,
    pub mean_period: f64,
    pub mean_rate: f64,
    /// Largest distance from the target along the flip-plane normal (m).
    pub max_out_of_plane: f64,
    pub max_altitude_deviation: f64,
    pub tiltage: Vec<f64>,
}

impl FlipReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "flips completed       {}", self.flips);
        let _ = writeln!(s, "flip commands         {}", self.commands);
        let _ = writeln!(s, "mean period (s)       {:.4}", self.mean_period);
        let _ = writeln!(s, "mean roll rate        {:.3} rad/s", self.mean_rate);
        let _ = writeln!(s, "max out-of-plane (m)  {:.4}", self.max_out_of_plane);
        let _ = writeln!(
            s,
            "max altitude dev (m)  {:.4}",
            self.max_altitude_deviation
        );
        let min_tilt = self.tiltage.iter().copied().fold(f64::INFINITY, f64::min);
        let _ = writeln!(s, "min tiltage           {:.4}", min_tilt);
        s
    }
}

/// Roll angle unwrapped across rows, starting from the first row's roll.
pub fn unwrapped_roll(log: &TrajectoryLog) -> Vec<f64> {
    let mut out = Vec::with_capacity(log.len());
    let mut prev = None;
    let mut acc = 0.0;
    for row in &log.rows {
        let r = roll_of(&row.attitude());
        acc = match prev {
            None => r,
            Some(p) => acc + wrap_pi(r - p),
        };
        prev = Some(r);
        out.push(acc);
    }
    out
}

pub fn flip_scorecard(log: &TrajectoryLog) -> FlipReport {
    let roll = unwrapped_roll(log);
    let rows = &log.rows;
    let mut commands = Vec::new();
    let mut prev_cmd = 0.0;
    for row in rows {
        if row.command - prev_cmd > PI {
            commands.push(row.t);
        }
        prev_cmd = row.command;
    }

    let mut completion_times = Vec::new();
    if let Some(&r0) = roll.first() {
        for (row, r) in rows.iter().zip(&roll) {
            let done = ((r - r0).abs() / TAU + 1e-9).floor() as usize;
            while completion_times.len() < done {
                completion_times.push(row.t);
            }
        }
    }
    let start = commands
        .first()
        .copied()
        .or_else(|| rows.first().map(|r| r.t))
        .unwrap_or(0.0);
    let mut durations = Vec::new();
    let mut last = start;
    for &t in &completion_times {
        durations.push(t - last);
        last = t;
    }
    let flips = completion_times.len();
    let mean_period = if flips > 0 {
        (last - start) / flips as f64
    } else {
        0.0
    };
    let mean_rate = if mean_period > 0.0 {
        TAU / mean_period
    } else {
        0.0
    };

    let normal = rows
        .first()
        .map(|r| {
            let x = r.attitude() * Vector3::x();
            let h = Vector3::new(x.x, x.y, 0.0);
            if h.norm() > 1e-6 {
                h.normalize()
            } else {
                Vector3::x()
            }
        })
        .unwrap_or_else(Vector3::x);
    let mut max_out_of_plane: f64 = 0.0;
    let mut max_altitude_deviation: f64 = 0.0;
    for row in rows {
        let d = row.position() - row.target();
        max_out_of_plane = max_out_of_plane.max(d.dot(&normal).abs());
        max_altitude_deviation = max_altitude_deviation.max(d.z.abs());
    }

    FlipReport {
        flips,
        commands: commands.len(),
        completion_times,
        durations,
        mean_period,
        mean_rate,
        max_out_of_plane,
        max_altitude_deviation,
        tiltage: rows.iter().map(|r| r.tiltage()).collect(),
    }
}
