use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Serialize;
use taco_core::controller::{Controller, ControllerSpec, PolicyController};
use taco_core::dynamics::{MavState, POLICY_DT};
use taco_core::env::log::TrajectoryLog;
use taco_core::env::{TaskKind, TaskSpec};
use taco_core::eval::{
    circle_tracking, flip_run, flip_scorecard, hover_evaluation, hover_scenario, hover_smoothness,
    lipschitz_certificate, run_scenario, tracking_mse, yaw_sweep, Scenario, TaskEvent,
    TrackingReport,
};
use taco_core::policy::PolicyNet;
use taco_core::trainer::Trainer;
use taco_service::{AppState, SessionDefaults};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{
    ConfigArgs, ControllerArgs, ControllerKind, DumpFormat, EvalCommand, ServeArgs, SimArgs,
    SimTask, TrainArgs, TrainTask,
};

#[derive(Serialize)]
struct RunInfo<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: Vec<String>,
}

/// Writes `config.toml` and `run.json` into `dir`.
fn write_run_files(dir: &Path, cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    cfg.write(dir)?;
    let info = RunInfo {
        tool: "taco",
        version: env!("CARGO_PKG_VERSION"),
        command,
        args: std::env::args().skip(1).collect(),
    };
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&info).expect("run info serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_file(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_file(path, &(text + "\n"))
}

fn prepare_out(
    out: &Option<PathBuf>,
    cfg: &RunConfig,
    command: &str,
) -> Result<Option<PathBuf>, CliError> {
    if let Some(dir) = out {
        write_run_files(dir, cfg, command)?;
    }
    Ok(out.clone())
}

fn verdict(pass: bool, what: &str) -> Result<(), CliError> {
    if pass {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::EvalFailed(format!(
            "{what} did not meet its gates"
        )))
    }
}

fn controller_spec(args: &ControllerArgs) -> Result<ControllerSpec, CliError> {
    Ok(match args.controller {
        ControllerKind::Policy => ControllerSpec::Policy {
            checkpoint: args.checkpoint.clone().ok_or_else(|| {
                CliError::Usage("--controller policy requires --checkpoint".into())
            })?,
        },
        ControllerKind::Se3 => ControllerSpec::Se3,
        ControllerKind::Mpc => ControllerSpec::Mpc,
    })
}

fn build(spec: &ControllerSpec, cfg: &RunConfig) -> Result<Box<dyn Controller>, CliError> {
    let b = &cfg.baselines;
    Ok(spec.build(&cfg.train.env.params, &b.se3, &b.mpc)?)
}

fn build_controller(
    args: &ControllerArgs,
    cfg: &RunConfig,
) -> Result<Box<dyn Controller>, CliError> {
    build(&controller_spec(args)?, cfg)
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut sets = Vec::new();
    if let Some(k) = &args.klip {
        sets.push(format!("train.policy.k_lip={k}"));
    }
    if let Some(o) = &args.obs {
        sets.push(format!("train.mode=\"{o}\""));
    }
    if let Some(n) = args.envs {
        sets.push(format!("train.num_envs={n}"));
    }
    if let Some(n) = args.updates {
        sets.push(format!("train.updates={n}"));
    }
    if let Some(s) = args.seed {
        sets.push(format!("train.seed={s}"));
    }
    let tasks = match args.task {
        TrainTask::Pos => "[\"pos\"]",
        TrainTask::Circle => "[\"circle\"]",
        TrainTask::Flip => "[\"flip\"]",
        TrainTask::Multi => "[\"pos\", \"circle\", \"flip\"]",
    };
    sets.push(format!("train.env.episode.tasks={tasks}"));
    if args.serial {
        sets.push("train.parallel=false".into());
    }
    // explicit --set flags win over the shorthand flags
    sets.extend(args.config.sets.iter().cloned());
    let mut cfg = RunConfig::resolve(args.config.config.as_deref(), &sets)?;

    let out = args.out.clone().unwrap_or_else(|| {
        let task = format!("{:?}", args.task).to_lowercase();
        let k = cfg
            .train
            .policy
            .k_lip
            .map_or("none".to_string(), |k| k.to_string());
        PathBuf::from("runs").join(format!("{task}-{}-{k}", cfg.train.mode.name()))
    });

    let mut trainer = if args.resume {
        let state = out.join("trainer_state.json");
        let mut t = Trainer::load_state(&state)?;
        // the stored config is authoritative; only the stopping point may move
        let updates = args.updates.unwrap_or(t.config().updates);
        t.set_target_updates(updates);
        cfg.train = t.config().clone();
        t
    } else {
        Trainer::new(cfg.train.clone())?
    };
    write_run_files(&out, &cfg, "train")?;
    let every = args.log_every;
    let summary = trainer.train(&out, |m| {
        if every > 0 && m.update % every == 0 {
            println!(
                "update {:5}  steps {:9}  return {:8.3}  crash {:.3}  pos_err {:.3}  att_err {:5.1}  entropy {:6.3}  sigma {:.3}  {:.1}s",
                m.update,
                m.env_steps,
                m.mean_return,
                m.crash_rate,
                m.final_position_error,
                m.final_attitude_error_deg,
                m.entropy,
                m.max_sigma,
                m.seconds
            );
        }
    })?;
    println!(
        "trained {} updates ({} env steps); outputs in {}",
        summary.updates,
        summary.env_steps,
        out.display()
    );
    Ok(())
}

pub fn eval(cmd: EvalCommand) -> Result<(), CliError> {
    match cmd {
        EvalCommand::YawSweep {
            controller,
            out,
            config,
        } => {
            let cfg = RunConfig::resolve(config.config.as_deref(), &config.sets)?;
            let out = prepare_out(&out, &cfg, "eval yaw-sweep")?;
            let mut c = build_controller(&controller, &cfg)?;
            let target = cfg.train.env.episode.target();
            let r = yaw_sweep(c.as_mut(), &cfg.train.env.params, target, &cfg.eval.sweep);
            print!("{}", r.summary());
            if let Some(dir) = &out {
                r.write_csv(create_file(&dir.join("sweep.csv"))?)?;
                write_json(&dir.join("sweep.json"), &r)?;
            }
            let pass = match controller.controller {
                // the geometric laws are exactly odd and decoupled
                ControllerKind::Se3 | ControllerKind::Mpc => {
                    r.symmetry <= 1e-12 && r.independence == 0.0
                }
                ControllerKind::Policy => cfg.eval.gates.sweep(&r),
            };
            verdict(pass, "yaw sweep")
        }
        EvalCommand::Smoothness {
            checkpoint,
            compare,
            out,
            config,
        } => {
            let cfg = RunConfig::resolve(config.config.as_deref(), &config.sets)?;
            let out = prepare_out(&out, &cfg, "eval smoothness")?;
            let s = &cfg.eval.smoothness;
            let env = &cfg.train.env;
            let mut first = PolicyController::new(PolicyNet::load(&checkpoint)?);
            let mut second = match &compare {
                Some(p) => Some(PolicyController::new(PolicyNet::load(p)?)),
                None => None,
            };
            let mut rows = Vec::new();
            let (mut sum_a, mut sum_b) = (0.0, 0.0);
            println!(
                "seed  {:>14}  {:>14}",
                "first",
                if second.is_some() { "second" } else { "-" }
            );
            for &seed in &s.seeds {
                let (series_a, a) = hover_smoothness(&mut first, env, seed, s.steps, s.noise)?;
                let b = match second.as_mut() {
                    Some(c) => {
                        let (series_b, b) = hover_smoothness(c, env, seed, s.steps, s.noise)?;
                        if let Some(dir) = &out {
                            write_series(
                                &dir.join(format!("throttle_seed{seed}.csv")),
                                &series_a,
                                Some(&series_b),
                            )?;
                        }
                        Some(b)
                    }
                    None => {
                        if let Some(dir) = &out {
                            write_series(
                                &dir.join(format!("throttle_seed{seed}.csv")),
                                &series_a,
                                None,
                            )?;
                        }
                        None
                    }
                };
                sum_a += a;
                sum_b += b.unwrap_or(0.0);
                println!(
                    "{seed:4}  {a:14.6}  {}",
                    b.map_or("-".to_string(), |b| format!("{b:14.6}"))
                );
                rows.push((seed, a, b));
            }
            let n = s.seeds.len().max(1) as f64;
            println!(
                "mean  {:14.6}  {}",
                sum_a / n,
                if second.is_some() {
                    format!("{:14.6}", sum_b / n)
                } else {
                    "-".into()
                }
            );
            if let Some(dir) = &out {
                let mut text = String::from("seed,first,second\n");
                for (seed, a, b) in &rows {
                    text.push_str(&format!(
                        "{seed},{a},{}\n",
                        b.map_or(String::new(), |b| b.to_string())
                    ));
                }
                write_file(&dir.join("smoothness.csv"), &text)?;
            }
            verdict(second.is_none() || sum_a < sum_b, "smoothness comparison")
        }
        EvalCommand::CircleMse {
            controller,
            speeds,
            against,
            out,
            config,
        } => {
            let cfg = RunConfig::resolve(config.config.as_deref(), &config.sets)?;
            let out = prepare_out(&out, &cfg, "eval circle-mse")?;
            let speeds = speeds.unwrap_or_else(|| cfg.eval.speeds.clone());
            let env = &cfg.train.env;
            let mut c = build_controller(&controller, &cfg)?;
            let report = circle_tracking(c.as_mut(), env, &cfg.eval.tracking, &speeds)?;
            print!("{}", report.table());
            let mut pass = report.entries.iter().all(|e| cfg.eval.gates.tracking(e));
            let baseline = match against {
                Some(kind) => {
                    let args = ControllerArgs {
                        controller: kind,
                        checkpoint: None,
                    };
                    let mut b = build_controller(&args, &cfg)?;
                    let r = circle_tracking(b.as_mut(), env, &cfg.eval.tracking, &speeds)?;
                    print!("{}", r.table());
                    pass &= report
                        .entries
                        .iter()
                        .zip(&r.entries)
                        .all(|(a, b)| a.velocity_mse < b.velocity_mse);
                    Some(r)
                }
                None => None,
            };
            if let Some(dir) = &out {
                let mut reports: Vec<&TrackingReport> = vec![&report];
                reports.extend(baseline.as_ref());
                let mut f = create_file(&dir.join("tracking.csv"))?;
                for (i, r) in reports.iter().enumerate() {
                    let mut buf = Vec::new();
                    r.write_csv(&mut buf)?;
                    let text = String::from_utf8(buf).expect("csv is utf-8");
                    let body = if i == 0 {
                        text.as_str()
                    } else {
                        text.split_once('\n').map_or("", |x| x.1)
                    };
                    std::io::Write::write_all(&mut f, body.as_bytes())
                        .map_err(|e| CliError::io(dir, e))?;
                }
                write_json(&dir.join("tracking.json"), &reports)?;
            }
            verdict(pass, "circle tracking")
        }
        EvalCommand::Hover {
            controller,
            episodes,
            out,
            config,
        } => {
            let mut cfg = RunConfig::resolve(config.config.as_deref(), &config.sets)?;
            if let Some(n) = episodes {
                cfg.eval.hover.episodes = n;
            }
            let out = prepare_out(&out, &cfg, "eval hover")?;
            let mut c = build_controller(&controller, &cfg)?;
            let report = hover_evaluation(c.as_mut(), &cfg.train.env, &cfg.eval.hover)?;
            print!("{}", report.summary());
            if let Some(dir) = &out {
                write_json(&dir.join("hover.json"), &report)?;
            }
            verdict(cfg.eval.gates.hover(&report), "hover")
        }
        EvalCommand::Flip {
            controller,
            flips,
            out,
            config,
        } => {
            let mut cfg = RunConfig::resolve(config.config.as_deref(), &config.sets)?;
            if let Some(n) = flips {
                cfg.eval.flip.flips = n;
            }
            let out = prepare_out(&out, &cfg, "eval flip")?;
            let mut c = build_controller(&controller, &cfg)?;
            let (log, crashed) = flip_run(c.as_mut(), &cfg.train.env, &cfg.eval.flip)?;
            let report = flip_scorecard(&log);
            print!("{}", report.summary());
            if crashed {
                println!("crashed");
            }
            if let Some(dir) = &out {
                log.save(&dir.join("log.csv"))?;
                write_json(&dir.join("flip.json"), &report)?;
            }
            verdict(cfg.eval.gates.flip(&report, crashed), "flip scorecard")
        }
        EvalCommand::Lipschitz {
            checkpoint,
            pairs,
            out,
            config,
        } => {
            let mut cfg = RunConfig::resolve(config.config.as_deref(), &config.sets)?;
            if let Some(n) = pairs {
                cfg.eval.certificate.pairs = n;
            }
            let out = prepare_out(&out, &cfg, "eval lipschitz")?;
            let mut net = PolicyNet::load(&checkpoint)?;
            let report =
                lipschitz_certificate(&mut net, &cfg.train.env.params, &cfg.eval.certificate);
            print!("{}", report.summary());
            if let Some(dir) = &out {
                write_json(&dir.join("certificate.json"), &report)?;
            }
            verdict(report.passed(), "Lipschitz certificate")
        }
    }
}

fn write_series(path: &Path, a: &[f64], b: Option<&[f64]>) -> Result<(), CliError> {
    let mut text = String::from(if b.is_some() {
        "step,first,second\n"
    } else {
        "step,first\n"
    });
    for (i, x) in a.iter().enumerate() {
        match b.and_then(|b| b.get(i)) {
            Some(y) => text.push_str(&format!("{i},{x},{y}\n")),
            None if b.is_some() => text.push_str(&format!("{i},{x},\n")),
            None => text.push_str(&format!("{i},{x}\n")),
        }
    }
    write_file(path, &text)
}

pub fn sim(args: SimArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args.config.config.as_deref(), &args.config.sets)?;
    let mut c = build_controller(&args.controller, &cfg)?;
    let env = &cfg.train.env;
    if !(args.duration.is_finite() && args.duration > 0.0) {
        return Err(CliError::Usage("--duration must be positive".into()));
    }
    let steps = (args.duration / POLICY_DT).round() as usize;
    let target = env.episode.target();
    let sc = match args.task {
        SimTask::Pos => {
            hover_scenario(env, args.seed, steps, taco_core::trainer::ObsNoise::none())?
        }
        SimTask::Circle => {
            let r = env.episode.circle_radius;
            let start = target + Vector3::new(r, 0.0, 0.0);
            let task = TaskSpec::circle(
                target,
                r,
                args.speed
                    .clamp(-env.episode.max_circle_speed, env.episode.max_circle_speed),
            );
            Scenario::new(
                env.clone(),
                MavState::hover_at(start, &env.params),
                task,
                steps,
            )
        }
        SimTask::Flip => {
            let f = &cfg.eval.flip;
            let mut sc = Scenario::new(
                env.clone(),
                MavState::hover_at(target, &env.params),
                TaskSpec::flip(target, 0.0),
                steps,
            );
            sc.events = (0..args.flips)
                .map(|i| TaskEvent::TriggerFlip {
                    step: ((f.start + i as f64 * f.interval) / POLICY_DT).round() as usize,
                    direction: 1.0,
                })
                .collect();
            sc
        }
    };
    let outcome = run_scenario(c.as_mut(), &sc)?;
    println!("controller  {}", c.name());
    print!("{}", summarize(&outcome.log));
    if outcome.crashed {
        println!("crashed");
    }
    if let Some(dir) = &args.out {
        write_run_files(dir, &cfg, "sim")?;
        outcome.log.save(&dir.join("log.csv"))?;
        println!("log written to {}", dir.join("log.csv").display());
    }
    Ok(())
}

/// Plain-text digest of a trajectory log with the task-specific metric.
fn summarize(log: &TrajectoryLog) -> String {
    let Some(last) = log.rows.last() else {
        return "rows        0\n".into();
    };
    let first = &log.rows[0];
    let mut s = format!(
        "rows        {}\nspan (s)    {:.2} .. {:.2}\nmean reward {:.4}\n",
        log.len(),
        first.t,
        last.t,
        log.rows.iter().map(|r| r.reward).sum::<f64>() / log.len() as f64
    );
    match TaskKind::from_flag(last.task_flag) {
        Some(TaskKind::Pos) => {
            let e = (last.position() - last.target()).norm();
            s.push_str(&format!(
                "task        pos\nfinal position error (m)  {e:.4}\n"
            ));
        }
        Some(TaskKind::Circle) => {
            s.push_str("task        circle\n");
            let from = first.t + 0.2 * (last.t - first.t);
            if let Ok((er, ev)) = tracking_mse(log, last.radius, last.command, (from, last.t)) {
                s.push_str(&format!(
                    "radius MSE (m^2) {er:.6}\nvelocity MSE (m^2/s^2) {ev:.6}  (v* = {}, last 80% of the log)\n",
                    last.command
                ));
            }
        }
        Some(TaskKind::Flip) => {
            s.push_str("task        flip\n");
            s.push_str(&flip_scorecard(log).summary());
        }
        None => s.push_str(&format!("task flag   {} (unknown)\n", last.task_flag)),
    }
    s
}

pub fn replay(path: &Path) -> Result<(), CliError> {
    let log = TrajectoryLog::load(path)?;
    print!("{}", summarize(&log));
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args.config.config.as_deref(), &args.config.sets)?;
    let defaults = SessionDefaults {
        env: cfg.train.env.clone(),
        se3: cfg.baselines.se3.clone(),
        mpc: cfg.baselines.mpc.clone(),
        service: cfg.service.clone(),
    };
    let rt =
        tokio::runtime::Runtime::new().map_err(|e| CliError::Other(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Io(format!("bind {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::Io(e.to_string()))?;
        println!("listening on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        taco_service::serve(listener, AppState::new(defaults), shutdown)
            .await
            .map_err(|e| CliError::Io(format!("serve: {e}")))
    })
}

#[derive(Serialize)]
struct ParamsDump<'a> {
    params: &'a taco_core::dynamics::MavParams,
    derived: Derived,
}

#[derive(Serialize)]
struct Derived {
    motor_distance: f64,
    weight: f64,
    max_collective_thrust: f64,
    hover_throttle: f64,
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

pub fn params_dump(format: DumpFormat, config: &ConfigArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(config.config.as_deref(), &config.sets)?;
    let p = &cfg.train.env.params;
    let dump = ParamsDump {
        params: p,
        derived: Derived {
            motor_distance: round9(p.motor_distance()),
            weight: round9(p.weight()),
            max_collective_thrust: round9(p.max_collective_thrust()),
            hover_throttle: round9(p.hover_throttle()),
        },
    };
    match format {
        DumpFormat::Toml => print!("{}", toml::to_string(&dump).expect("params serialize")),
        DumpFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&dump).expect("params serialize")
        ),
    }
    Ok(())
}
