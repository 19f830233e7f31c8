use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taco_core::baselines::{CircleReference, MpcConfig, Se3Gains};
use taco_core::controller::{Controller, MpcController, PolicyController, Se3Controller};
use taco_core::dynamics::{Action, MavParams, MavState};
use taco_core::env::log::{LogRow, TrajectoryLog};
use taco_core::env::{EnvConfig, ObservationMode, RewardBreakdown, TaskSpec};
use taco_core::error::EvalError;
use taco_core::eval::{
    circle_run, circle_tracking, hover_smoothness, lipschitz_certificate, mean_after, tilt,
    tracking_mse, world_yaw_rate, yaw_sweep, CertificateConfig, SweepConfig, TrackingConfig,
};
use taco_core::math::rot_z;
use taco_core::policy::{PolicyConfig, PolicyNet};
use taco_core::trainer::ObsNoise;

fn se3(params: &MavParams) -> Se3Controller {
    Se3Controller::new(params.clone(), Se3Gains::default())
}

/// Log of a vehicle following `reference` exactly, sampled at 100 Hz.
fn reference_log(reference: &CircleReference, radius_offset: f64, seconds: f64) -> TrajectoryLog {
    let p = MavParams::default();
    let task = TaskSpec::circle(reference.center, reference.radius, reference.speed);
    let zero = RewardBreakdown {
        total: 0.0,
        terms: [0.0; 4],
    };
    let mut log = TrajectoryLog::default();
    let n = (seconds * 100.0) as usize;
    for k in 0..=n {
        let t = k as f64 * 0.01;
        let mut s = MavState::hover_at(reference.position(t), &p);
        let radial = (reference.position(t) - reference.center).normalize();
        s.position += radius_offset * radial;
        s.velocity = reference.velocity(t);
        s.attitude = rot_z(reference.inward_yaw(t));
        s.time = t;
        log.push(LogRow::new(&s, &Action::hover(&p), &zero, &task));
    }
    log
}

#[test]
fn se3_sweep_is_exactly_odd_and_axis_independent() {
    let p = MavParams::default();
    let r = yaw_sweep(
        &mut se3(&p),
        &p,
        Vector3::new(0.0, 0.0, 2.0),
        &SweepConfig::default(),
    );
    assert_eq!(r.yaw.len(), 361);
    assert!(r.symmetry <= 1e-12, "symmetry {}", r.symmetry);
    assert_eq!(r.independence, 0.0);
    // the geometric law also flips sign across ±π
    let (lo, hi) = r.endpoint_yaw_rates();
    assert!(lo * hi < 0.0);
}

#[test]
fn tracking_mse_of_generating_reference_is_zero() {
    for speed in [1.0, -2.0, 5.0] {
        let r = CircleReference::new(Vector3::new(0.5, -0.3, 2.0), 1.2, speed, 0.4);
        let log = reference_log(&r, 0.0, 10.0);
        let (er, ev) = tracking_mse(&log, 1.2, speed, (2.0, 9.0)).unwrap();
        assert!(er < 1e-12 && ev < 1e-12, "{er} {ev}");
    }
}

#[test]
fn tracking_mse_of_radius_offset() {
    let r = CircleReference::new(Vector3::new(0.0, 0.0, 2.0), 1.2, 2.0, 0.0);
    let log = reference_log(&r, 0.1, 5.0);
    let (er, _) = tracking_mse(&log, 1.2, 2.0, (0.0, 5.0)).unwrap();
    assert!((er - 0.01).abs() < 1e-12, "{er}");
}

#[test]
fn tracking_window_outside_log_is_an_error() {
    let r = CircleReference::new(Vector3::zeros(), 1.0, 1.0, 0.0);
    let log = reference_log(&r, 0.0, 2.0);
    assert!(matches!(
        tracking_mse(&log, 1.0, 1.0, (1.0, 3.0)),
        Err(EvalError::Window { .. })
    ));
    assert!(tracking_mse(&TrajectoryLog::default(), 1.0, 1.0, (0.0, 1.0)).is_err());
}

#[test]
fn se3_coordinated_turn_yaw_rate() {
    let env = EnvConfig::default();
    let cfg = TrackingConfig {
        settle: 3.0,
        window: 3.0,
        ..TrackingConfig::default()
    };
    let (log, crashed) = circle_run(&mut se3(&env.params), &env, &cfg, 5.0).unwrap();
    assert!(!crashed);
    let wz = mean_after(&log, cfg.settle, world_yaw_rate).unwrap();
    let expected = 5.0 / 1.2;
    assert!((wz - expected).abs() < 0.05 * expected, "yaw rate {wz}");
}

#[test]
fn se3_circle_tilt_without_drag() {
    let mut env = EnvConfig::default();
    env.params.drag = [[0.0; 3]; 3];
    let cfg = TrackingConfig {
        settle: 3.0,
        window: 3.0,
        ..TrackingConfig::default()
    };
    let (log, crashed) = circle_run(&mut se3(&env.params), &env, &cfg, 5.0).unwrap();
    assert!(!crashed);
    let deg = mean_after(&log, cfg.settle, tilt).unwrap().to_degrees();
    let expected = (25.0 / 1.2 / env.params.gravity).atan().to_degrees();
    assert!((expected - 64.8).abs() < 0.05);
    assert!((deg - expected).abs() < 1.0, "tilt {deg}");
}

#[test]
fn mpc_circle_errors_are_finite() {
    let env = EnvConfig::default();
    let mut mpc = MpcController::new(
        env.params.clone(),
        Se3Gains::default(),
        MpcConfig::default(),
    );
    let cfg = TrackingConfig {
        settle: 2.0,
        window: 4.0,
        ..TrackingConfig::default()
    };
    let report = circle_tracking(&mut mpc, &env, &cfg, &[1.0, 3.0]).unwrap();
    assert_eq!(report.controller, "mpc");
    for e in &report.entries {
        assert!(!e.crashed);
        assert!(e.radius_mse.is_finite() && e.velocity_mse.is_finite());
        assert!(e.radius_mse >= 0.0 && e.velocity_mse >= 0.0);
    }
    assert!(report.table().contains("3.00"));
}

#[test]
fn certificate_with_identity_scalings_has_unit_bound() {
    let p = MavParams::default();
    let cfg = PolicyConfig {
        k_lip: Some(1.0),
        hidden: vec![32, 32],
        ..PolicyConfig::default()
    };
    let mut net = PolicyNet::new(
        ObservationMode::Matrix,
        &cfg,
        &p,
        &mut ChaCha8Rng::seed_from_u64(4),
    );
    net.input_scale = vec![1.0; net.input_dim()];
    net.output_scale = [1.0; 4];
    let report = lipschitz_certificate(
        &mut net,
        &p,
        &CertificateConfig {
            pairs: 2000,
            ..Default::default()
        },
    );
    assert_eq!(report.bound, 1.0);
    assert!(report.passed());
    assert!(report.max_quotient <= 1.0);
}

#[test]
fn certificate_for_unconstrained_net_uses_measured_norms() {
    let p = MavParams::default();
    let cfg = PolicyConfig {
        k_lip: None,
        hidden: vec![32, 32],
        ..PolicyConfig::default()
    };
    let mut net = PolicyNet::new(
        ObservationMode::Quaternion,
        &cfg,
        &p,
        &mut ChaCha8Rng::seed_from_u64(5),
    );
    let report = lipschitz_certificate(
        &mut net,
        &p,
        &CertificateConfig {
            pairs: 1000,
            ..Default::default()
        },
    );
    assert!(!report.constrained);
    assert_eq!(report.bound, report.measured_bound);
    assert!(report.passed());
    assert!(report.summary().contains("(measured)"));
}

#[test]
fn hover_scenarios_are_paired_by_seed() {
    let env = EnvConfig::default();
    let cfg = PolicyConfig {
        hidden: vec![16],
        ..PolicyConfig::default()
    };
    let net = PolicyNet::new(
        ObservationMode::Matrix,
        &cfg,
        &env.params,
        &mut ChaCha8Rng::seed_from_u64(1),
    );
    let mut c = PolicyController::new(net);
    let (a, ma) = hover_smoothness(&mut c, &env, 7, 50, ObsNoise::default()).unwrap();
    let (b, mb) = hover_smoothness(&mut c, &env, 7, 50, ObsNoise::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let (_, other) = hover_smoothness(&mut c, &env, 8, 50, ObsNoise::default()).unwrap();
    assert_ne!(ma, other);
}

#[test]
fn quaternion_observation_jumps_across_pi() {
    // the yaw sweep endpoints are the same attitude, so any gap comes from the encoding
    let p = MavParams::default();
    let cfg = PolicyConfig {
        k_lip: None,
        hidden: vec![16],
        ..PolicyConfig::default()
    };
    for (mode, jumps) in [
        (ObservationMode::Matrix, false),
        (ObservationMode::Quaternion, true),
    ] {
        let net = PolicyNet::new(mode, &cfg, &p, &mut ChaCha8Rng::seed_from_u64(2));
        let mut c = PolicyController::new(net);
        let r = yaw_sweep(
            &mut c,
            &p,
            Vector3::new(0.0, 0.0, 2.0),
            &SweepConfig::default(),
        );
        assert_eq!(
            r.endpoint_gap > 1e-4,
            jumps,
            "{} gap {}",
            c.name(),
            r.endpoint_gap
        );
    }
}
