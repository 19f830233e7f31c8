use std::process::{Command, Output};

fn taco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taco"))
        .args(args)
        .output()
        .expect("taco runs")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

#[test]
fn params_dump_prints_vehicle_constants() {
    let out = taco(&["params", "dump"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mass = 0.46"), "{text}");
    assert!(text.contains("motor_distance = 0.149"), "{text}");

    let out = taco(&[
        "params",
        "dump",
        "--format",
        "json",
        "--set",
        "train.env.params.mass=0.5",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["params"]["mass"], 0.5);
}

#[test]
fn short_training_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = taco(&[
        "train",
        "--task",
        "pos",
        "--envs",
        "4",
        "--updates",
        "2",
        "--serial",
        "--set",
        "train.ppo.horizon=16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "policy.json",
        "config.toml",
        "run.json",
        "metrics.csv",
        "trainer_state.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "train");

    // resuming extends the same run
    let o = taco(&[
        "train",
        "--resume",
        "--updates",
        "3",
        "--serial",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    // the checkpoint flies the lipschitz certificate
    let o = taco(&[
        "eval",
        "lipschitz",
        "--checkpoint",
        out.join("policy.json").to_str().unwrap(),
        "--pairs",
        "200",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}

#[test]
fn se3_yaw_sweep_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = taco(&[
        "eval",
        "yaw-sweep",
        "--controller",
        "se3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout)
        .trim_end()
        .ends_with("PASS"));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 362);
    assert!(dir.path().join("config.toml").exists());
}

#[test]
fn sim_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let o = taco(&[
        "sim",
        "--controller",
        "se3",
        "--task",
        "circle",
        "--duration",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = dir.path().join("log.csv");
    assert!(log.exists());
    let o = taco(&["replay", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("circle"));
}

fn assert_error(out: &Output, code: i32, kind: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = stderr_json(out);
    assert_eq!(v["code"], code);
    assert_eq!(v["error"], kind);
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[test]
fn errors_map_to_exit_codes() {
    assert_error(&taco(&["train", "--bogus"]), 2, "usage");
    assert_error(
        &taco(&["params", "dump", "--set", "train.nope=1"]),
        3,
        "config",
    );
    assert_error(&taco(&["params", "dump", "--set", "noequals"]), 2, "usage");
    assert_error(
        &taco(&[
            "eval",
            "lipschitz",
            "--checkpoint",
            "/definitely/not/here.json",
        ]),
        4,
        "io",
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"format\": \"something-else\"}").unwrap();
    assert_error(
        &taco(&["eval", "lipschitz", "--checkpoint", bad.to_str().unwrap()]),
        5,
        "checkpoint",
    );
    assert_error(
        &taco(&["eval", "yaw-sweep", "--controller", "policy"]),
        2,
        "usage",
    );
}

#[test]
fn help_and_version_exit_cleanly() {
    assert!(taco(&["--help"]).status.success());
    assert!(taco(&["--version"]).status.success());
}

#[test]
fn serve_answers_health_checks() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpStream;
    use std::process::Stdio;

    let mut child = Command::new(env!("CARGO_BIN_EXE_taco"))
        .args(["serve", "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .expect(&line)
        .to_string();
    let mut s = TcpStream::connect(&addr).unwrap();
    write!(
        s,
        "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"status\":\"ok\""), "{resp}");
}
