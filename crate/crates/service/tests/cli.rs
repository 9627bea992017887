use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use tapmobo::acquisition::SteeringState;
use tapmobo::pareto::dominates;
use tapmobo::session::SessionConfig;
use tapmobo_service::cli::load_session;

fn tapmobo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tapmobo")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

fn run_small(dir: &Path, name: &str, steps: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = tapmobo(&["run", "--seeds", "4", "--steps", steps, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn run_defaults_writes_sixty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grating.json");
    let o = tapmobo(&["run", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("final params"), "{stdout}");
    assert!(stdout.contains("height_difference"));
    let s = load_session(&out).unwrap();
    // Convergence may stop the run early; the budget caps it at 60.
    let rows = csv_rows(&dir.path().join("grating.csv"));
    assert_eq!(rows, s.observations.len());
    assert!(rows <= 60 && rows > 10);
    let full = tapmobo(&[
        "run",
        "--out",
        dir.path().join("budget.json").to_str().unwrap(),
        "--config",
        write_no_convergence(dir.path()).to_str().unwrap(),
    ]);
    assert_eq!(code(&full), 0);
    assert_eq!(csv_rows(&dir.path().join("budget.csv")), 60);
}

fn write_no_convergence(dir: &Path) -> std::path::PathBuf {
    let mut cfg = SessionConfig::default();
    cfg.convergence.tolerance = 0.0;
    let p = dir.join("no_convergence.json");
    std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn zero_steps_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "zero.json", "0");
    assert_eq!(csv_rows(&out.with_extension("csv")), 4);

    let a = run_small(dir.path(), "a.json", "2");
    let b = run_small(dir.path(), "b.json", "2");
    assert_eq!(
        std::fs::read(a.with_extension("csv")).unwrap(),
        std::fs::read(b.with_extension("csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.with_extension("jsonl")).unwrap(),
        std::fs::read(b.with_extension("jsonl")).unwrap()
    );
}

#[test]
fn verify_detects_tampering_and_old_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "v.json", "2");
    let journal = out.with_extension("jsonl");
    assert_eq!(code(&tapmobo(&["verify", "--session", journal.to_str().unwrap()])), 0);
    assert_eq!(code(&tapmobo(&["verify", "--session", out.to_str().unwrap()])), 0);

    let text = std::fs::read_to_string(&journal).unwrap();
    let mut lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let target = lines
        .iter_mut()
        .find(|l| l["event"] == "step")
        .expect("a step record");
    let iteration = target["observation"]["iteration"].as_u64().unwrap();
    let v = target["observation"]["rewards"]["values"][1].as_f64().unwrap();
    target["observation"]["rewards"]["values"][1] = Value::from(v + 0.25);
    let tampered = dir.path().join("tampered.jsonl");
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(&tampered, body).unwrap();
    let o = tapmobo(&["verify", "--session", tampered.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains(&format!("iteration {iteration}")), "{report}");

    let mut old = lines.clone();
    old[0]["schema_version"] = Value::from(0);
    let old_path = dir.path().join("old.jsonl");
    std::fs::write(&old_path, old.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    let o = tapmobo(&["verify", "--session", old_path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema version"));
}

#[test]
fn sweep_weights_rows_and_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "sw.json", "1");
    let before = std::fs::read(&out).unwrap();
    let o = tapmobo(&["sweep-weights", "--session", out.to_str().unwrap(), "--reward", "phase"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[0][0], "0.1");
    assert_eq!(rows[19][0], "2");
    assert_eq!(std::fs::read(&out).unwrap(), before);

    let s = load_session(&out).unwrap();
    let unsteered = s.propose_optimum(&SteeringState::neutral(3)).unwrap();
    let one = rows.iter().find(|r| r[0] == "1").unwrap();
    assert_eq!(one[1], unsteered.index.to_string());

    let o = tapmobo(&[
        "sweep-weights",
        "--session",
        out.to_str().unwrap(),
        "--reward",
        "phase",
        "--from",
        "1.5",
        "--to",
        "1.5",
    ]);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let o = tapmobo(&["sweep-weights", "--session", out.to_str().unwrap(), "--reward", "nope"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn synthetic_degenerate_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("opposed.json");
    let o = tapmobo(&["synthetic", "--problem", "opposed", "--steps", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = load_session(&out).unwrap();
    let r = s.raw_rewards();
    for a in &r {
        for b in &r {
            assert!(!dominates(a, b), "{a:?} dominates {b:?}");
        }
    }

    let out = dir.path().join("identical.json");
    let o = tapmobo(&["synthetic", "--problem", "identical", "--steps", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let s = load_session(&out).unwrap();
    let spacing = s.config.grid.axes[0].spacing();
    let pts: Vec<&Vec<f64>> = s.pareto_front.entries.iter().map(|e| &e.params).collect();
    for a in &pts {
        for b in &pts {
            let d = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(d <= spacing + 1e-12);
        }
    }
}

#[test]
fn config_and_infeasible_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&tapmobo(&["run", "--sample", "marble"])), 2);
    assert_eq!(code(&tapmobo(&["synthetic", "--problem", "identical", "--seeds", "1"])), 2);

    let mut cfg = SessionConfig::default();
    cfg.grid.axes[0].min = 60.0;
    cfg.grid.axes[1].max = 0.5;
    let p = dir.path().join("infeasible.json");
    std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = tapmobo(&["run", "--config", p.to_str().unwrap(), "--out", dir.path().join("x.json").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}

fn http(port: u16, request: &str) -> String {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn serve_occupied_port_fails_with_environment_code() {
    let held = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let dir = tempfile::tempdir().unwrap();
    let o = tapmobo(&["serve", "--host", "127.0.0.1", "--port", &port, "--data", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 4);
}

#[test]
fn serve_creates_sessions_and_exits_cleanly_on_sigterm() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_tapmobo"))
        .args(["serve", "--host", "127.0.0.1", "--port", &port.to_string(), "--data"])
        .arg(dir.path())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(start.elapsed() < Duration::from_secs(20), "server did not start");
        std::thread::sleep(Duration::from_millis(20));
    }
    let resp = http(
        port,
        "POST /sessions HTTP/1.1\r\nHost: localhost\r\nContent-Length: 0\r\nConnection: close\r\n\r\n",
    );
    assert!(resp.starts_with("HTTP/1.1 201"), "{resp}");
    let body = resp.split("\r\n\r\n").nth(1).unwrap();
    let id = serde_json::from_str::<Value>(body).unwrap()["id"].as_str().unwrap().to_string();

    let status = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let deadline = Instant::now() + Duration::from_secs(20);
    let exit = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "server ignored SIGTERM");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(exit.code(), Some(0));
    let journal = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    assert!(journal.starts_with("{\"event\":\"created\""));
}
