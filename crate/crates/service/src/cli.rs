//! The `tapmobo` command line.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use tapmobo::params::ControlParams;
use tapmobo::problem::{Problem, SyntheticProblem};
use tapmobo::session::{parse_jsonl, SessionConfig, SessionState};
use tapmobo::sim::SamplePreset;
use tapmobo::Error;

use crate::api::{self, AppState};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_ENVIRONMENT: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "tapmobo", version, about = "Multi-objective tuning of a simulated tapping-mode microscope")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Seed, optimize and final-scan one simulated sample.
    Run {
        #[arg(long, default_value = "grating")]
        sample: SamplePreset,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Session JSON path; the observation CSV and journal are written
        /// next to it with `.csv` and `.jsonl` extensions.
        #[arg(long, default_value = "session.json")]
        out: PathBuf,
        /// Add the line-similarity reward.
        #[arg(long)]
        similarity: bool,
        /// Base configuration (JSON) that the flags above override.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Proposed optimum for a range of weights on one reward.
    SweepWeights {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        reward: String,
        #[arg(long, default_value_t = 0.1)]
        from: f64,
        #[arg(long, default_value_t = 2.0)]
        to: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A session on one of the closed-form two-parameter problems.
    Synthetic {
        #[arg(long)]
        problem: SyntheticProblem,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synthetic.json")]
        out: PathBuf,
    },
    /// Replay a journal or session file and re-check its invariants.
    Verify {
        #[arg(long)]
        session: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "PORT", default_value_t = api::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "0.0.0.0")]
        host: std::net::IpAddr,
    },
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Infeasible(_) => EXIT_INFEASIBLE,
            Error::Io(_) => EXIT_ENVIRONMENT,
            _ => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_ENVIRONMENT, format!("{}: {e}", path.display()))
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            sample,
            seeds,
            steps,
            seed,
            out,
            similarity,
            config,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| io_failure(&p, e))?;
                    serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", p.display())))?
                }
                None => SessionConfig::default(),
            };
            cfg.problem = Problem::Microscope { sample };
            cfg.n_seeds = seeds;
            cfg.max_steps = steps;
            cfg.seed = seed;
            cfg.include_similarity = similarity;
            run_session(cfg, &out)
        }
        Command::Synthetic {
            problem,
            seeds,
            steps,
            seed,
            out,
        } => {
            let cfg = SessionConfig {
                n_seeds: seeds,
                max_steps: steps,
                seed,
                ..SessionConfig::synthetic(problem)
            };
            run_session(cfg, &out)
        }
        Command::SweepWeights {
            session,
            reward,
            from,
            to,
            step,
            out,
        } => {
            let s = load_session(&session)?;
            let csv = sweep_weights(&s, &reward, from, to, step)?;
            match out {
                Some(p) => std::fs::write(&p, csv).map_err(|e| io_failure(&p, e))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Verify { session } => {
            let s = load_session(&session)?;
            let report = s.verify();
            println!("checked {} observations", report.checked_observations);
            if report.ok() {
                println!("ok");
                Ok(())
            } else {
                for p in &report.problems {
                    println!("{p}");
                }
                Err(Failure::new(EXIT_VERIFY, format!("{} problem(s) found", report.problems.len())))
            }
        }
        Command::Serve { port, data, host } => serve(SocketAddr::new(host, port), data),
    }
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.to_path_buf();
    p.set_extension(ext);
    p
}

fn run_session(cfg: SessionConfig, out: &Path) -> Result<(), Failure> {
    let mut s = SessionState::create(cfg)?;
    s.run()?;
    let status = s.status;
    s.final_scan()?;
    write_outputs(&s, out)?;
    let fin = s.final_scan.as_ref().expect("finalized");
    println!("observations: {} ({status})", s.observations.len());
    match s.config.problem {
        Problem::Microscope { .. } => println!("final params: {}", ControlParams::from_slice(&fin.params)?),
        Problem::Synthetic { .. } => println!("final params: {:?}", fin.params),
    }
    for (name, v) in s.config.reward_names().iter().zip(&fin.predicted_rewards) {
        println!("  {name} = {v:.6}");
    }
    println!("pareto front: {} point(s)", s.pareto_front.len());
    Ok(())
}

fn write_outputs(s: &SessionState, out: &Path) -> Result<(), Failure> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    std::fs::write(out, s.export_json()?).map_err(|e| io_failure(out, e))?;
    let csv = with_extension(out, "csv");
    std::fs::write(&csv, s.observations_csv()).map_err(|e| io_failure(&csv, e))?;
    let journal = with_extension(out, "jsonl");
    std::fs::write(&journal, s.journal_jsonl()?).map_err(|e| io_failure(&journal, e))?;
    Ok(())
}

/// Reads either an exported session document or a JSON-lines journal.
pub fn load_session(path: &Path) -> Result<SessionState, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let is_journal = serde_json::from_str::<serde_json::Value>(first)
        .ok()
        .is_some_and(|v| v.get("event").is_some());
    let s = if is_journal {
        SessionState::from_journal(&parse_jsonl(&text)?)?
    } else {
        SessionState::import_json(&text)?
    };
    Ok(s)
}

/// CSV rows of (weight, proposed point, predicted rewards) for weights
/// `from, from + step, ...` up to `to` on reward `reward`.
pub fn sweep_weights(s: &SessionState, reward: &str, from: f64, to: f64, step: f64) -> Result<String, Failure> {
    let names = s.config.reward_names();
    let k = names
        .iter()
        .position(|n| n == reward)
        .ok_or_else(|| Failure::new(EXIT_CONFIG, format!("unknown reward `{reward}`; known: {}", names.join(", "))))?;
    if !(from.is_finite() && to.is_finite() && from > 0.0 && to >= from) {
        return Err(Failure::new(EXIT_CONFIG, "need 0 < from <= to"));
    }
    let n = if to == from {
        1
    } else {
        if !(step > 0.0) {
            return Err(Failure::new(EXIT_CONFIG, "step must be positive"));
        }
        ((to - from) / step + 1e-9).floor() as usize + 1
    };
    let mut head = vec!["weight".to_string(), "grid_index".to_string()];
    head.extend(s.config.grid.axes.iter().map(|a| a.name.clone()));
    head.extend(names.iter().map(|n| format!("predicted_{n}")));
    let mut out = head.join(",");
    out.push('\n');
    for i in 0..n {
        let w = ((from + step * i as f64) * 1e9).round() / 1e9;
        let mut steering = s.steering.clone();
        steering.weights[k] = w;
        let o = s.preview_steering(&steering)?;
        let mut row = vec![w.to_string(), o.proposal.index.to_string()];
        row.extend(o.proposal.point.iter().map(f64::to_string));
        row.extend(o.predicted_rewards.iter().map(f64::to_string));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn serve(addr: SocketAddr, data: PathBuf) -> Result<(), Failure> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new(EXIT_ENVIRONMENT, e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::new(EXIT_ENVIRONMENT, format!("cannot bind {addr}: {e}")))?;
        let app = AppState::open(&data).map_err(|e| io_failure(&data, e))?;
        let local = listener.local_addr().map_err(|e| Failure::new(EXIT_ENVIRONMENT, e.to_string()))?;
        println!("listening on http://{local} (data in {})", data.display());
        for (status, n) in api::status_summary(&app) {
            println!("  restored {n} session(s) in state {status}");
        }
        let shutdown_app = app.clone();
        axum::serve(listener, api::router(app.clone()))
            .with_graceful_shutdown(async move {
                shutdown_signal().await;
                shutdown_app.begin_shutdown();
            })
            .await
            .map_err(|e| Failure::new(EXIT_ENVIRONMENT, e.to_string()))?;
        if !app.wait_idle(Duration::from_secs(30)).await {
            eprintln!("warning: a job was still running at exit");
        }
        println!("shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
