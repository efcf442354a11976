//! `realign` command line.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use realign_core::robot::{classify_joints, RobotDescription};
use realign_core::session::{replay, SessionDocument, SystemClock, TickClock};
use realign_core::sim::{emit_report, run_alignment_experiment_with, Execution, ExperimentConfig, ExperimentFile, NoiseModel};
use realign_core::triangulate::MisalignmentReport;

use crate::protocol::Request;
use crate::server::{bind, router, Service};
use crate::workbench::{run_script, Workbench, WorkbenchConfig};

#[derive(Debug, Parser)]
#[command(name = "realign", version, about = "Virtual-to-real robot registration workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run simulated alignment experiments and write reports.
    Sim {
        /// Experiment file; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// View counts to run, comma separated.
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        /// Averaging counts to run, comma separated.
        #[arg(long = "avg-n", value_delimiter = ',')]
        avg_n: Vec<usize>,
        /// Run trials on one thread.
        #[arg(long)]
        serial: bool,
    },
    /// Recompute every derived result of a session document.
    Replay {
        session: PathBuf,
        /// Also write the recomputed results here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the WebSocket API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8470")]
        addr: SocketAddr,
        /// Seed for the hidden pose of the real robot.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Robot description to use instead of the bundled 7-joint arm.
        #[arg(long)]
        robot: Option<PathBuf>,
        /// Directory served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Directory for named session documents.
        #[arg(long)]
        session_dir: Option<PathBuf>,
    },
    /// Check a robot description file.
    Validate { robot: PathBuf },
    /// Run a request script offline and save the resulting session.
    Script {
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Offline request script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    /// Seed for the real robot's pose; the default scene when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Milliseconds the clock advances per reading.
    #[serde(default = "default_tick")]
    pub tick_ms: u64,
    pub requests: Vec<Request>,
}

fn default_tick() -> u64 {
    1000
}

pub fn script_workbench(script: &Script) -> anyhow::Result<Workbench> {
    let cfg = script.seed.map_or_else(WorkbenchConfig::default, WorkbenchConfig::with_seed);
    Ok(Workbench::new(cfg, Box::new(TickClock::new(script.tick_ms)))?)
}

#[derive(Debug, Serialize)]
struct ReplayReport<'a> {
    matches: bool,
    mismatches: &'a [String],
    registration: Option<&'a realign_core::session::RegistrationResult>,
    evaluations: Vec<EvaluationRow<'a>>,
    executions: &'a [realign_core::robot::JointErrorReport],
}

#[derive(Debug, Serialize)]
struct EvaluationRow<'a> {
    report: &'a MisalignmentReport,
    cells: [String; 4],
}

fn run_sim(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
    views: &[usize],
    avg_n: &[usize],
    serial: bool,
) -> anyhow::Result<()> {
    let (mut cfg, noise) = match config {
        Some(path) => {
            let file = ExperimentFile::load(path)?;
            (file.config, file.noise)
        }
        None => (ExperimentConfig::default(), NoiseModel::default()),
    };
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.trials = trials.unwrap_or(cfg.trials);
    let views = if views.is_empty() { vec![cfg.views] } else { views.to_vec() };
    let avg_n = if avg_n.is_empty() { vec![cfg.average_n] } else { avg_n.to_vec() };
    let execution = if serial { Execution::Serial } else { Execution::Parallel };
    let mut reports = Vec::new();
    for &m in &views {
        for &n in &avg_n {
            reports.push(run_alignment_experiment_with(&cfg.with_condition(m, n), &noise, execution)?);
        }
    }
    for path in emit_report(&reports, out)? {
        println!("{}", path.display());
    }
    for r in &reports {
        let [x, y, z, l2] = r.table.table_cells();
        println!("{} {}: x {x} y {y} z {z} L2 {l2} mm (simulated)", r.label, r.condition());
    }
    Ok(())
}

/// Exit code 2 when recomputed results differ from the stored ones.
fn run_replay(session: &Path, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let doc = SessionDocument::load(session)?;
    let outcome = replay(&doc)?;
    let report = ReplayReport {
        matches: outcome.matches(),
        mismatches: &outcome.mismatches,
        registration: outcome.registration.as_ref(),
        evaluations: outcome.evaluations.iter().map(|r| EvaluationRow { report: r, cells: r.table_cells() }).collect(),
        executions: &outcome.executions,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    if let Some(path) = out {
        std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{text}");
    if outcome.matches() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("replay mismatch: {}", outcome.mismatches.join(", "));
        Ok(ExitCode::from(2))
    }
}

fn run_validate(path: &Path) -> anyhow::Result<()> {
    let robot = RobotDescription::load(path)?;
    let classes = classify_joints(&robot)?;
    println!("{}: {} joints", robot.name, robot.joint_count());
    for (i, (joint, class)) in robot.joints().iter().zip(&classes).enumerate() {
        println!(
            "  joint {}: {:?}, limits [{}, {}] deg",
            i + 1,
            class,
            joint.limits_deg[0],
            joint.limits_deg[1]
        );
    }
    Ok(())
}

fn run_script_file(path: &Path, out: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let script: Script = serde_json::from_str(&text).context("parsing script")?;
    let mut workbench = script_workbench(&script)?;
    for response in run_script(&mut workbench, &script.requests) {
        if let Some(e) = &response.error {
            bail!("request {} ({}) failed: {}: {}", response.id, response.verb, e.code, e.message);
        }
    }
    workbench.session().document().save(out)?;
    println!("{}", out.display());
    Ok(())
}

fn run_serve(
    addr: SocketAddr,
    seed: u64,
    robot: Option<&Path>,
    static_dir: Option<PathBuf>,
    session_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut cfg = WorkbenchConfig::with_seed(seed);
    if let Some(path) = robot {
        cfg.robot = RobotDescription::load(path)?;
        cfg.config_deg = cfg.robot.zero_config();
    }
    let mut workbench = Workbench::new(cfg, Box::new(SystemClock::new()))?;
    if let Some(dir) = session_dir {
        std::fs::create_dir_all(&dir)?;
        workbench = workbench.with_session_dir(dir);
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let app = router(Service::spawn(workbench), static_dir);
        let (local, server) = bind(addr, app).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on ws://{local}/ws");
        server.await?;
        Ok(())
    })
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Sim { config, out, seed, trials, views, avg_n, serial } => {
            run_sim(config.as_deref(), &out, seed, trials, &views, &avg_n, serial)?
        }
        Command::Replay { session, out } => return run_replay(&session, out.as_deref()),
        Command::Serve { addr, seed, robot, static_dir, session_dir } => {
            run_serve(addr, seed, robot.as_deref(), static_dir, session_dir)?
        }
        Command::Validate { robot } => run_validate(&robot)?,
        Command::Script { script, out } => run_script_file(&script, &out)?,
    }
    Ok(ExitCode::SUCCESS)
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
