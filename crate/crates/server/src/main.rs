use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use tokio::net::TcpListener;

use opswitch_core::experiment::{self, ExperimentPlan};
use opswitch_core::expert::ExpertPolicy;
use opswitch_core::gridnav::EnvConfig;
use opswitch_core::imitation::{DemoDataset, FeatureScales};
use opswitch_core::scorers::Scorer;
use opswitch_server::{spawn, Mode, Phase, ServerConfig, Session, SessionSetup};

#[derive(Debug, Parser)]
#[command(name = "opserver", version, about = "Interactive operator session server")]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// demo1, choice2 or fleet3.
    #[arg(long, default_value = "fleet3")]
    phase: Phase,
    /// Fleet size; 1, 4 or 12 by phase when omitted.
    #[arg(long)]
    n: Option<usize>,
    /// Ticks between assisted switch decisions.
    #[arg(long, default_value_t = 15)]
    dwell: u64,
    /// Scorer file, or `gt` to build the ground-truth scorer.
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Autonomy demonstrations; recorded from the expert when omitted.
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    env_config: Option<PathBuf>,
    /// Starting mode; assisted when a scorer is given in phase fleet3.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, default_value_t = 100)]
    tick_ms: u64,
    #[arg(long, default_value_t = 3000)]
    horizon: u64,
}

fn build_session(args: &Args) -> Result<Session, Box<dyn std::error::Error>> {
    let env = match &args.env_config {
        Some(p) => EnvConfig::load(p)?,
        None => EnvConfig::default(),
    };
    let n = args.n.unwrap_or(match args.phase {
        Phase::Demo1 => 1,
        Phase::Choice2 => 4,
        Phase::Fleet3 => 12,
    });
    let plan = ExperimentPlan::default();
    let expert = ExpertPolicy::new(&env)?;
    let autonomy = match &args.demos {
        Some(p) => DemoDataset::load_jsonl(p, FeatureScales::default())?,
        None if n > 1 || args.scorer.is_some() => experiment::run_phase1(&plan, &env, &expert, args.seed)?,
        None => DemoDataset::default(),
    };
    let scorer = match args.scorer.as_deref() {
        Some("gt") => {
            tracing::info!("building ground-truth scorer");
            Some(experiment::build_ground_truth(&plan, &env, &expert, &autonomy, args.seed)?)
        }
        Some(path) => Some(Scorer::load(std::path::Path::new(path))?),
        None => None,
    };
    let initial_mode = match args.mode.as_deref() {
        Some("manual") => Mode::Manual,
        Some("assisted") => Mode::Assisted,
        Some(other) => return Err(format!("unknown mode {other:?}").into()),
        None if scorer.is_some() && args.phase == Phase::Fleet3 => Mode::Assisted,
        None => Mode::Manual,
    };
    let setup = SessionSetup {
        id: format!("session-{}", args.seed),
        phase: args.phase,
        n,
        dwell: args.dwell,
        seed: args.seed,
        horizon: args.horizon,
        initial_mode,
        env,
    };
    Ok(Session::new(setup, autonomy, scorer)?)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt().with_target(false).init();
    let args = Args::parse();
    let session = match build_session(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let listener = match TcpListener::bind(("0.0.0.0", args.port)).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind port {}: {e}", args.port);
            return ExitCode::FAILURE;
        }
    };
    let cfg = ServerConfig {
        tick_period: Duration::from_millis(args.tick_ms.max(1)),
        log_dir: args.log_dir.clone(),
    };
    let mut running = match spawn(listener, session, cfg).await {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    tracing::info!("listening on ws://{}", running.addr);
    tokio::select! {
        _ = running.ended() => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    running.shutdown().await;
    ExitCode::SUCCESS
}
