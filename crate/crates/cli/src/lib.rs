//! Subcommands of the `opswitch` binary. Each phase reads and writes
//! explicit artifact files; unspecified paths default to names inside
//! `--out-dir`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use opswitch_core::experiment::{self, ExperimentPlan, Scale};
use opswitch_core::expert::ExpertPolicy;
use opswitch_core::fleet::{self, FleetTrace};
use opswitch_core::gridnav::EnvConfig;
use opswitch_core::imitation::{DemoDataset, FeatureScales};
use opswitch_core::scorers::{self, ChoiceDataset, Scorer, ScorerKind};
use opswitch_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "opswitch", version, about = "Operator-allocation experiments on a simulated robot fleet")]
pub struct Cli {
    /// Master seed. For `run-all` it replaces the plan's seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Environment TOML; the built-in arena when omitted.
    #[arg(long, global = true)]
    pub env_config: Option<PathBuf>,

    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    /// Experiment plan TOML; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub plan: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Full)]
    pub scale: ScaleArg,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Full,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Loss {
    Luce,
    Baseline,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record expert demonstrations.
    Phase1 {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulate operator choices at the small fleet size.
    Phase2 {
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Ground-truth scorer file; built and saved when missing.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit a scoring network to recorded choices.
    TrainScorer {
        #[arg(long, value_enum)]
        loss: Loss,
        #[arg(long)]
        choices: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Assisted-choice trials at the large fleet size.
    Phase3 {
        /// Scorer file, or `gt` for the ground-truth scorer.
        #[arg(long)]
        scorer: String,
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Retrain the autonomy on phase-3 demonstrations and evaluate it.
    Phase4 {
        /// Which phase-3 run to use.
        #[arg(long)]
        kind: String,
        /// Directory of phase-3 trace files.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Combine per-scorer results into report.csv and summary.txt.
    Report {
        /// Result files; every `result_*.json` in the output directory when omitted.
        #[arg(long = "results")]
        results: Vec<PathBuf>,
    },
    /// Run every phase for every seed of the plan.
    RunAll,
}

/// Per-scorer numbers accumulated by `phase3` and `phase4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VariantResults {
    pub seed: u64,
    pub scorer: ScorerKind,
    pub team_rewards: Vec<f64>,
    pub top1_agreement: f64,
    pub phase4_rewards: Option<Vec<f64>>,
}

impl VariantResults {
    pub fn path(out_dir: &Path, kind: ScorerKind) -> PathBuf {
        out_dir.join(format!("result_{}.json", kind.short_name()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Artifact {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

struct Context {
    seed: u64,
    out_dir: PathBuf,
    plan: ExperimentPlan,
    env: EnvConfig,
}

impl Context {
    fn from_cli(cli: &Cli) -> Result<Self> {
        let mut plan = match &cli.plan {
            Some(p) => ExperimentPlan::load(p)?,
            None => ExperimentPlan::default(),
        };
        if cli.scale == ScaleArg::Small {
            plan = plan.with_scale(Scale::Small);
        }
        if let Some(s) = cli.seed {
            plan.seeds = vec![s];
        }
        plan.validate()?;
        let env = match &cli.env_config {
            Some(p) => EnvConfig::load(p)?,
            None => EnvConfig::default(),
        };
        env.validate()?;
        Ok(Self {
            seed: cli.seed.unwrap_or(plan.seeds[0]),
            out_dir: cli.out_dir.clone(),
            plan,
            env,
        })
    }

    fn file(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join(default))
    }

    fn demos(&self, explicit: &Option<PathBuf>) -> Result<DemoDataset> {
        DemoDataset::load_jsonl(&self.file(explicit, "phase1_demos.jsonl"), FeatureScales::default())
    }

    fn ground_truth(&self, explicit: &Option<PathBuf>, expert: &ExpertPolicy, demos: &DemoDataset) -> Result<Scorer> {
        let path = self.file(explicit, "scorer_gt.json");
        if path.exists() {
            return Scorer::load(&path);
        }
        let gt = experiment::build_ground_truth(&self.plan, &self.env, expert, demos, self.seed)?;
        gt.save(&path)?;
        println!("wrote {}", path.display());
        Ok(gt)
    }
}

fn parse_kind(s: &str) -> Result<ScorerKind> {
    s.parse()
}

fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.to_string_lossy().ends_with(".jsonl.gz"));
    files.sort();
    if files.is_empty() {
        return Err(Error::Usage(format!("no trace files in {}", dir.display())));
    }
    Ok(files)
}

/// All result files in `dir`, in scorer order.
fn discover_results(dir: &Path) -> Vec<PathBuf> {
    ScorerKind::ALL
        .iter()
        .map(|&k| VariantResults::path(dir, k))
        .filter(|p| p.exists())
        .collect()
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::from_cli(cli)?;
    fs::create_dir_all(&ctx.out_dir)?;
    match &cli.command {
        Command::Phase1 { output } => {
            let expert = ExpertPolicy::new(&ctx.env)?;
            let ds = experiment::run_phase1(&ctx.plan, &ctx.env, &expert, ctx.seed)?;
            let path = ctx.file(output, "phase1_demos.jsonl");
            ds.save_jsonl(&path)?;
            println!("wrote {} ({} pairs)", path.display(), ds.len());
        }
        Command::Phase2 { demos, gt, output } => {
            let expert = ExpertPolicy::new(&ctx.env)?;
            let autonomy = ctx.demos(demos)?;
            let gt = ctx.ground_truth(gt, &expert, &autonomy)?;
            let choices = experiment::run_phase2(&ctx.plan, &ctx.env, &expert, &autonomy, &gt, ctx.seed)?;
            let path = ctx.file(output, "phase2_choices.jsonl");
            choices.save_jsonl(&path)?;
            println!("wrote {} ({} records)", path.display(), choices.len());
        }
        Command::TrainScorer { loss, choices, output } => {
            let kind = match loss {
                Loss::Luce => ScorerKind::LuceMlp,
                Loss::Baseline => ScorerKind::BaselineMlp,
            };
            let records = ChoiceDataset::load_jsonl(&ctx.file(choices, "phase2_choices.jsonl"))?;
            let scorer = experiment::train_scorer(&ctx.plan, &ctx.env, kind, &records, ctx.seed)?;
            let path = ctx.file(output, &format!("scorer_{}.json", kind.short_name()));
            scorer.save(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Phase3 { scorer, demos, gt } => {
            let expert = ExpertPolicy::new(&ctx.env)?;
            let autonomy = ctx.demos(demos)?;
            let gt = ctx.ground_truth(gt, &expert, &autonomy)?;
            let scorer = if scorer == "gt" {
                gt.clone()
            } else {
                Scorer::load(Path::new(scorer))?
            };
            let kind = scorer.kind();
            let held_out = experiment::held_out_fleets(&ctx.plan, &ctx.env, &expert, &autonomy, &gt, ctx.seed)?;
            let top1_agreement = scorers::top_one_agreement(&scorer, &gt, &held_out)?;
            let out = experiment::run_phase3(&ctx.plan, &ctx.env, &expert, &autonomy, &scorer, ctx.seed)?;
            let tdir = experiment::trace_dir(&ctx.out_dir, kind);
            fs::create_dir_all(&tdir)?;
            for (i, t) in out.traces.iter().enumerate() {
                t.save(&tdir.join(format!("trial-{i:04}.jsonl.gz")))?;
            }
            let results = VariantResults {
                seed: ctx.seed,
                scorer: kind,
                team_rewards: out.team_rewards,
                top1_agreement,
                phase4_rewards: None,
            };
            let path = VariantResults::path(&ctx.out_dir, kind);
            results.save(&path)?;
            println!(
                "wrote {} traces to {} and {}",
                out.traces.len(),
                tdir.display(),
                path.display()
            );
        }
        Command::Phase4 { kind, traces, demos } => {
            let kind = parse_kind(kind)?;
            let base = ctx.demos(demos)?;
            let dir = traces.clone().unwrap_or_else(|| experiment::trace_dir(&ctx.out_dir, kind));
            let new_demos = trace_files(&dir)?
                .iter()
                .map(|p| FleetTrace::load(p).map(|t| fleet::extract_operator_demos(&t)))
                .collect::<Result<Vec<_>>>()?;
            let rewards = experiment::run_phase4(
                &ctx.plan,
                &ctx.env,
                &base,
                &new_demos,
                experiment::phase3_tag(kind),
                ctx.seed,
            )?;
            let path = VariantResults::path(&ctx.out_dir, kind);
            let mut results = VariantResults::load(&path)?;
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            results.phase4_rewards = Some(rewards);
            results.save(&path)?;
            println!("retrained autonomy mean reward {mean:.3}; updated {}", path.display());
        }
        Command::Report { results } => {
            let files = if results.is_empty() {
                discover_results(&ctx.out_dir)
            } else {
                results.clone()
            };
            let mut rows = Vec::new();
            for f in &files {
                let r = VariantResults::load(f)?;
                let p4 = r.phase4_rewards.as_ref().ok_or_else(|| {
                    Error::Usage(format!("{} has no phase-4 results; run phase4 first", f.display()))
                })?;
                rows.push(experiment::report_row(r.seed, r.scorer, &r.team_rewards, p4, r.top1_agreement)?);
            }
            experiment::write_report(&rows, &ctx.out_dir)?;
            print!("{}", experiment::summary_text(&rows));
        }
        Command::RunAll => {
            let rows = experiment::run_all(&ctx.plan, &ctx.env, &ctx.out_dir)?;
            print!("{}", experiment::summary_text(&rows));
        }
    }
    Ok(())
}

/// Process exit code for a failed run.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_validation() {
        2
    } else {
        1
    }
}
