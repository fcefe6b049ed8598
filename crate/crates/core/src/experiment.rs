//! The four-phase experiment pipeline and its reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::ExpertPolicy;
use crate::fleet::{self, ChoiceMode, FleetConfig, FleetTrace};
use crate::gridnav::{self, Action, EnvConfig, EnvState, RobotState};
use crate::imitation::{DemoDataset, DemoTag, FeatureScales};
use crate::policy::{rollout, Policy};
use crate::rng::EpisodeRng;
use crate::scorers::{self, ChoiceDataset, ChoiceRecord, Scorer, ScorerKind};
use crate::tinynet::TrainConfig;
use crate::value::{evaluate_policy_td, EvalConfig, StartStates};

const LABEL_PHASE1: u64 = 1;
const LABEL_POOL: u64 = 2;
const LABEL_VALUES: u64 = 3;
const LABEL_PHASE2: u64 = 4;
const LABEL_TRAIN: u64 = 5;
const LABEL_HELD_OUT: u64 = 6;
const LABEL_PHASE3: u64 = 7;
const LABEL_PHASE4: u64 = 8;
const LABEL_BOOTSTRAP: u64 = 9;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Full,
    Small,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "small" => Ok(Scale::Small),
            other => Err(Error::usage(format!("unknown scale {other:?}"))),
        }
    }
}

/// How the ground-truth value tables are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct GroundTruthPlan {
    /// TD(0) episodes per value table.
    pub episodes: usize,
    /// Autonomous episodes whose states seed mid-task starts.
    pub pool_episodes: usize,
    pub pool_fraction: f64,
}

impl Default for GroundTruthPlan {
    fn default() -> Self {
        Self {
            episodes: 30000,
            pool_episodes: 0,
            pool_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub phase1_episodes: usize,
    pub phase2_fleet_size: usize,
    pub phase2_trials: usize,
    pub phase3_fleet_size: usize,
    pub phase3_trials: usize,
    pub phase4_eval_episodes: usize,
    pub trial_horizon: u64,
    pub dwell_period: u64,
    pub scorer_variants: Vec<ScorerKind>,
    pub seeds: Vec<u64>,
    /// Held-out n = phase3FleetSize snapshots for top-1 agreement.
    pub agreement_fleets: usize,
    pub ground_truth: GroundTruthPlan,
    pub training: TrainConfig,
    pub write_traces: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            phase1_episodes: 10,
            phase2_fleet_size: 4,
            phase2_trials: 150,
            phase3_fleet_size: 12,
            phase3_trials: 250,
            phase4_eval_episodes: 8,
            trial_horizon: 300,
            dwell_period: 1,
            scorer_variants: ScorerKind::ALL.to_vec(),
            seeds: vec![1],
            agreement_fleets: 2000,
            ground_truth: GroundTruthPlan::default(),
            training: TrainConfig::default(),
            write_traces: true,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("phase1Episodes", self.phase1_episodes),
            ("phase2FleetSize", self.phase2_fleet_size),
            ("phase2Trials", self.phase2_trials),
            ("phase3FleetSize", self.phase3_fleet_size),
            ("phase3Trials", self.phase3_trials),
            ("phase4EvalEpisodes", self.phase4_eval_episodes),
            ("agreementFleets", self.agreement_fleets),
            ("groundTruth.episodes", self.ground_truth.episodes),
        ];
        for (name, v) in sizes {
            if v < 1 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.trial_horizon < 1 {
            return Err(Error::config("trialHorizon must be at least 1"));
        }
        if self.dwell_period < 1 {
            return Err(Error::config("dwellPeriod must be at least 1"));
        }
        if self.scorer_variants.is_empty() {
            return Err(Error::config("scorerVariants must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if !(0.0..=1.0).contains(&self.ground_truth.pool_fraction) {
            return Err(Error::config("groundTruth.poolFraction must lie in [0, 1]"));
        }
        self.training.validate().map_err(|e| Error::config(e.to_string()))
    }

    pub fn with_scale(mut self, scale: Scale) -> Self {
        if scale == Scale::Small {
            self.phase3_trials = self.phase3_trials.min(100);
        }
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let plan: Self = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn phase_seed(seed: u64, label: u64) -> u64 {
    EpisodeRng::derive_seed(seed, label)
}

fn trial_seed(seed: u64, label: u64, trial: usize) -> u64 {
    phase_seed(seed, label).wrapping_add(trial as u64)
}

/// Roll out the expert and record every `(state, action)` pair.
pub fn run_phase1(plan: &ExperimentPlan, env: &EnvConfig, expert: &ExpertPolicy, seed: u64) -> Result<DemoDataset> {
    if plan.phase1_episodes == 0 {
        return Err(Error::config("phase 1 needs at least one episode"));
    }
    let mut pairs = Vec::new();
    for e in 0..plan.phase1_episodes {
        let mut rng = EpisodeRng::new(phase_seed(seed, LABEL_PHASE1), e as u64);
        let start = gridnav::reset(env, &mut rng)?;
        if !expert.goal_reachable_from(start.robot.position()) {
            return Err(Error::config(format!(
                "expert planner cannot reach the goal from ({:.2}, {:.2}) in episode {e}",
                start.robot.x, start.robot.y
            )));
        }
        let ep = crate::policy::rollout_from(expert, env, start)?;
        pairs.extend(ep.transitions.iter().map(|t| (t.state.robot, t.action)));
    }
    Ok(DemoDataset::new(FeatureScales::default())?.append(&pairs, DemoTag::Phase1))
}

/// States visited by the autonomous policy, used as mid-task starts.
pub fn autonomy_state_pool(
    env: &EnvConfig,
    autonomy: &DemoDataset,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EnvState>> {
    let mut pool = Vec::new();
    for e in 0..episodes {
        let mut rng = EpisodeRng::new(phase_seed(seed, LABEL_POOL), e as u64);
        let ep = rollout(autonomy, env, &mut rng)?;
        pool.extend(ep.transitions.into_iter().map(|t| t.state));
    }
    Ok(pool)
}

/// Value-gap scorer from TD(0) estimates of the expert and the autonomy.
pub fn build_ground_truth(
    plan: &ExperimentPlan,
    env: &EnvConfig,
    expert: &ExpertPolicy,
    autonomy: &DemoDataset,
    seed: u64,
) -> Result<Scorer> {
    let gt = &plan.ground_truth;
    let mut eval = EvalConfig::new(env, gt.episodes, phase_seed(seed, LABEL_VALUES));
    eval.starts = StartStates {
        pool: autonomy_state_pool(env, autonomy, gt.pool_episodes, seed)?,
        pool_fraction: gt.pool_fraction,
    };
    let (vh, vr) = rayon::join(
        || evaluate_policy_td(expert, env, &eval),
        || evaluate_policy_td(autonomy, env, &eval),
    );
    Scorer::ground_truth(vh?, vr?)
}

fn fleet_config(plan: &ExperimentPlan, n: usize, mode: ChoiceMode, seed: u64) -> FleetConfig {
    FleetConfig {
        n,
        dwell_period: plan.dwell_period,
        choice_mode: mode,
        horizon: plan.trial_horizon,
        seed,
    }
}

/// One choice record per switch decision.
pub fn choice_records(trace: &FleetTrace) -> Vec<ChoiceRecord> {
    trace
        .steps
        .iter()
        .filter(|s| s.decision && s.scores.is_some())
        .map(|s| ChoiceRecord {
            timestep: s.t,
            chosen: s.controlled,
            states: s.states.clone(),
        })
        .collect()
}

/// Synthetic operator choices: Luce samples from the ground-truth scorer.
pub fn run_phase2(
    plan: &ExperimentPlan,
    env: &EnvConfig,
    expert: &ExpertPolicy,
    autonomy: &DemoDataset,
    gt: &Scorer,
    seed: u64,
) -> Result<ChoiceDataset> {
    if autonomy.is_empty() {
        return Err(Error::usage("phase 2 needs a nonempty autonomy dataset"));
    }
    let traces: Vec<FleetTrace> = (0..plan.phase2_trials)
        .into_par_iter()
        .map(|i| {
            let cfg = fleet_config(
                plan,
                plan.phase2_fleet_size,
                ChoiceMode::LuceSample,
                trial_seed(seed, LABEL_PHASE2, i),
            );
            fleet::run_fleet_trial(env, &cfg, gt, expert, autonomy)
        })
        .collect::<Result<_>>()?;
    let mut ds = ChoiceDataset::new(plan.phase2_fleet_size);
    for r in traces.iter().flat_map(choice_records) {
        ds.push(r)?;
    }
    Ok(ds)
}

/// Train the learned scorer of `kind` on phase-2 choices.
pub fn train_scorer(
    plan: &ExperimentPlan,
    env: &EnvConfig,
    kind: ScorerKind,
    choices: &ChoiceDataset,
    seed: u64,
) -> Result<Scorer> {
    let cfg = TrainConfig {
        seed: phase_seed(seed, LABEL_TRAIN),
        ..plan.training
    };
    Ok(scorers::train_with_outcome(kind, choices, &cfg, env)?.0)
}

/// Snapshots of n = phase3FleetSize fleets under ground-truth assisted
/// control, from seeds disjoint from every phase-3 trial.
pub fn held_out_fleets(
    plan: &ExperimentPlan,
    env: &EnvConfig,
    expert: &ExpertPolicy,
    autonomy: &DemoDataset,
    gt: &Scorer,
    seed: u64,
) -> Result<Vec<Vec<RobotState>>> {
    let stride = 3usize;
    let per_trial = (plan.trial_horizon as usize).div_ceil(stride).max(1);
    let trials = plan.agreement_fleets.div_ceil(per_trial);
    let snapshots: Vec<Vec<Vec<RobotState>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let cfg = fleet_config(
                plan,
                plan.phase3_fleet_size,
                ChoiceMode::Argmax,
                trial_seed(seed, LABEL_HELD_OUT, i),
            );
            let trace = fleet::run_fleet_trial(env, &cfg, gt, expert, autonomy)?;
            Ok(trace.steps.into_iter().step_by(stride).map(|s| s.states).collect())
        })
        .collect::<Result<_>>()?;
    let mut fleets: Vec<Vec<RobotState>> = snapshots.into_iter().flatten().collect();
    fleets.truncate(plan.agreement_fleets);
    Ok(fleets)
}

#[derive(Debug, Clone)]
pub struct Phase3Output {
    pub traces: Vec<FleetTrace>,
    pub team_rewards: Vec<f64>,
    pub demos: Vec<Vec<(RobotState, Action)>>,
}

/// Assisted-choice trials: the operator always takes the argmax robot.
pub fn run_phase3(
    plan: &ExperimentPlan,
    env: &EnvConfig,
    expert: &ExpertPolicy,
    autonomy: &DemoDataset,
    scorer: &Scorer,
    seed: u64,
) -> Result<Phase3Output> {
    let traces: Vec<FleetTrace> = (0..plan.phase3_trials)
        .into_par_iter()
        .map(|i| {
            let cfg = fleet_config(
                plan,
                plan.phase3_fleet_size,
                ChoiceMode::Argmax,
                trial_seed(seed, LABEL_PHASE3, i),
            );
            fleet::run_fleet_trial(env, &cfg, scorer, expert, autonomy)
        })
        .collect::<Result<_>>()?;
    let team_rewards = traces.iter().map(fleet::team_reward).collect();
    let demos = traces.iter().map(fleet::extract_operator_demos).collect();
    Ok(Phase3Output {
        traces,
        team_rewards,
        demos,
    })
}

pub fn phase3_tag(kind: ScorerKind) -> DemoTag {
    match kind {
        ScorerKind::GroundTruthGap => DemoTag::Phase3Gt,
        ScorerKind::LuceMlp => DemoTag::Phase3Luce,
        ScorerKind::BaselineMlp => DemoTag::Phase3Base,
    }
}

/// Mean autonomous return of the policy retrained on `base` plus one
/// trial's demonstrations, per trial.
pub fn run_phase4(
    plan: &ExperimentPlan,
    env: &EnvConfig,
    base: &DemoDataset,
    new_demos: &[Vec<(RobotState, Action)>],
    tag: DemoTag,
    seed: u64,
) -> Result<Vec<f64>> {
    new_demos
        .par_iter()
        .enumerate()
        .map(|(i, demos)| {
            let policy = base.append(demos, tag);
            evaluate_autonomy(&policy, env, plan.phase4_eval_episodes, trial_seed(seed, LABEL_PHASE4, i))
        })
        .collect()
}

/// Mean return over `episodes` fully autonomous episodes.
pub fn evaluate_autonomy<P: Policy + ?Sized>(policy: &P, env: &EnvConfig, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::usage("evaluation needs at least one episode"));
    }
    let mut total = 0.0;
    for e in 0..episodes {
        let mut rng = EpisodeRng::new(seed, e as u64);
        total += rollout(policy, env, &mut rng)?.total_reward();
    }
    Ok(total / episodes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl ConfidenceInterval {
    pub fn overlaps(&self, other: &ConfidenceInterval) -> bool {
        self.low <= other.high && other.low <= self.high
    }
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<ConfidenceInterval> {
    if values.is_empty() {
        return Err(Error::usage("bootstrap needs at least one value"));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::usage("bootstrap needs resamples >= 1 and a level in (0, 1)"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = EpisodeRng::new(seed, 0);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(ConfidenceInterval {
        mean,
        low: quantile_sorted(&means, alpha).min(mean),
        high: quantile_sorted(&means, 1.0 - alpha).max(mean),
    })
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub seed: u64,
    pub scorer: ScorerKind,
    pub trials: usize,
    pub team_reward_mean: f64,
    pub team_reward_ci_low: f64,
    pub team_reward_ci_high: f64,
    pub top1_agreement: f64,
    pub phase4_reward_mean: f64,
    pub phase4_ci_low: f64,
    pub phase4_ci_high: f64,
}

impl ReportRow {
    pub fn team_ci(&self) -> ConfidenceInterval {
        ConfidenceInterval {
            mean: self.team_reward_mean,
            low: self.team_reward_ci_low,
            high: self.team_reward_ci_high,
        }
    }

    pub fn phase4_ci(&self) -> ConfidenceInterval {
        ConfidenceInterval {
            mean: self.phase4_reward_mean,
            low: self.phase4_ci_low,
            high: self.phase4_ci_high,
        }
    }
}

pub const REPORT_HEADER: [&str; 10] = [
    "seed",
    "scorer",
    "trials",
    "team_reward_mean",
    "team_reward_ci_low",
    "team_reward_ci_high",
    "top1_agreement",
    "phase4_reward_mean",
    "phase4_ci_low",
    "phase4_ci_high",
];

/// Build one report row from per-trial phase-3 and phase-4 results.
pub fn report_row(
    seed: u64,
    kind: ScorerKind,
    team_rewards: &[f64],
    phase4_rewards: &[f64],
    top1_agreement: f64,
) -> Result<ReportRow> {
    let label = LABEL_BOOTSTRAP ^ ((kind as u64) << 8);
    let team = bootstrap_mean_ci(team_rewards, BOOTSTRAP_RESAMPLES, 0.95, phase_seed(seed, label))?;
    let p4 = bootstrap_mean_ci(phase4_rewards, BOOTSTRAP_RESAMPLES, 0.95, phase_seed(seed, label + 1))?;
    Ok(ReportRow {
        seed,
        scorer: kind,
        trials: team_rewards.len(),
        team_reward_mean: team.mean,
        team_reward_ci_low: team.low,
        team_reward_ci_high: team.high,
        top1_agreement,
        phase4_reward_mean: p4.mean,
        phase4_ci_low: p4.low,
        phase4_ci_high: p4.high,
    })
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn summary_text(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(
            out,
            "seed {} {:<13} trials {:>4}  team reward {:>10.2} [{:.2}, {:.2}]  top-1 vs GT {:.3}  retrained reward {:>8.2} [{:.2}, {:.2}]",
            r.seed,
            r.scorer.to_string(),
            r.trials,
            r.team_reward_mean,
            r.team_reward_ci_low,
            r.team_reward_ci_high,
            r.top1_agreement,
            r.phase4_reward_mean,
            r.phase4_ci_low,
            r.phase4_ci_high,
        );
    }
    out
}

/// Write `report.csv` and `summary.txt` into `dir`.
pub fn write_report(rows: &[ReportRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_report_csv(rows, &dir.join("report.csv"))?;
    std::fs::write(dir.join("summary.txt"), summary_text(rows))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub kind: ScorerKind,
    pub scorer: Scorer,
    pub phase3: Phase3Output,
    pub phase4_rewards: Vec<f64>,
    pub top1_agreement: f64,
    pub row: ReportRow,
}

/// Everything one seed of the pipeline produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub seed: u64,
    pub phase1: DemoDataset,
    pub ground_truth: Scorer,
    pub choices: ChoiceDataset,
    pub held_out: Vec<Vec<RobotState>>,
    pub variants: Vec<VariantResult>,
}

impl PipelineRun {
    pub fn variant(&self, kind: ScorerKind) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.kind == kind)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.variants.iter().map(|v| v.row.clone()).collect()
    }
}

pub fn run_pipeline(plan: &ExperimentPlan, env: &EnvConfig, seed: u64) -> Result<PipelineRun> {
    plan.validate()?;
    env.validate()?;
    let expert = ExpertPolicy::new(env)?;
    let phase1 = run_phase1(plan, env, &expert, seed)?;
    let gt = build_ground_truth(plan, env, &expert, &phase1, seed)?;
    let choices = run_phase2(plan, env, &expert, &phase1, &gt, seed)?;
    let held_out = held_out_fleets(plan, env, &expert, &phase1, &gt, seed)?;
    let mut variants = Vec::new();
    for &kind in &plan.scorer_variants {
        let scorer = match kind {
            ScorerKind::GroundTruthGap => gt.clone(),
            _ => train_scorer(plan, env, kind, &choices, seed)?,
        };
        let top1_agreement = scorers::top_one_agreement(&scorer, &gt, &held_out)?;
        let phase3 = run_phase3(plan, env, &expert, &phase1, &scorer, seed)?;
        let phase4_rewards = run_phase4(plan, env, &phase1, &phase3.demos, phase3_tag(kind), seed)?;
        let row = report_row(seed, kind, &phase3.team_rewards, &phase4_rewards, top1_agreement)?;
        variants.push(VariantResult {
            kind,
            scorer,
            phase3,
            phase4_rewards,
            top1_agreement,
            row,
        });
    }
    Ok(PipelineRun {
        seed,
        phase1,
        ground_truth: gt,
        choices,
        held_out,
        variants,
    })
}

/// Persist the artifacts of one pipeline run under `dir`.
pub fn write_run_artifacts(run: &PipelineRun, plan: &ExperimentPlan, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    run.phase1.save_jsonl(&dir.join("phase1_demos.jsonl"))?;
    run.ground_truth.save(&dir.join("scorer_gt.json"))?;
    run.choices.save_jsonl(&dir.join("phase2_choices.jsonl"))?;
    for v in &run.variants {
        let name = v.kind.short_name();
        if v.kind != ScorerKind::GroundTruthGap {
            v.scorer.save(&dir.join(format!("scorer_{name}.json")))?;
        }
        if plan.write_traces {
            let tdir = trace_dir(dir, v.kind);
            std::fs::create_dir_all(&tdir)?;
            for (i, t) in v.phase3.traces.iter().enumerate() {
                t.save(&tdir.join(format!("trial-{i:04}.jsonl.gz")))?;
            }
        }
    }
    Ok(())
}

pub fn trace_dir(dir: &Path, kind: ScorerKind) -> PathBuf {
    dir.join(format!("traces_{}", kind.short_name()))
}

/// Run every seed of `plan`, writing artifacts per seed and the combined
/// report into `out_dir`.
pub fn run_all(plan: &ExperimentPlan, env: &EnvConfig, out_dir: &Path) -> Result<Vec<ReportRow>> {
    plan.validate()?;
    std::fs::create_dir_all(out_dir)?;
    plan.save(&out_dir.join("plan.toml"))?;
    env.save(&out_dir.join("env.toml"))?;
    let mut rows = Vec::new();
    for &seed in &plan.seeds {
        let run = run_pipeline(plan, env, seed)?;
        write_run_artifacts(&run, plan, &out_dir.join(format!("seed-{seed}")))?;
        rows.extend(run.rows());
    }
    write_report(&rows, out_dir)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_of_constant_is_degenerate() {
        let ci = bootstrap_mean_ci(&[2.5; 10], 1000, 0.95, 1).unwrap();
        assert_eq!((ci.low, ci.mean, ci.high), (2.5, 2.5, 2.5));
    }

    #[test]
    fn bootstrap_contains_mean_and_is_deterministic() {
        let v: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64).collect();
        let a = bootstrap_mean_ci(&v, 1000, 0.95, 7).unwrap();
        let b = bootstrap_mean_ci(&v, 1000, 0.95, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.low <= a.mean && a.mean <= a.high);
        assert!(a.low < a.high);
        assert!(bootstrap_mean_ci(&[], 1000, 0.95, 7).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(ExperimentPlan::default().validate().is_ok());
        let p = ExperimentPlan {
            phase1_episodes: 0,
            ..ExperimentPlan::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let p = ExperimentPlan {
            seeds: vec![],
            ..ExperimentPlan::default()
        };
        assert!(p.validate().is_err());
        assert_eq!(ExperimentPlan::default().with_scale(Scale::Small).phase3_trials, 100);
    }

    #[test]
    fn plan_toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.toml");
        let plan = ExperimentPlan {
            seeds: vec![3, 4],
            phase3_trials: 7,
            ..ExperimentPlan::default()
        };
        plan.save(&p).unwrap();
        assert_eq!(ExperimentPlan::load(&p).unwrap(), plan);
        std::fs::write(&p, "phase3Trials = 5\n").unwrap();
        let partial = ExperimentPlan::load(&p).unwrap();
        assert_eq!(partial.phase3_trials, 5);
        assert_eq!(partial.phase2_fleet_size, 4);
        std::fs::write(&p, "bogus = 1\n").unwrap();
        assert!(ExperimentPlan::load(&p).is_err());
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_report_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), REPORT_HEADER.join(","));
        assert!(read_report_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn report_row_round_trips_csv() {
        let row = report_row(3, ScorerKind::LuceMlp, &[1.0, 2.5, 3.25, 0.1], &[4.0, -1.0], 0.8125).unwrap();
        assert!(row.team_reward_ci_low <= row.team_reward_mean && row.team_reward_mean <= row.team_reward_ci_high);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_report_csv(std::slice::from_ref(&row), &p).unwrap();
        assert_eq!(read_report_csv(&p).unwrap(), vec![row]);
    }
}
