//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{gradient_check, instance_rng, random_batch, random_params};
use opswitch_core::experiment::{self, ConfidenceInterval, ExperimentPlan, GroundTruthPlan, Scale};
use opswitch_core::expert::ExpertPolicy;
use opswitch_core::fleet::{self, ChoiceMode};
use opswitch_core::gridnav::{Action, EnvConfig, RobotState};
use opswitch_core::imitation::{Demo, DemoDataset, DemoTag, FeatureScales};
use opswitch_core::rng::EpisodeRng;
use opswitch_core::scorers::{self, ScorerKind};
use opswitch_core::tinynet::Objective;
use opswitch_core::value::{Discretization, EstimateKind, StepSchedule, ValueEstimate};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = instance_rng(10_000 + i);
        let p = random_params(&mut rng);
        let records = rng.gen_range(1..=8);
        let batch = random_batch(&mut rng, records, 12);
        let l2 = [0.0, 1e-4, 1e-2][i as usize % 3];
        worst = worst.max(gradient_check(&p, &batch, Objective::Luce, l2).max_rel_err);
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= 1e-4 && elapsed < Duration::from_secs(60),
        format!("100 instances, max relative error {worst:.2e}, {}", secs(elapsed)),
    )
}

fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        proptest::collection::vec(-50.0..50.0f64, 1..20),
        // Small integers force ties.
        proptest::collection::vec((-3i32..=3).prop_map(f64::from), 1..20),
    ]
}

fn choice_laws() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&(scores_strategy(), -100.0..100.0f64, any::<u64>()), |(scores, shift, seed)| {
        let p = fleet::luce_probabilities(&scores);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        for (a, b) in p.iter().zip(&fleet::luce_probabilities(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let best = fleet::argmax_choose(&scores);
        let transforms: [fn(f64) -> f64; 3] = [|x| 2.0 * x + 3.0, |x| x * x * x, |x| (x / 10.0).exp()];
        for f in transforms {
            let t: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            prop_assert_eq!(fleet::argmax_choose(&t), best);
        }
        let mut rng = EpisodeRng::new(seed, 0);
        let one = [scores[0]];
        prop_assert_eq!(fleet::luce_choose(&one, &mut rng), 0);
        prop_assert_eq!(fleet::choose(ChoiceMode::LuceSample, &one, 0, &mut rng), 0);
        prop_assert_eq!(fleet::choose(ChoiceMode::Argmax, &one, 0, &mut rng), 0);
        Ok(())
    });
    match result {
        Ok(()) => Outcome::new(true, "10000 cases"),
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

struct Staged {
    plan: ExperimentPlan,
    run: experiment::PipelineRun,
    scoring_time: Duration,
    phase3_time: Duration,
}

/// The full pipeline at `--scale small`, timed per stage.
fn staged_pipeline(seed: u64) -> opswitch_core::Result<Staged> {
    let plan = ExperimentPlan::default().with_scale(Scale::Small);
    let env = EnvConfig::default();
    let expert = ExpertPolicy::new(&env)?;

    let start = Instant::now();
    let phase1 = experiment::run_phase1(&plan, &env, &expert, seed)?;
    let gt = experiment::build_ground_truth(&plan, &env, &expert, &phase1, seed)?;
    let choices = experiment::run_phase2(&plan, &env, &expert, &phase1, &gt, seed)?;
    let held_out = experiment::held_out_fleets(&plan, &env, &expert, &phase1, &gt, seed)?;
    let mut scorers = Vec::new();
    for &kind in &plan.scorer_variants {
        let scorer = match kind {
            ScorerKind::GroundTruthGap => gt.clone(),
            _ => experiment::train_scorer(&plan, &env, kind, &choices, seed)?,
        };
        let agreement = scorers::top_one_agreement(&scorer, &gt, &held_out)?;
        scorers.push((kind, scorer, agreement));
    }
    let scoring_time = start.elapsed();

    let start = Instant::now();
    let mut phase3 = Vec::new();
    for (_, scorer, _) in &scorers {
        phase3.push(experiment::run_phase3(&plan, &env, &expert, &phase1, scorer, seed)?);
    }
    let phase3_time = start.elapsed();

    let mut variants = Vec::new();
    for ((kind, scorer, top1_agreement), p3) in scorers.into_iter().zip(phase3) {
        let phase4_rewards = experiment::run_phase4(&plan, &env, &phase1, &p3.demos, experiment::phase3_tag(kind), seed)?;
        let row = experiment::report_row(seed, kind, &p3.team_rewards, &phase4_rewards, top1_agreement)?;
        variants.push(experiment::VariantResult {
            kind,
            scorer,
            phase3: p3,
            phase4_rewards,
            top1_agreement,
            row,
        });
    }
    Ok(Staged {
        plan,
        run: experiment::PipelineRun {
            seed,
            phase1,
            ground_truth: gt,
            choices,
            held_out,
            variants,
        },
        scoring_time,
        phase3_time,
    })
}

fn scorer_recovery(s: &Staged) -> Outcome {
    let agreement = |k| s.run.variant(k).unwrap().top1_agreement;
    let luce = agreement(ScorerKind::LuceMlp);
    let base = agreement(ScorerKind::BaselineMlp);
    let fleets = s.run.held_out.len();
    let n_ok = s.run.held_out.iter().all(|f| f.len() == 12);
    Outcome::new(
        fleets >= 2000 && n_ok && luce >= 0.70 && luce - base >= 0.15 && s.scoring_time <= Duration::from_secs(300),
        format!(
            "{fleets} held-out fleets, luce {luce:.3}, baseline {base:.3}, margin {:.3}, {}",
            luce - base,
            secs(s.scoring_time)
        ),
    )
}

fn ordering(
    s: &Staged,
    label: &str,
    values: impl Fn(&experiment::VariantResult) -> (usize, ConfidenceInterval),
    extra: bool,
) -> Outcome {
    let get = |k| values(s.run.variant(k).unwrap());
    let (n_gt, gt) = get(ScorerKind::GroundTruthGap);
    let (n_luce, luce) = get(ScorerKind::LuceMlp);
    let (n_base, base) = get(ScorerKind::BaselineMlp);
    let counts = n_gt.min(n_luce).min(n_base);
    let pass = extra && counts >= 100 && gt.mean >= luce.mean && luce.mean >= base.mean && gt.mean > base.mean && !gt.overlaps(&base);
    let fmt = |c: ConfidenceInterval| format!("{:.2} [{:.2}, {:.2}]", c.mean, c.low, c.high);
    Outcome::new(
        pass,
        format!(
            "{counts} paired {label}: gt {}, luce {}, baseline {}",
            fmt(gt),
            fmt(luce),
            fmt(base)
        ),
    )
}

fn team_ordering(s: &Staged) -> Outcome {
    let fast = s.phase3_time <= Duration::from_secs(900);
    let mut o = ordering(
        s,
        "trials",
        |v| (v.phase3.team_rewards.len(), v.row.team_ci()),
        fast && s.plan.phase3_fleet_size == 12,
    );
    o.detail.push_str(&format!(", {}", secs(s.phase3_time)));
    o
}

fn data_impact(s: &Staged) -> Outcome {
    ordering(
        s,
        &format!("seeds x {} episodes", s.plan.phase4_eval_episodes),
        |v| (v.phase4_rewards.len(), v.row.phase4_ci()),
        s.plan.phase4_eval_episodes >= 8,
    )
}

fn scaled_sq_distance(a: &RobotState, b: &RobotState, k: [f64; 4]) -> f64 {
    let terms = [
        k[0] * a.x - k[0] * b.x,
        k[1] * a.y - k[1] * b.y,
        k[2] * a.heading.sin() - k[2] * b.heading.sin(),
        k[2] * a.heading.cos() - k[2] * b.heading.cos(),
        k[3] * a.health - k[3] * b.health,
    ];
    terms.iter().map(|t| t * t).sum()
}

fn imitation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let k = FeatureScales::default().0;
    let lattice = |rng: &mut ChaCha8Rng| {
        RobotState::new(
            rng.gen_range(0..6) as f64,
            rng.gen_range(0..4) as f64,
            [0.0, std::f64::consts::FRAC_PI_2][rng.gen_range(0..2)],
            [100.0, 50.0][rng.gen_range(0..2)],
        )
    };
    let demos: Vec<Demo> = (0..200)
        .map(|_| Demo {
            state: lattice(&mut rng),
            action: Action::ALL[rng.gen_range(0..4)],
            tag: DemoTag::Phase1,
        })
        .collect();
    let ds = DemoDataset::from_demos(demos.clone(), FeatureScales::default()).unwrap();
    let (mut matched, mut ties) = (0, 0);
    for q in 0..1000 {
        let query = if q % 2 == 0 {
            let mut s = lattice(&mut rng);
            s.y += 0.5 * rng.gen_range(0..2) as f64;
            s
        } else {
            RobotState::new(
                rng.gen_range(-1.0..7.0),
                rng.gen_range(-1.0..5.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..100.0),
            )
        };
        let dists: Vec<f64> = demos.iter().map(|d| scaled_sq_distance(&d.state, &query, k)).collect();
        let best = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let want = dists.iter().position(|&d| d == best).unwrap();
        if dists.iter().filter(|&&d| d == best).count() > 1 {
            ties += 1;
        }
        if ds.nearest_index(&query).unwrap() == want && ds.nearest_action(&query).unwrap() == demos[want].action {
            matched += 1;
        }
    }
    Outcome::new(matched == 1000, format!("{matched}/1000 queries match, {ties} with tied neighbours"))
}

fn value_oracle() -> Outcome {
    let env = EnvConfig::default();
    let mut v = ValueEstimate::new(EstimateKind::TD0Tabular, Discretization::default_for(&env), 0.5).unwrap();
    for _ in 0..200 {
        v.td0_episode(&[0, 1], &[1.0, 0.0], None, &StepSchedule::default());
    }
    // V(0) = 1 + 0.5 * V(1), V(1) = 0.
    let chain_err = (v.value_at(0) - 1.0).abs().max(v.value_at(1).abs());
    let cmp = common::td_vs_mc(2000, 17);
    Outcome::new(
        chain_err < 1e-3 && cmp.ratio() <= 0.10,
        format!(
            "chain error {chain_err:.2e}, TD vs MC {:.3} of MC range over {} cells",
            cmp.ratio(),
            cmp.cells
        ),
    )
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let plan_path = root.path().join("p.toml");
    ExperimentPlan {
        phase1_episodes: 3,
        phase2_trials: 5,
        phase3_trials: 6,
        phase4_eval_episodes: 2,
        agreement_fleets: 100,
        ground_truth: GroundTruthPlan {
            episodes: 1000,
            ..GroundTruthPlan::default()
        },
        seeds: vec![1],
        ..ExperimentPlan::default()
    }
    .save(&plan_path)
    .unwrap();
    let plan = ExperimentPlan::load(&plan_path).unwrap();
    let env = EnvConfig::default();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    experiment::run_all(&plan, &env, &a).unwrap();
    experiment::run_all(&plan, &env, &b).unwrap();
    let files = files_under(&a);
    let traces = files.iter().filter(|p| p.to_string_lossy().ends_with(".jsonl.gz")).count();
    let same_set = files == files_under(&b);
    let differing: Vec<_> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .collect();
    Outcome::new(
        same_set && differing.is_empty() && traces > 0 && files.iter().any(|f| f.ends_with("report.csv")),
        format!("{} files compared ({traces} traces), {} differ", files.len(), differing.len()),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient oracle", gradient_oracle()),
        ("2 choice-model laws", choice_laws()),
    ];
    match staged_pipeline(1) {
        Ok(staged) => {
            results.push(("3 scorer recovery", scorer_recovery(&staged)));
            results.push(("4 team-performance ordering", team_ordering(&staged)));
            results.push(("5 data-impact ordering", data_impact(&staged)));
        }
        Err(e) => {
            for name in ["3 scorer recovery", "4 team-performance ordering", "5 data-impact ordering"] {
                results.push((name, Outcome::new(false, format!("pipeline failed: {e}"))));
            }
        }
    }
    results.push(("6 imitation oracle", imitation_oracle()));
    results.push(("7 value-estimation oracle", value_oracle()));
    results.push(("8 determinism", determinism()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
