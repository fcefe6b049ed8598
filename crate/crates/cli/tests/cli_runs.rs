use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY_PLAN: &str = r#"
phase1Episodes = 2
phase2Trials = 2
phase3Trials = 3
phase4EvalEpisodes = 2
trialHorizon = 60
agreementFleets = 20
seeds = [3]

[groundTruth]
episodes = 200

[training]
epochs = 3
"#;

fn opswitch(dir: &Path, args: &[&str]) -> Output {
    let plan = dir.join("plan.toml");
    if !plan.exists() {
        fs::write(&plan, TINY_PLAN).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_opswitch"))
        .arg("--plan")
        .arg(&plan)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn run_all_matches_step_by_step_report() {
    let whole = tempfile::tempdir().unwrap();
    ok(opswitch(whole.path(), &["run-all"]));
    let report = fs::read_to_string(whole.path().join("out/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
    assert!(whole.path().join("out/seed-3/traces_gt").is_dir());

    let steps = tempfile::tempdir().unwrap();
    let d = steps.path();
    let out = d.join("out");
    ok(opswitch(d, &["--seed", "3", "phase1"]));
    ok(opswitch(d, &["--seed", "3", "phase2"]));
    ok(opswitch(d, &["--seed", "3", "train-scorer", "--loss", "luce"]));
    ok(opswitch(d, &["--seed", "3", "train-scorer", "--loss", "baseline"]));
    for scorer in ["gt", "scorer_luce.json", "scorer_baseline.json"] {
        let arg = if scorer == "gt" {
            scorer.to_string()
        } else {
            out.join(scorer).display().to_string()
        };
        ok(opswitch(d, &["--seed", "3", "phase3", "--scorer", &arg]));
    }
    for kind in ["gt", "luce", "baseline"] {
        ok(opswitch(d, &["--seed", "3", "phase4", "--kind", kind]));
    }
    let summary = ok(opswitch(d, &["report"]));
    assert_eq!(String::from_utf8_lossy(&summary.stdout).lines().count(), 3);
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap(), report);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(opswitch(a.path(), &["run-all"]));
    ok(opswitch(b.path(), &["run-all"]));
    for rel in ["out/report.csv", "out/seed-3/traces_luce/trial-0002.jsonl.gz"] {
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn validation_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = opswitch(dir.path(), &["phase4", "--kind", "oracle"]);
    assert_eq!(out.status.code(), Some(2));

    let out = opswitch(dir.path(), &["phase1", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.path().join("plan.toml"), "phase1Episodes = 0\n").unwrap();
    let out = opswitch(dir.path(), &["phase1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase1Episodes"));

    fs::write(dir.path().join("plan.toml"), "phase1Episode = 3\n").unwrap();
    assert_eq!(opswitch(dir.path(), &["phase1"]).status.code(), Some(2));
}

#[test]
fn report_requires_phase_four_results() {
    let dir = tempfile::tempdir().unwrap();
    ok(opswitch(dir.path(), &["phase1"]));
    ok(opswitch(dir.path(), &["phase3", "--scorer", "gt"]));
    let out = opswitch(dir.path(), &["report"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase4"));
}
