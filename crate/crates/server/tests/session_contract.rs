mod common;

use common::{autonomy, oracle_trace, setup, small_gt};
use opswitch_core::fleet::ActionSource;
use opswitch_core::gridnav::{Action, EnvConfig};
use opswitch_core::imitation::{DemoDataset, DemoTag};
use opswitch_core::scorers::Scorer;
use opswitch_server::protocol::ErrorCode;
use opswitch_server::session::SessionError;
use opswitch_server::{Mode, Phase, Session, SessionLogs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn manual_fleet(n: usize) -> Session {
    let env = EnvConfig::default();
    Session::new(setup(Phase::Fleet3, n, 15, Mode::Manual), autonomy(&env), None).unwrap()
}

fn assisted_fleet(n: usize, dwell: u64) -> Session {
    let env = EnvConfig::default();
    let demos = autonomy(&env);
    let gt = small_gt(&env, &demos);
    Session::new(setup(Phase::Fleet3, n, dwell, Mode::Assisted), demos, Some(gt)).unwrap()
}

#[test]
fn select_in_manual_sets_controlled_index() {
    let mut s = manual_fleet(12);
    s.handle_text(r#"{"type":"select","robot":3}"#).unwrap();
    assert_eq!(s.controlled(), 3);
    let f = s.tick().unwrap();
    assert_eq!(f.controlled, 3);
    assert_eq!(s.trace().steps[0].controlled, 3);
}

#[test]
fn select_out_of_range_is_rejected() {
    let mut s = manual_fleet(4);
    assert_eq!(s.handle_text(r#"{"type":"select","robot":4}"#), Err(ErrorCode::RobotOutOfRange));
    assert_eq!(s.controlled(), 0);
}

#[test]
fn select_in_assisted_is_forbidden() {
    let mut s = assisted_fleet(12, 15);
    s.tick().unwrap();
    let before = s.controlled();
    assert_eq!(
        s.handle_text(r#"{"type":"select","robot":5}"#),
        Err(ErrorCode::ManualSelectForbidden)
    );
    assert_eq!(s.controlled(), before);
}

#[test]
fn unknown_and_malformed_messages_leave_state_unchanged() {
    let mut s = manual_fleet(4);
    s.handle_text(r#"{"type":"input","action":"left"}"#).unwrap();
    s.tick().unwrap();
    let snapshot = (s.controlled(), s.mode(), s.ticks(), s.pending_action(), s.robots());
    let cases = [
        (r#"{"type":"dance"}"#, ErrorCode::UnknownType),
        (r#"{"type":"input","action":"jump"}"#, ErrorCode::Malformed),
        (r#"{"type":"select"}"#, ErrorCode::Malformed),
        (r#"{"robot":1}"#, ErrorCode::Malformed),
        ("not json", ErrorCode::Malformed),
        (r#"{"type":"mode","value":"turbo"}"#, ErrorCode::Malformed),
    ];
    for (text, code) in cases {
        assert_eq!(s.handle_text(text), Err(code), "{text}");
        assert_eq!(
            (s.controlled(), s.mode(), s.ticks(), s.pending_action(), s.robots()),
            snapshot,
            "{text}"
        );
    }
}

#[test]
fn assisted_mode_requires_a_scorer() {
    let env = EnvConfig::default();
    let err = Session::new(setup(Phase::Fleet3, 4, 15, Mode::Assisted), autonomy(&env), None).unwrap_err();
    assert!(matches!(err, SessionError::NoScorer));
    let mut s = manual_fleet(4);
    assert_eq!(s.handle_text(r#"{"type":"mode","value":"assisted"}"#), Err(ErrorCode::NoScorer));
    assert_eq!(s.mode(), Mode::Manual);
}

#[test]
fn assisted_switches_only_on_window_boundaries() {
    let mut s = assisted_fleet(12, 15);
    let mut prev = None;
    let mut switches = 0;
    for t in 0..300u64 {
        let f = s.tick().unwrap();
        assert_eq!(f.tick, t);
        assert!(f.controlled < 12);
        assert_eq!(f.scores.is_some(), t % 15 == 0);
        if let Some(p) = prev {
            if t % 15 != 0 {
                assert_eq!(f.controlled, p, "switch at tick {t}");
            } else if f.controlled != p {
                switches += 1;
            }
        }
        prev = Some(f.controlled);
    }
    assert!(switches > 0, "scorer never moved the operator");
}

#[test]
fn constant_scorer_never_leaves_robot_zero() {
    let env = EnvConfig::default();
    let mut s = Session::new(
        setup(Phase::Fleet3, 12, 1, Mode::Assisted),
        autonomy(&env),
        Some(Scorer::constant(&env)),
    )
    .unwrap();
    for _ in 0..100 {
        assert_eq!(s.tick().unwrap().controlled, 0);
    }
}

#[test]
fn manual_mode_ignores_the_scorer() {
    let env = EnvConfig::default();
    let demos = autonomy(&env);
    let gt = small_gt(&env, &demos);
    let mut s = Session::new(setup(Phase::Fleet3, 12, 1, Mode::Manual), demos, Some(gt)).unwrap();
    for t in 0..60 {
        if t == 30 {
            s.handle_text(r#"{"type":"select","robot":7}"#).unwrap();
        }
        let f = s.tick().unwrap();
        assert_eq!(f.controlled, if t < 30 { 0 } else { 7 });
        assert!(f.scores.is_none());
    }
}

#[test]
fn missing_input_holds_and_is_not_a_demonstration() {
    let mut s = manual_fleet(4);
    let before = s.robots()[0];
    s.tick().unwrap();
    let step = &s.trace().steps[0];
    assert_eq!(step.robots[0].action, None);
    assert_eq!(step.robots[0].source, ActionSource::Operator);
    let after = s.robots()[0];
    assert_eq!((after.x, after.y, after.heading), (before.x, before.y, before.heading));
    assert!(s.demos().unwrap().is_empty());

    s.handle_text(r#"{"type":"input","action":"forward"}"#).unwrap();
    let pre = s.robots()[0];
    s.tick().unwrap();
    let demos = s.demos().unwrap();
    assert_eq!(demos.len(), 1);
    assert_eq!(demos.demos()[0].state, pre);
    assert_eq!(demos.demos()[0].action, Action::Forward);
    assert_eq!(demos.demos()[0].tag, DemoTag::Phase3Manual);
    // The pending action is consumed by one tick.
    s.tick().unwrap();
    assert_eq!(s.trace().steps[2].robots[0].action, None);
}

#[test]
fn demonstration_tags_follow_phase_and_mode() {
    let env = EnvConfig::default();
    let mut s = Session::new(setup(Phase::Demo1, 1, 15, Mode::Manual), DemoDataset::default(), None).unwrap();
    s.handle_text(r#"{"type":"input","action":"right"}"#).unwrap();
    s.tick().unwrap();
    assert_eq!(s.demos().unwrap().demos()[0].tag, DemoTag::Phase1);
    assert!(s.choices().is_empty());

    let demos = autonomy(&env);
    let gt = small_gt(&env, &demos);
    let mut s = Session::new(setup(Phase::Fleet3, 4, 15, Mode::Assisted), demos, Some(gt)).unwrap();
    s.handle_text(r#"{"type":"input","action":"left"}"#).unwrap();
    s.tick().unwrap();
    assert_eq!(s.demos().unwrap().demos()[0].tag, DemoTag::Phase3Gt);
}

#[test]
fn choice_sessions_log_one_record_per_decision_tick() {
    let env = EnvConfig::default();
    let mut s = Session::new(setup(Phase::Choice2, 4, 5, Mode::Manual), autonomy(&env), None).unwrap();
    for t in 0..50u64 {
        if t == 12 {
            s.handle_text(r#"{"type":"select","robot":2}"#).unwrap();
        }
        s.tick().unwrap();
    }
    let records = &s.choices().records;
    assert_eq!(records.len(), 10);
    for (k, r) in records.iter().enumerate() {
        assert_eq!(r.timestep, 5 * k as u64);
        assert_eq!(r.states.len(), 4);
        assert_eq!(r.states, s.trace().steps[r.timestep as usize].states);
        assert_eq!(r.chosen, if r.timestep < 12 { 0 } else { 2 });
    }
}

#[test]
fn ended_sessions_reject_ticks_and_messages() {
    let mut s = manual_fleet(2);
    s.tick().unwrap();
    s.handle_text(r#"{"type":"end"}"#).unwrap();
    assert!(s.is_ended());
    assert!(matches!(s.tick(), Err(SessionError::Ended)));
    assert_eq!(s.handle_text(r#"{"type":"select","robot":1}"#), Err(ErrorCode::SessionEnded));
    assert_eq!(s.trace().steps.len(), 1);
}

#[test]
fn horizon_ends_the_session() {
    let env = EnvConfig::default();
    let mut st = setup(Phase::Fleet3, 3, 15, Mode::Manual);
    st.horizon = 20;
    let mut s = Session::new(st, autonomy(&env), None).unwrap();
    for _ in 0..20 {
        s.tick().unwrap();
    }
    assert!(s.is_ended());
    assert!(s.tick().is_err());
}

fn random_script(s: &mut Session, ticks: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = ["forward", "backward", "left", "right"];
    while s.ticks() < ticks as u64 {
        match rng.gen_range(0..10) {
            0..=4 => {
                let a = actions[rng.gen_range(0..4)];
                let _ = s.handle_text(&format!(r#"{{"type":"input","action":"{a}"}}"#));
            }
            5 => {
                let r = rng.gen_range(0..14);
                let _ = s.handle_text(&format!(r#"{{"type":"select","robot":{r}}}"#));
            }
            6 => {
                let m = if rng.gen_bool(0.5) { "manual" } else { "assisted" };
                let _ = s.handle_text(&format!(r#"{{"type":"mode","value":"{m}"}}"#));
            }
            7 => {
                let _ = s.handle_text(r#"{"type":"wave"}"#);
            }
            _ => {
                s.tick().unwrap();
            }
        }
    }
}

#[test]
fn offline_replay_reproduces_the_trace() {
    let mut s = assisted_fleet(12, 15);
    random_script(&mut s, 200, 3);
    s.handle_text(r#"{"type":"end"}"#).unwrap();
    let dir = tempfile::tempdir().unwrap();
    s.write_logs(dir.path()).unwrap();

    let logs = SessionLogs::load(dir.path()).unwrap();
    let oracle = oracle_trace(&logs);
    let replayed = logs.replay().unwrap();
    assert_eq!(replayed.trace(), s.trace());
    assert_eq!(&oracle, s.trace());
    assert_eq!(replayed.choices(), s.choices());
    assert_eq!(replayed.demos().unwrap(), s.demos().unwrap());

    let saved = opswitch_core::fleet::FleetTrace::load(&dir.path().join("trace.jsonl.gz")).unwrap();
    assert_eq!(&saved, s.trace());
}
