#![allow(dead_code)]

use opswitch_core::experiment::{self, ExperimentPlan, GroundTruthPlan};
use opswitch_core::expert::ExpertPolicy;
use opswitch_core::fleet::{argmax_choose, Fleet, FleetTrace, TraceStep};
use opswitch_core::gridnav::{Action, EnvConfig};
use opswitch_core::imitation::DemoDataset;
use opswitch_core::scorers::Scorer;
use opswitch_server::{LogEvent, Mode, Phase, SessionLogs, SessionSetup};

pub fn autonomy(env: &EnvConfig) -> DemoDataset {
    let plan = ExperimentPlan {
        phase1_episodes: 3,
        ..ExperimentPlan::default()
    };
    let expert = ExpertPolicy::new(env).unwrap();
    experiment::run_phase1(&plan, env, &expert, 5).unwrap()
}

/// A cheap ground-truth scorer; scores vary across states.
pub fn small_gt(env: &EnvConfig, autonomy: &DemoDataset) -> Scorer {
    let plan = ExperimentPlan {
        ground_truth: GroundTruthPlan {
            episodes: 200,
            ..GroundTruthPlan::default()
        },
        ..ExperimentPlan::default()
    };
    let expert = ExpertPolicy::new(env).unwrap();
    experiment::build_ground_truth(&plan, env, &expert, autonomy, 5).unwrap()
}

pub fn setup(phase: Phase, n: usize, dwell: u64, mode: Mode) -> SessionSetup {
    SessionSetup {
        id: "test".into(),
        phase,
        n,
        dwell,
        seed: 11,
        horizon: 10_000,
        initial_mode: mode,
        env: EnvConfig::default(),
    }
}

/// Straight-line re-simulation of a message log using only the fleet
/// primitives, mirroring the protocol rules.
pub fn oracle_trace(logs: &SessionLogs) -> FleetTrace {
    let s = &logs.setup;
    let mut fleet = Fleet::new(&s.env, s.n, s.seed).unwrap();
    let identity = logs.scorer.as_ref().map_or("none".to_string(), |x| x.identity());
    let mut trace = FleetTrace::new(&s.env, &s.fleet_config(), identity);
    let mut mode = s.initial_mode;
    let mut controlled = 0usize;
    let mut pending: Option<Action> = None;
    let mut ended = false;
    let mut t = 0u64;
    for e in &logs.events {
        match e {
            LogEvent::Message { text } => {
                if ended {
                    continue;
                }
                let Ok(v) = serde_json::from_str::<serde_json::Value>(text) else { continue };
                match v.get("type").and_then(|t| t.as_str()) {
                    Some("input") => {
                        if let Some(a) = v.get("action").and_then(|a| a.as_str()).and_then(|a| a.parse().ok()) {
                            pending = Some(a);
                        }
                    }
                    Some("select") => {
                        if let Some(r) = v.get("robot").and_then(|r| r.as_u64()) {
                            if mode == Mode::Manual && (r as usize) < s.n {
                                controlled = r as usize;
                            }
                        }
                    }
                    Some("mode") => match v.get("value").and_then(|m| m.as_str()) {
                        Some("manual") => mode = Mode::Manual,
                        Some("assisted") if logs.scorer.is_some() => mode = Mode::Assisted,
                        _ => {}
                    },
                    Some("end") => ended = true,
                    _ => {}
                }
            }
            LogEvent::Tick => {
                let states = fleet.robots();
                let decision = t % s.dwell == 0;
                let mut scores = None;
                if mode == Mode::Assisted && decision {
                    let sc = logs.scorer.as_ref().unwrap().score_many(&states).unwrap();
                    controlled = argmax_choose(&sc);
                    scores = Some(sc);
                }
                let robots = fleet.step(controlled, pending.take(), &logs.autonomy).unwrap();
                trace.steps.push(TraceStep {
                    t,
                    controlled,
                    decision,
                    scores,
                    states,
                    robots,
                });
                t += 1;
            }
        }
    }
    trace
}
