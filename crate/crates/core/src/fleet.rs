//! Multi-robot control loop: choice of the operator-controlled robot, the
//! operator/autonomy action mixture, traces and their metrics.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridnav::{self, Action, EnvConfig, EnvState, RobotState, TerminalReason};
use crate::imitation::DemoDataset;
use crate::policy::Policy;
use crate::rng::EpisodeRng;
use crate::scorers::Scorer;

const TRACE_FORMAT: &str = "fleet-trace";
const TRACE_VERSION: u32 = 1;

/// Probabilities `exp(s_i) / sum_j exp(s_j)` via max-subtracted softmax.
pub fn luce_probabilities(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Sample an index from the Luce choice distribution over `scores`.
pub fn luce_choose<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> usize {
    assert!(!scores.is_empty(), "luce_choose needs at least one score");
    if scores.len() == 1 {
        return 0;
    }
    let probs = luce_probabilities(scores);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative total
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Lowest index attaining the maximum score.
pub fn argmax_choose(scores: &[f64]) -> usize {
    assert!(!scores.is_empty(), "argmax_choose needs at least one score");
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChoiceMode {
    LuceSample,
    Argmax,
    /// Control only changes through explicit selection.
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FleetConfig {
    pub n: usize,
    pub dwell_period: u64,
    pub choice_mode: ChoiceMode,
    pub horizon: u64,
    pub seed: u64,
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::config("fleet needs at least one robot"));
        }
        if self.dwell_period < 1 {
            return Err(Error::config("dwell period must be at least 1"));
        }
        Ok(())
    }

    pub fn is_decision_step(&self, t: u64) -> bool {
        t % self.dwell_period == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSource {
    Operator,
    Autonomy,
}

/// What one robot did in one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotStep {
    /// `None` when the operator-controlled robot held still (no input).
    pub action: Option<Action>,
    pub source: ActionSource,
    pub reward: f64,
    /// The episode ended on this step; the robot was reset afterwards.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ended: Option<TerminalReason>,
}

/// One timestep of a fleet trial. `states` are the states before acting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: u64,
    pub controlled: usize,
    pub decision: bool,
    pub scores: Option<Vec<f64>>,
    pub states: Vec<RobotState>,
    pub robots: Vec<RobotStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub env: EnvConfig,
    pub fleet: FleetConfig,
    pub scorer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetTrace {
    pub header: TraceHeader,
    pub steps: Vec<TraceStep>,
}

impl FleetTrace {
    pub fn new(env: &EnvConfig, fleet: &FleetConfig, scorer: String) -> Self {
        Self {
            header: TraceHeader {
                format: TRACE_FORMAT.into(),
                version: TRACE_VERSION,
                env: env.clone(),
                fleet: *fleet,
                scorer,
            },
            steps: Vec::new(),
        }
    }

    /// Write as gzip-compressed JSONL: header line, then one line per step.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = BufWriter::new(GzEncoder::new(file, Compression::default()));
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        out.into_inner()
            .map_err(|e| Error::Io(e.into_error()))?
            .finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(GzDecoder::new(file)).lines();
        let bad = |reason: String| Error::Artifact {
            path: path.display().to_string(),
            reason,
        };
        let header: TraceHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l?).map_err(|e| bad(e.to_string()))?,
            None => return Err(bad("missing header".into())),
        };
        if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
            return Err(bad("unsupported trace format".into()));
        }
        let mut steps = Vec::new();
        for l in lines {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            steps.push(serde_json::from_str(&l).map_err(|e| bad(e.to_string()))?);
        }
        Ok(Self { header, steps })
    }
}

/// n independent environment instances with per-robot RNG streams. Robots
/// that reach a terminal state are reset immediately.
#[derive(Debug, Clone)]
pub struct Fleet {
    env: EnvConfig,
    states: Vec<EnvState>,
    rngs: Vec<EpisodeRng>,
}

impl Fleet {
    /// Robot `i` draws its episodes from stream `i + 1` of `seed`.
    pub fn new(env: &EnvConfig, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("fleet needs at least one robot"));
        }
        let mut rngs: Vec<EpisodeRng> = (0..n).map(|i| EpisodeRng::new(seed, i as u64 + 1)).collect();
        let states = rngs
            .iter_mut()
            .map(|r| gridnav::reset(env, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            env: env.clone(),
            states,
            rngs,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn env(&self) -> &EnvConfig {
        &self.env
    }

    pub fn state(&self, i: usize) -> &EnvState {
        &self.states[i]
    }

    pub fn states(&self) -> &[EnvState] {
        &self.states
    }

    pub fn robots(&self) -> Vec<RobotState> {
        self.states.iter().map(|s| s.robot).collect()
    }

    /// Advance every robot one step. The controlled robot executes
    /// `operator_action` (holding still on `None`); the rest follow `autonomy`.
    pub fn step(
        &mut self,
        controlled: usize,
        operator_action: Option<Action>,
        autonomy: &DemoDataset,
    ) -> Result<Vec<RobotStep>> {
        if controlled >= self.states.len() {
            return Err(Error::usage(format!("controlled index {controlled} out of range")));
        }
        let mut out = Vec::with_capacity(self.states.len());
        for i in 0..self.states.len() {
            let (action, source) = if i == controlled {
                (operator_action, ActionSource::Operator)
            } else {
                (Some(autonomy.act(&self.states[i], &self.env)?), ActionSource::Autonomy)
            };
            let res = match action {
                Some(a) => gridnav::step(&self.states[i], a, &self.env)?,
                None => gridnav::step_hold(&self.states[i], &self.env)?,
            };
            let ended = if res.terminal {
                self.states[i] = gridnav::reset(&self.env, &mut self.rngs[i])?;
                Some(res.terminal_reason)
            } else {
                self.states[i] = res.next;
                None
            };
            out.push(RobotStep {
                action,
                source,
                reward: res.reward,
                ended,
            });
        }
        Ok(out)
    }
}

/// The chooser's RNG stream; robots use streams `1..=n`.
pub fn chooser_rng(seed: u64) -> EpisodeRng {
    EpisodeRng::new(seed, 0)
}

/// Pick the controlled robot for a decision step.
pub fn choose(mode: ChoiceMode, scores: &[f64], current: usize, rng: &mut EpisodeRng) -> usize {
    match mode {
        ChoiceMode::LuceSample => luce_choose(scores, rng),
        ChoiceMode::Argmax => argmax_choose(scores),
        ChoiceMode::Manual => current,
    }
}

/// Run one fleet trial with a synthetic operator.
pub fn run_fleet_trial<P: Policy + ?Sized>(
    env: &EnvConfig,
    fleet_cfg: &FleetConfig,
    scorer: &Scorer,
    operator: &P,
    autonomy: &DemoDataset,
) -> Result<FleetTrace> {
    fleet_cfg.validate()?;
    if autonomy.is_empty() && fleet_cfg.n > 1 {
        return Err(Error::usage("the autonomy policy has no demonstrations"));
    }
    let mut fleet = Fleet::new(env, fleet_cfg.n, fleet_cfg.seed)?;
    let mut rng = chooser_rng(fleet_cfg.seed);
    let mut trace = FleetTrace::new(env, fleet_cfg, scorer.identity());
    let mut controlled = 0usize;
    for t in 0..fleet_cfg.horizon {
        let states = fleet.robots();
        let decision = fleet_cfg.is_decision_step(t);
        let mut scores = None;
        if decision && fleet_cfg.choice_mode != ChoiceMode::Manual {
            let s = scorer.score_many(&states)?;
            controlled = choose(fleet_cfg.choice_mode, &s, controlled, &mut rng);
            scores = Some(s);
        }
        let op_action = operator.act(fleet.state(controlled), env)?;
        let robots = fleet.step(controlled, Some(op_action), autonomy)?;
        trace.steps.push(TraceStep {
            t,
            controlled,
            decision,
            scores,
            states,
            robots,
        });
    }
    Ok(trace)
}

/// Cumulative reward over all robots and timesteps.
pub fn team_reward(trace: &FleetTrace) -> f64 {
    trace
        .steps
        .iter()
        .flat_map(|s| s.robots.iter().map(|r| r.reward))
        .sum()
}

/// Per-robot episode returns, in order; a trailing unfinished episode is
/// included.
pub fn episode_returns(trace: &FleetTrace) -> Vec<Vec<f64>> {
    let n = trace.header.fleet.n;
    let mut out = vec![Vec::new(); n];
    let mut running = vec![0.0; n];
    let mut open = vec![false; n];
    for step in &trace.steps {
        for (i, r) in step.robots.iter().enumerate() {
            running[i] += r.reward;
            open[i] = true;
            if r.ended.is_some() {
                out[i].push(running[i]);
                running[i] = 0.0;
                open[i] = false;
            }
        }
    }
    for i in 0..n {
        if open[i] {
            out[i].push(running[i]);
        }
    }
    out
}

/// The operator's explicit `(state, action)` pairs in timestep order.
pub fn extract_operator_demos(trace: &FleetTrace) -> Vec<(RobotState, Action)> {
    trace
        .steps
        .iter()
        .filter_map(|s| {
            let r = &s.robots[s.controlled];
            match (r.source, r.action) {
                (ActionSource::Operator, Some(a)) => Some((s.states[s.controlled], a)),
                _ => None,
            }
        })
        .collect()
}
