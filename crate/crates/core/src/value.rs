//! Tabular state-value estimation and the value-gap intervention score.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridnav::{self, EnvConfig, EnvState, RobotState};
use crate::policy::{rollout_from, Episode, Policy};
use crate::rng::EpisodeRng;

const VTAB_FORMAT: &str = "vtab";
const VTAB_VERSION: u32 = 1;

/// Maps a robot state to a table cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Discretization {
    pub cell_size: f64,
    pub heading_buckets: usize,
    pub health_buckets: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Discretization {
    pub fn for_env(config: &EnvConfig, cell_size: f64, heading_buckets: usize, health_buckets: usize) -> Result<Self> {
        if !(cell_size > 0.0) || heading_buckets == 0 || health_buckets == 0 {
            return Err(Error::config("discretization must have positive cell size and bucket counts"));
        }
        Ok(Self {
            cell_size,
            heading_buckets,
            health_buckets,
            x_min: config.arena.x_min,
            y_min: config.arena.y_min,
            nx: (config.arena.width() / cell_size).ceil() as usize,
            ny: (config.arena.height() / cell_size).ceil() as usize,
        })
    }

    /// 0.5-unit cells, 8 heading buckets, 4 health buckets.
    pub fn default_for(config: &EnvConfig) -> Self {
        Self::for_env(config, 0.5, 8, 4).expect("default discretization is valid")
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny * self.heading_buckets * self.health_buckets
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cells() == 0 || !(self.cell_size > 0.0) {
            return Err(Error::config("empty discretization"));
        }
        Ok(())
    }

    pub fn cell(&self, s: &RobotState) -> usize {
        let bucket = |v: f64, n: usize| -> usize {
            let b = v.floor();
            if b <= 0.0 {
                0
            } else {
                (b as usize).min(n - 1)
            }
        };
        let i = bucket((s.x - self.x_min) / self.cell_size, self.nx);
        let j = bucket((s.y - self.y_min) / self.cell_size, self.ny);
        let h = bucket(s.heading / TAU * self.heading_buckets as f64, self.heading_buckets);
        let hp = bucket(
            s.health / gridnav::MAX_HEALTH * self.health_buckets as f64,
            self.health_buckets,
        );
        ((j * self.nx + i) * self.heading_buckets + h) * self.health_buckets + hp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateKind {
    TD0Tabular,
    MonteCarlo,
}

/// Step-size schedule for tabular updates. The `n`-th update of a cell uses
/// `max(1/n, initial / (1 + n / decay_visits))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepSchedule {
    pub initial: f64,
    pub decay_visits: f64,
    pub sample_average_floor: bool,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            initial: 0.1,
            decay_visits: 100.0,
            sample_average_floor: true,
        }
    }
}

impl StepSchedule {
    pub fn rate(&self, n: u32) -> f64 {
        let decayed = self.initial / (1.0 + n as f64 / self.decay_visits);
        if self.sample_average_floor {
            decayed.max(1.0 / n.max(1) as f64)
        } else {
            decayed
        }
    }
}

/// A value table over a discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub kind: EstimateKind,
    pub discretization: Discretization,
    pub gamma: f64,
    values: Vec<f64>,
    visits: Vec<u32>,
}

impl ValueEstimate {
    pub fn new(kind: EstimateKind, discretization: Discretization, gamma: f64) -> Result<Self> {
        discretization.validate()?;
        let n = discretization.num_cells();
        Ok(Self {
            kind,
            discretization,
            gamma,
            values: vec![0.0; n],
            visits: vec![0; n],
        })
    }

    pub fn value_at(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn visits_at(&self, cell: usize) -> u32 {
        self.visits[cell]
    }

    /// Value of the state's cell and whether that cell was ever visited.
    pub fn lookup(&self, s: &RobotState) -> (f64, bool) {
        let c = self.discretization.cell(s);
        (self.values[c], self.visits[c] > 0)
    }

    pub fn visited_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.visits
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(i, _)| i)
    }

    /// Apply TD(0) updates for one finished episode, latest transition first.
    ///
    /// `cells[t]` is the cell of the state at time `t` and `rewards[t]` the
    /// reward received leaving it. `bootstrap` is the cell after the last
    /// transition, or `None` when the episode ended in a terminal state.
    pub fn td0_episode(
        &mut self,
        cells: &[usize],
        rewards: &[f64],
        bootstrap: Option<usize>,
        schedule: &StepSchedule,
    ) {
        debug_assert_eq!(cells.len(), rewards.len());
        for t in (0..cells.len()).rev() {
            let next_value = if t + 1 < cells.len() {
                self.values[cells[t + 1]]
            } else {
                bootstrap.map_or(0.0, |c| self.values[c])
            };
            let c = cells[t];
            self.visits[c] += 1;
            let alpha = schedule.rate(self.visits[c]);
            let target = rewards[t] + self.gamma * next_value;
            self.values[c] += alpha * (target - self.values[c]);
        }
    }

    /// First-visit Monte-Carlo: fold the returns of one terminated episode
    /// into running averages.
    pub fn monte_carlo_episode(&mut self, cells: &[usize], rewards: &[f64]) {
        let mut returns = vec![0.0; cells.len()];
        let mut g = 0.0;
        for t in (0..cells.len()).rev() {
            g = rewards[t] + self.gamma * g;
            returns[t] = g;
        }
        let mut seen = std::collections::HashSet::new();
        for (t, &c) in cells.iter().enumerate() {
            if seen.insert(c) {
                self.visits[c] += 1;
                let n = self.visits[c] as f64;
                self.values[c] += (returns[t] - self.values[c]) / n;
            }
        }
    }

    pub fn to_artifact(&self) -> ValueArtifact {
        ValueArtifact {
            format: VTAB_FORMAT.to_string(),
            version: VTAB_VERSION,
            kind: self.kind,
            gamma: self.gamma,
            discretization: self.discretization,
            cells: self
                .visited_cells()
                .map(|c| CellEntry {
                    cell: c,
                    value: self.values[c],
                    visits: self.visits[c],
                })
                .collect(),
        }
    }

    pub fn from_artifact(a: ValueArtifact) -> Result<Self> {
        let bad = |reason: &str| Error::Artifact {
            path: "<vtab>".into(),
            reason: reason.into(),
        };
        if a.format != VTAB_FORMAT || a.version != VTAB_VERSION {
            return Err(bad("unsupported format or version"));
        }
        let mut est = Self::new(a.kind, a.discretization, a.gamma)?;
        for e in a.cells {
            if e.cell >= est.values.len() || !e.value.is_finite() {
                return Err(bad("cell out of range or non-finite value"));
            }
            est.values[e.cell] = e.value;
            est.visits[e.cell] = e.visits;
        }
        Ok(est)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_artifact())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let artifact: ValueArtifact = serde_json::from_str(&text).map_err(|e| Error::Artifact {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_artifact(artifact)
    }
}

/// On-disk form of a [`ValueEstimate`] (`.vtab.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueArtifact {
    pub format: String,
    pub version: u32,
    pub kind: EstimateKind,
    pub gamma: f64,
    pub discretization: Discretization,
    pub cells: Vec<CellEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub cell: usize,
    pub value: f64,
    pub visits: u32,
}

/// Where evaluation episodes begin.
#[derive(Debug, Clone, Default)]
pub struct StartStates {
    /// Candidate mid-task states; each is restarted with a fresh step count.
    pub pool: Vec<EnvState>,
    /// Probability that an episode starts from the pool instead of a reset.
    pub pool_fraction: f64,
}

impl StartStates {
    pub fn reset_only() -> Self {
        Self::default()
    }

    fn draw(&self, config: &EnvConfig, rng: &mut EpisodeRng) -> Result<EnvState> {
        if !self.pool.is_empty() && rng.gen_bool(self.pool_fraction.clamp(0.0, 1.0)) {
            let mut s = self.pool[rng.gen_range(0..self.pool.len())].clone();
            s.t = 0;
            Ok(s)
        } else {
            gridnav::reset(config, rng)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub episodes: usize,
    pub schedule: StepSchedule,
    pub discretization: Discretization,
    pub seed: u64,
    pub starts: StartStates,
}

impl EvalConfig {
    pub fn new(config: &EnvConfig, episodes: usize, seed: u64) -> Self {
        Self {
            episodes,
            schedule: StepSchedule::default(),
            discretization: Discretization::default_for(config),
            seed,
            starts: StartStates::reset_only(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::usage("policy evaluation needs at least one episode"));
        }
        if !(self.schedule.initial > 0.0 && self.schedule.initial <= 1.0) {
            return Err(Error::usage("learning rate must lie in (0, 1]"));
        }
        self.discretization.validate()
    }
}

fn episode_cells(ep: &Episode, d: &Discretization) -> (Vec<usize>, Vec<f64>) {
    ep.transitions
        .iter()
        .map(|tr| (d.cell(&tr.state.robot), tr.reward))
        .unzip()
}

/// Evaluate `policy` by tabular TD(0) on the environment's own rewards.
/// Every episode runs to termination; terminal states are worth zero.
pub fn evaluate_policy_td<P: Policy + ?Sized>(
    policy: &P,
    config: &EnvConfig,
    eval: &EvalConfig,
) -> Result<ValueEstimate> {
    evaluate(policy, config, eval, EstimateKind::TD0Tabular)
}

/// First-visit Monte-Carlo evaluation over the same episode stream as
/// [`evaluate_policy_td`] for an identical `eval`.
pub fn evaluate_policy_mc<P: Policy + ?Sized>(
    policy: &P,
    config: &EnvConfig,
    eval: &EvalConfig,
) -> Result<ValueEstimate> {
    evaluate(policy, config, eval, EstimateKind::MonteCarlo)
}

fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    config: &EnvConfig,
    eval: &EvalConfig,
    kind: EstimateKind,
) -> Result<ValueEstimate> {
    eval.validate()?;
    let mut table = ValueEstimate::new(kind, eval.discretization, config.discount)?;
    for e in 0..eval.episodes {
        let mut rng = EpisodeRng::new(eval.seed, e as u64);
        let start = eval.starts.draw(config, &mut rng)?;
        let ep = rollout_from(policy, config, start)?;
        let (cells, rewards) = episode_cells(&ep, &eval.discretization);
        match kind {
            EstimateKind::TD0Tabular => table.td0_episode(&cells, &rewards, None, &eval.schedule),
            EstimateKind::MonteCarlo => table.monte_carlo_episode(&cells, &rewards),
        }
    }
    Ok(table)
}

/// Score from a pair of value tables: `vh(s) - vr(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapScore {
    pub score: f64,
    /// False when either table never visited the state's cell; the score is
    /// then 0.
    pub confident: bool,
}

pub fn value_gap_score(state: &RobotState, vh: &ValueEstimate, vr: &ValueEstimate) -> Result<GapScore> {
    if vh.discretization != vr.discretization {
        return Err(Error::usage("value estimates use different discretizations"));
    }
    let (h, h_seen) = vh.lookup(state);
    let (r, r_seen) = vr.lookup(state);
    if h_seen && r_seen {
        Ok(GapScore {
            score: h - r,
            confident: true,
        })
    } else {
        Ok(GapScore {
            score: 0.0,
            confident: false,
        })
    }
}
