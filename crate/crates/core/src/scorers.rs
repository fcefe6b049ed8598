//! Intervention scoring functions and the choice data they are learned from.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::argmax_choose;
use crate::gridnav::{EnvConfig, RobotState};
use crate::tinynet::{self, ChoiceFeatures, ModelFile, Normalization, Objective, ScoringNet, TrainConfig};
use crate::value::{value_gap_score, ValueArtifact, ValueEstimate};

/// One observation of which robot the operator chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub timestep: u64,
    pub chosen: usize,
    pub states: Vec<RobotState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    pub fleet_size: usize,
    pub records: Vec<ChoiceRecord>,
}

impl ChoiceDataset {
    pub fn new(fleet_size: usize) -> Self {
        Self {
            fleet_size,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: ChoiceRecord) -> Result<()> {
        Self::check(self.fleet_size, &record)?;
        self.records.push(record);
        Ok(())
    }

    fn check(n: usize, r: &ChoiceRecord) -> Result<()> {
        if r.states.len() != n {
            return Err(Error::usage(format!(
                "choice record has {} states, fleet size is {n}",
                r.states.len()
            )));
        }
        if r.chosen >= n {
            return Err(Error::usage(format!("chosen index {} out of range for n = {n}", r.chosen)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Normalized network inputs for every record.
    pub fn features(&self, norm: &Normalization) -> Vec<ChoiceFeatures> {
        self.records
            .iter()
            .map(|r| ChoiceFeatures {
                states: r.states.iter().map(|s| norm.apply(s)).collect(),
                chosen: r.chosen,
            })
            .collect()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Load records; the fleet size is taken from the first record.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ChoiceRecord = serde_json::from_str(&line).map_err(|e| Error::Artifact {
                path: format!("{}:{}", path.display(), lineno + 1),
                reason: e.to_string(),
            })?;
            records.push(r);
        }
        let n = records.first().map_or(0, |r| r.states.len());
        let mut ds = ChoiceDataset::new(n);
        for r in records {
            ds.push(r).map_err(|e| Error::Artifact {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScorerKind {
    GroundTruthGap,
    LuceMlp,
    BaselineMlp,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 3] = [ScorerKind::GroundTruthGap, ScorerKind::LuceMlp, ScorerKind::BaselineMlp];

    pub fn short_name(self) -> &'static str {
        match self {
            ScorerKind::GroundTruthGap => "gt",
            ScorerKind::LuceMlp => "luce",
            ScorerKind::BaselineMlp => "baseline",
        }
    }
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self)
    }
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" | "GroundTruthGap" => Ok(ScorerKind::GroundTruthGap),
            "luce" | "LuceMlp" => Ok(ScorerKind::LuceMlp),
            "baseline" | "base" | "BaselineMlp" => Ok(ScorerKind::BaselineMlp),
            other => Err(Error::usage(format!("unknown scorer kind {other:?}"))),
        }
    }
}

/// A scoring function `state -> priority`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    GroundTruthGap {
        vh: Arc<ValueEstimate>,
        vr: Arc<ValueEstimate>,
    },
    LuceMlp(ScoringNet),
    BaselineMlp(ScoringNet),
}

impl Scorer {
    pub fn kind(&self) -> ScorerKind {
        match self {
            Scorer::GroundTruthGap { .. } => ScorerKind::GroundTruthGap,
            Scorer::LuceMlp(_) => ScorerKind::LuceMlp,
            Scorer::BaselineMlp(_) => ScorerKind::BaselineMlp,
        }
    }

    pub fn ground_truth(vh: ValueEstimate, vr: ValueEstimate) -> Result<Self> {
        if vh.discretization != vr.discretization {
            return Err(Error::usage("value estimates use different discretizations"));
        }
        Ok(Scorer::GroundTruthGap {
            vh: Arc::new(vh),
            vr: Arc::new(vr),
        })
    }

    /// A scorer that gives every state the same score (zero network).
    pub fn constant(config: &EnvConfig) -> Self {
        Scorer::LuceMlp(ScoringNet {
            params: tinynet::MlpParams::zeros(&tinynet::DEFAULT_LAYERS).expect("valid layers"),
            normalization: Normalization::for_env(config),
        })
    }

    pub fn score(&self, state: &RobotState) -> Result<f64> {
        match self {
            Scorer::GroundTruthGap { vh, vr } => Ok(value_gap_score(state, vh, vr)?.score),
            Scorer::LuceMlp(net) | Scorer::BaselineMlp(net) => net.score(state),
        }
    }

    pub fn score_many(&self, states: &[RobotState]) -> Result<Vec<f64>> {
        match self {
            Scorer::GroundTruthGap { .. } => states.iter().map(|s| self.score(s)).collect(),
            Scorer::LuceMlp(net) | Scorer::BaselineMlp(net) => net.score_many(states),
        }
    }

    pub fn to_envelope(&self) -> ScorerEnvelope {
        let payload = match self {
            Scorer::GroundTruthGap { vh, vr } => ScorerPayload::ValuePair {
                vh: vh.to_artifact(),
                vr: vr.to_artifact(),
            },
            Scorer::LuceMlp(net) | Scorer::BaselineMlp(net) => ScorerPayload::Model(net.to_file()),
        };
        ScorerEnvelope {
            kind: self.kind(),
            payload,
        }
    }

    pub fn from_envelope(env: ScorerEnvelope) -> Result<Self> {
        let mismatch = || Error::Artifact {
            path: "<scorer>".into(),
            reason: "payload does not match kind".into(),
        };
        match (env.kind, env.payload) {
            (ScorerKind::GroundTruthGap, ScorerPayload::ValuePair { vh, vr }) => {
                Self::ground_truth(ValueEstimate::from_artifact(vh)?, ValueEstimate::from_artifact(vr)?)
            }
            (ScorerKind::LuceMlp, ScorerPayload::Model(m)) => Ok(Scorer::LuceMlp(ScoringNet::from_file(m)?)),
            (ScorerKind::BaselineMlp, ScorerPayload::Model(m)) => {
                Ok(Scorer::BaselineMlp(ScoringNet::from_file(m)?))
            }
            _ => Err(mismatch()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_envelope())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let env: ScorerEnvelope = serde_json::from_str(&text).map_err(|e| Error::Artifact {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_envelope(env)
    }

    /// Kind plus a content fingerprint of the payload.
    pub fn identity(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_envelope()).expect("scorer serializes");
        format!("{}:{:016x}", self.kind(), fnv1a(&bytes))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// JSON form of a scorer: `{kind, payload}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerEnvelope {
    pub kind: ScorerKind,
    pub payload: ScorerPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScorerPayload {
    ValuePair { vh: ValueArtifact, vr: ValueArtifact },
    Model(ModelFile),
}

fn train_net(
    records: &ChoiceDataset,
    cfg: &TrainConfig,
    config: &EnvConfig,
    objective: Objective,
) -> Result<(ScoringNet, tinynet::TrainOutcome)> {
    if records.is_empty() {
        return Err(Error::usage("cannot train a scorer on an empty choice dataset"));
    }
    let norm = Normalization::for_env(config);
    let feats = records.features(&norm);
    let outcome = tinynet::train(&feats, objective, cfg, &tinynet::DEFAULT_LAYERS)?;
    Ok((
        ScoringNet {
            params: outcome.params.clone(),
            normalization: norm,
        },
        outcome,
    ))
}

/// Fit the choice-model scorer by maximum likelihood.
pub fn train_luce(records: &ChoiceDataset, cfg: &TrainConfig, config: &EnvConfig) -> Result<Scorer> {
    Ok(Scorer::LuceMlp(train_net(records, cfg, config, Objective::Luce)?.0))
}

/// Fit the binary intervened / not-intervened classifier on the same records.
pub fn train_baseline(records: &ChoiceDataset, cfg: &TrainConfig, config: &EnvConfig) -> Result<Scorer> {
    Ok(Scorer::BaselineMlp(train_net(records, cfg, config, Objective::Binary)?.0))
}

/// Like [`train_luce`] / [`train_baseline`] but also returns the loss trace.
pub fn train_with_outcome(
    kind: ScorerKind,
    records: &ChoiceDataset,
    cfg: &TrainConfig,
    config: &EnvConfig,
) -> Result<(Scorer, tinynet::TrainOutcome)> {
    match kind {
        ScorerKind::LuceMlp => {
            let (net, out) = train_net(records, cfg, config, Objective::Luce)?;
            Ok((Scorer::LuceMlp(net), out))
        }
        ScorerKind::BaselineMlp => {
            let (net, out) = train_net(records, cfg, config, Objective::Binary)?;
            Ok((Scorer::BaselineMlp(net), out))
        }
        ScorerKind::GroundTruthGap => Err(Error::usage("the ground-truth scorer is not trained from choices")),
    }
}

/// Fraction of fleets where both scorers put the same robot on top.
pub fn top_one_agreement(a: &Scorer, b: &Scorer, fleets: &[Vec<RobotState>]) -> Result<f64> {
    if fleets.is_empty() {
        return Err(Error::usage("top-1 agreement needs at least one fleet"));
    }
    let mut agree = 0usize;
    for fleet in fleets {
        if fleet.is_empty() {
            return Err(Error::usage("empty fleet"));
        }
        let ia = argmax_choose(&a.score_many(fleet)?);
        let ib = argmax_choose(&b.score_many(fleet)?);
        if ia == ib {
            agree += 1;
        }
    }
    Ok(agree as f64 / fleets.len() as f64)
}
