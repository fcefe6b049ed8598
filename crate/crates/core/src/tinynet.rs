//! A small fully-connected ReLU network with a scalar output, trained from
//! scratch with analytic backpropagation.
//!
//! Two objectives share the architecture and optimizer:
//! - [`Objective::Luce`]: negative log-likelihood of the observed choice under
//!   an n-way softmax over per-state scores (parameters shared across states).
//! - [`Objective::Binary`]: sigmoid cross-entropy with the chosen state
//!   labelled 1 and every other state in the record labelled 0.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridnav::{EnvConfig, RobotState, MAX_HEALTH};
use crate::rng::EpisodeRng;

pub const INPUT_DIM: usize = 4;
pub const DEFAULT_LAYERS: [usize; 4] = [INPUT_DIM, 32, 32, 1];

const MODEL_FORMAT: &str = "mlp";
const MODEL_VERSION: u32 = 1;

/// Weights are row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::usage("an MLP needs at least two non-empty layers"));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::usage("the scoring MLP must have a scalar output"));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// He initialization: weights `N(0, 2 / fan_in)`, zero biases.
    pub fn he_init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::zeros(layer_sizes)?;
        let mut rng = EpisodeRng::new(seed, 0);
        for (l, w) in p.weights.iter_mut().enumerate() {
            let fan_in = layer_sizes[l] as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for x in w.iter_mut() {
                *x = normal.sample(&mut rng);
            }
        }
        Ok(p)
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn get_flat(&self, k: usize) -> f64 {
        *self.values().nth(k).expect("flat index in range")
    }

    pub fn set_flat(&mut self, k: usize, v: f64) {
        *self.values_mut().nth(k).expect("flat index in range") = v;
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let ls = &self.layer_sizes;
        if ls.len() < 2 || self.weights.len() != ls.len() - 1 || self.biases.len() != ls.len() - 1 {
            return Err(Error::usage("layer count does not match layerSizes"));
        }
        for l in 0..ls.len() - 1 {
            if self.weights[l].len() != ls[l] * ls[l + 1] || self.biases[l].len() != ls[l + 1] {
                return Err(Error::usage(format!("layer {l} has inconsistent shape")));
            }
        }
        if *ls.last().unwrap() != 1 {
            return Err(Error::usage("the scoring MLP must have a scalar output"));
        }
        if !self.values().all(|v| v.is_finite()) {
            return Err(Error::usage("non-finite parameter"));
        }
        Ok(())
    }

    fn same_shape(&self) -> Self {
        Self {
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Forward-pass buffers, reused across calls.
struct Workspace {
    /// `acts[0]` is the input, `acts[l]` the post-activation of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Workspace {
    fn new(p: &MlpParams) -> Self {
        let max = *p.layer_sizes.iter().max().unwrap();
        Self {
            acts: p.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            pre: p.layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; max],
            delta_next: vec![0.0; max],
        }
    }

    fn forward(&mut self, p: &MlpParams, input: &[f64]) -> f64 {
        self.acts[0].copy_from_slice(input);
        let last = p.num_layers() - 1;
        for l in 0..p.num_layers() {
            let n_in = p.layer_sizes[l];
            let n_out = p.layer_sizes[l + 1];
            let w = &p.weights[l];
            let b = &p.biases[l];
            let (before, after) = self.acts.split_at_mut(l + 1);
            let a_in = &before[l];
            let a_out = &mut after[0];
            let z = &mut self.pre[l];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut s = b[o];
                for (wi, ai) in row.iter().zip(a_in.iter()) {
                    s += wi * ai;
                }
                z[o] = s;
                a_out[o] = if l == last { s } else { s.max(0.0) };
            }
        }
        self.acts[p.num_layers()][0]
    }

    /// Accumulate `upstream * d output / d params` into `grad`, using the
    /// caches of the most recent forward pass.
    fn backward(&mut self, p: &MlpParams, upstream: f64, grad: &mut MlpParams) {
        let nl = p.num_layers();
        self.delta[0] = upstream;
        for l in (0..nl).rev() {
            let n_in = p.layer_sizes[l];
            let n_out = p.layer_sizes[l + 1];
            let a_in = &self.acts[l];
            let gw = &mut grad.weights[l];
            let gb = &mut grad.biases[l];
            for o in 0..n_out {
                let d = self.delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(a_in.iter()) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let w = &p.weights[l];
                let z_prev = &self.pre[l - 1];
                for i in 0..n_in {
                    if z_prev[i] <= 0.0 {
                        self.delta_next[i] = 0.0;
                        continue;
                    }
                    let mut s = 0.0;
                    for o in 0..n_out {
                        s += w[o * n_in + i] * self.delta[o];
                    }
                    self.delta_next[i] = s;
                }
                std::mem::swap(&mut self.delta, &mut self.delta_next);
            }
        }
    }
}

fn check_input(p: &MlpParams, input: &[f64]) -> Result<()> {
    if input.len() != p.input_dim() {
        return Err(Error::usage(format!(
            "input has {} features, network expects {}",
            input.len(),
            p.input_dim()
        )));
    }
    if !input.iter().all(|v| v.is_finite()) {
        return Err(Error::usage("non-finite network input"));
    }
    Ok(())
}

/// Network output for one input vector.
pub fn forward(params: &MlpParams, input: &[f64]) -> Result<f64> {
    check_input(params, input)?;
    let mut ws = Workspace::new(params);
    Ok(ws.forward(params, input))
}

/// Network outputs for many inputs, sharing one workspace.
pub fn forward_many(params: &MlpParams, inputs: &[[f64; INPUT_DIM]]) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(params);
    inputs
        .iter()
        .map(|x| {
            check_input(params, x)?;
            Ok(ws.forward(params, x))
        })
        .collect()
}

/// ReLU on/off pattern of every hidden unit for `input`.
pub fn activation_pattern(params: &MlpParams, input: &[f64]) -> Result<Vec<bool>> {
    check_input(params, input)?;
    let mut ws = Workspace::new(params);
    ws.forward(params, input);
    Ok(ws.pre[..params.num_layers() - 1]
        .iter()
        .flat_map(|z| z.iter().map(|&v| v > 0.0))
        .collect())
}

/// One observed choice among `states` (already normalized features).
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceFeatures {
    pub states: Vec<[f64; INPUT_DIM]>,
    pub chosen: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Luce,
    Binary,
}

/// `log(sum(exp(xs)))` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Numerically stable `-[y ln σ(z) + (1-y) ln(1-σ(z))]`.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_record(p: &MlpParams, r: &ChoiceFeatures) -> Result<()> {
    if r.states.is_empty() {
        return Err(Error::usage("a choice record needs at least one state"));
    }
    if r.chosen >= r.states.len() {
        return Err(Error::usage(format!(
            "chosen index {} out of range for {} states",
            r.chosen,
            r.states.len()
        )));
    }
    for s in &r.states {
        check_input(p, s)?;
    }
    Ok(())
}

/// Data loss of `batch` weighted by `weight`, accumulating the matching
/// gradient into `grad`.
fn accumulate(
    p: &MlpParams,
    ws: &mut Vec<Workspace>,
    batch: &[&ChoiceFeatures],
    objective: Objective,
    weight: f64,
    grad: &mut MlpParams,
) -> f64 {
    let mut total = 0.0;
    let mut outs = Vec::new();
    for r in batch {
        while ws.len() < r.states.len() {
            ws.push(Workspace::new(p));
        }
        match objective {
            Objective::Luce => {
                outs.clear();
                outs.extend(r.states.iter().zip(ws.iter_mut()).map(|(s, w)| w.forward(p, s)));
                let lse = log_sum_exp(&outs);
                total += lse - outs[r.chosen];
                for (j, w) in ws.iter_mut().take(r.states.len()).enumerate() {
                    let prob = (outs[j] - lse).exp();
                    let g = prob - if j == r.chosen { 1.0 } else { 0.0 };
                    if g != 0.0 {
                        w.backward(p, weight * g, grad);
                    }
                }
            }
            Objective::Binary => {
                let w = &mut ws[0];
                for (j, s) in r.states.iter().enumerate() {
                    let y = if j == r.chosen { 1.0 } else { 0.0 };
                    let z = w.forward(p, s);
                    total += bce_with_logit(z, y);
                    w.backward(p, weight * (sigmoid(z) - y), grad);
                }
            }
        }
    }
    weight * total
}

fn add_l2(p: &MlpParams, l2: f64, grad: &mut MlpParams) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    for (g, v) in grad.values_mut().zip(p.values()) {
        *g += 2.0 * l2 * v;
    }
    l2 * p.squared_norm()
}

/// Summed objective over `batch` plus `l2 * |θ|²`, with its exact gradient.
pub fn loss_and_grad(
    params: &MlpParams,
    batch: &[ChoiceFeatures],
    objective: Objective,
    l2: f64,
) -> Result<(f64, MlpParams)> {
    params.validate()?;
    for r in batch {
        check_record(params, r)?;
    }
    let mut grad = params.same_shape();
    let mut ws = Vec::new();
    let refs: Vec<&ChoiceFeatures> = batch.iter().collect();
    let data = accumulate(params, &mut ws, &refs, objective, 1.0, &mut grad);
    let reg = add_l2(params, l2, &mut grad);
    Ok((data + reg, grad))
}

/// The Luce choice negative log-likelihood and its gradient.
pub fn luce_loss_and_grad(params: &MlpParams, batch: &[ChoiceFeatures], l2: f64) -> Result<(f64, MlpParams)> {
    loss_and_grad(params, batch, Objective::Luce, l2)
}

/// Softmax probabilities of each state in a record under `params`.
pub fn choice_probabilities(params: &MlpParams, record: &ChoiceFeatures) -> Result<Vec<f64>> {
    check_record(params, record)?;
    let outs = forward_many(params, &record.states)?;
    let lse = log_sum_exp(&outs);
    Ok(outs.iter().map(|o| (o - lse).exp()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Reshuffle record order every epoch. When off, records are visited in
    /// dataset order and the last batch of an epoch may be short.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 200,
            l2: 1e-5,
            seed: 0,
            optimizer: Optimizer::default(),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::usage("batch size and epochs must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::usage("l2 must be non-negative"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::usage("Adam needs beta in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, params: &mut MlpParams, grad: &MlpParams) {
        self.t += 1;
        let lr = cfg.learning_rate;
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.values_mut().zip(grad.values()) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t);
                let bc2 = 1.0 - beta2.powi(self.t);
                let it = params
                    .values_mut()
                    .zip(grad.values())
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()));
                for ((p, &g), (m, v)) in it {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    /// Mean per-record loss over the full dataset before training.
    pub initial_loss: f64,
    /// Mean per-record loss over the full dataset after training.
    pub final_loss: f64,
    /// Mean per-record mini-batch loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean per-record objective (without regularization) over `records`.
pub fn mean_loss(params: &MlpParams, records: &[ChoiceFeatures], objective: Objective) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::usage("no records"));
    }
    let (loss, _) = loss_and_grad(params, records, objective, 0.0)?;
    Ok(loss / records.len() as f64)
}

/// Mini-batch training from a seeded He initialization.
pub fn train(
    records: &[ChoiceFeatures],
    objective: Objective,
    cfg: &TrainConfig,
    layer_sizes: &[usize],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::usage("cannot train on an empty choice dataset"));
    }
    let mut params = MlpParams::he_init(layer_sizes, cfg.seed)?;
    for r in records {
        check_record(&params, r)?;
    }
    let initial_loss = mean_loss(&params, records, objective)?;

    let mut ws = Vec::new();
    let mut grad = params.same_shape();
    let mut opt = OptimizerState::new(params.num_params());
    let mut shuffle_rng = EpisodeRng::new(cfg.seed, 1);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch: Vec<&ChoiceFeatures> = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &records[i]));
            for g in grad.values_mut() {
                *g = 0.0;
            }
            let w = 1.0 / batch.len() as f64;
            let data = accumulate(&params, &mut ws, &batch, objective, w, &mut grad);
            add_l2(&params, cfg.l2, &mut grad);
            if !data.is_finite() || !grad.values().all(|g| g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: data,
                    learning_rate: cfg.learning_rate,
                });
            }
            epoch_total += data * batch.len() as f64;
            opt.step(cfg, &mut params, &grad);
        }
        epoch_losses.push(epoch_total / records.len() as f64);
    }
    let final_loss = mean_loss(&params, records, objective)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            loss: final_loss,
            learning_rate: cfg.learning_rate,
        });
    }
    Ok(TrainOutcome {
        params,
        initial_loss,
        final_loss,
        epoch_losses,
    })
}

/// Fixed affine input map `z = (x - offset) * scale`, derived from the arena
/// bounds and health range so serving never depends on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: [f64; INPUT_DIM],
    pub scale: [f64; INPUT_DIM],
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            offset: [0.0; INPUT_DIM],
            scale: [1.0; INPUT_DIM],
        }
    }

    pub fn for_env(config: &EnvConfig) -> Self {
        let a = config.arena;
        let pi = std::f64::consts::PI;
        Self {
            offset: [
                0.5 * (a.x_min + a.x_max),
                0.5 * (a.y_min + a.y_max),
                pi,
                0.5 * MAX_HEALTH,
            ],
            scale: [2.0 / a.width(), 2.0 / a.height(), 1.0 / pi, 2.0 / MAX_HEALTH],
        }
    }

    pub fn apply(&self, s: &RobotState) -> [f64; INPUT_DIM] {
        let raw = s.as_array();
        let mut out = [0.0; INPUT_DIM];
        for k in 0..INPUT_DIM {
            out[k] = (raw[k] - self.offset[k]) * self.scale[k];
        }
        out
    }
}

/// A trained scoring network together with its input map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringNet {
    pub params: MlpParams,
    pub normalization: Normalization,
}

impl ScoringNet {
    pub fn score(&self, s: &RobotState) -> Result<f64> {
        forward(&self.params, &self.normalization.apply(s))
    }

    pub fn score_many(&self, states: &[RobotState]) -> Result<Vec<f64>> {
        let inputs: Vec<[f64; INPUT_DIM]> = states.iter().map(|s| self.normalization.apply(s)).collect();
        forward_many(&self.params, &inputs)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            layer_sizes: self.params.layer_sizes.clone(),
            weights: self.params.weights.clone(),
            biases: self.params.biases.clone(),
            normalization: self.normalization,
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(Error::Artifact {
                path: "<model>".into(),
                reason: format!("unsupported model format {} v{}", f.format, f.version),
            });
        }
        let params = MlpParams {
            layer_sizes: f.layer_sizes,
            weights: f.weights,
            biases: f.biases,
        };
        params.validate()?;
        Ok(Self {
            params,
            normalization: f.normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let f: ModelFile = serde_json::from_str(&text)?;
        Self::from_file(f)
    }
}

/// JSON model file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub normalization: Normalization,
}
