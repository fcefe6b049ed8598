#![allow(dead_code)]

use opswitch_core::tinynet::{
    activation_pattern, loss_and_grad, ChoiceFeatures, MlpParams, Objective, DEFAULT_LAYERS, INPUT_DIM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

pub fn random_params(rng: &mut ChaCha8Rng) -> MlpParams {
    let mut p = MlpParams::he_init(&DEFAULT_LAYERS, rng.gen()).unwrap();
    for b in p.biases.iter_mut().flatten() {
        *b = rng.gen_range(-0.3..0.3);
    }
    p
}

pub fn random_batch(rng: &mut ChaCha8Rng, records: usize, max_n: usize) -> Vec<ChoiceFeatures> {
    (0..records)
        .map(|_| {
            let n = rng.gen_range(1..=max_n);
            let states = (0..n)
                .map(|_| {
                    let mut x = [0.0; INPUT_DIM];
                    for v in x.iter_mut() {
                        *v = rng.gen_range(-1.5..1.5);
                    }
                    x
                })
                .collect();
            ChoiceFeatures {
                states,
                chosen: rng.gen_range(0..n),
            }
        })
        .collect()
}

fn patterns(p: &MlpParams, batch: &[ChoiceFeatures]) -> Vec<Vec<bool>> {
    batch
        .iter()
        .flat_map(|r| r.states.iter().map(|x| activation_pattern(p, x).unwrap()))
        .collect()
}

fn shifted(params: &MlpParams, k: usize, by: f64) -> MlpParams {
    let mut p = params.clone();
    p.set_flat(k, params.get_flat(k) + by);
    p
}

/// Fourth-order central differences on every coordinate whose perturbations
/// keep every ReLU on the same side of its kink.
pub fn gradient_check(params: &MlpParams, batch: &[ChoiceFeatures], objective: Objective, l2: f64) -> GradCheck {
    let (_, grad) = loss_and_grad(params, batch, objective, l2).unwrap();
    let base = patterns(params, batch);
    let mut out = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let h = FD_STEP;
    for k in 0..params.num_params() {
        let probes: Vec<MlpParams> = [-2.0, -1.0, 1.0, 2.0].iter().map(|m| shifted(params, k, m * h)).collect();
        if probes.iter().any(|p| patterns(p, batch) != base) {
            out.skipped_kinks += 1;
            continue;
        }
        let l: Vec<f64> = probes
            .iter()
            .map(|p| loss_and_grad(p, batch, objective, l2).unwrap().0)
            .collect();
        let fd = (8.0 * (l[2] - l[1]) - (l[3] - l[0])) / (12.0 * h);
        let g = grad.get_flat(k);
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(REL_FLOOR);
        out.max_rel_err = out.max_rel_err.max(rel);
        out.checked += 1;
    }
    out
}

pub fn instance_rng(i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x9e37_79b9 ^ i)
}

pub struct TdMcComparison {
    pub mean_abs_diff: f64,
    pub mc_range: f64,
    pub cells: usize,
}

impl TdMcComparison {
    pub fn ratio(&self) -> f64 {
        self.mean_abs_diff / self.mc_range
    }
}

/// TD(0) and first-visit Monte-Carlo on the same expert episode stream,
/// compared over every cell the Monte-Carlo pass visited.
pub fn td_vs_mc(episodes: usize, seed: u64) -> TdMcComparison {
    use opswitch_core::expert::ExpertPolicy;
    use opswitch_core::gridnav::EnvConfig;
    use opswitch_core::value::{evaluate_policy_mc, evaluate_policy_td, EvalConfig};

    let env = EnvConfig::default();
    let expert = ExpertPolicy::new(&env).unwrap();
    let eval = EvalConfig::new(&env, episodes, seed);
    let td = evaluate_policy_td(&expert, &env, &eval).unwrap();
    let mc = evaluate_policy_mc(&expert, &env, &eval).unwrap();
    let cells: Vec<usize> = mc.visited_cells().collect();
    let mc_vals: Vec<f64> = cells.iter().map(|&c| mc.value_at(c)).collect();
    let hi = mc_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = mc_vals.iter().copied().fold(f64::INFINITY, f64::min);
    let diff: f64 = cells.iter().map(|&c| (td.value_at(c) - mc.value_at(c)).abs()).sum();
    TdMcComparison {
        mean_abs_diff: diff / cells.len() as f64,
        mc_range: hi - lo,
        cells: cells.len(),
    }
}
