//! Model fixtures shared by the model tests and the acceptance suite.

use std::collections::BTreeMap;

use decomp_ssm::model::{DecompModel, ModelConfig};
use decomp_ssm::objective::{total_loss, LossWeights};
use decomp_ssm::params::ParamStore;
use decomp_ssm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::rel_err;

/// Fresh parameters with every entry perturbed, so that zero-initialized
/// layers (step predictor output, head output, α) are exercised too.
pub fn randomized_params(model: &DecompModel, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = model.init(&mut rng).unwrap();
    for p in store.iter_mut() {
        let spread = if p.name.ends_with("log_delta") { 0.5 } else { 0.2 };
        for v in p.value.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += spread * z;
        }
        if p.name.ends_with("log_delta") {
            // keep timescales in a range where the scan carries signal over 16 steps
            for v in p.value.iter_mut() {
                *v = v.clamp(-4.0, -0.5);
            }
        }
    }
    store
}

pub fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Parameter group used when reporting gradient errors.
pub fn group_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts[..] {
        ["embed", _] => "embedding".into(),
        [_, "pos_emb"] => "pos_emb".into(),
        [_, "asp", _] => "asp".into(),
        [_, "gate", _] => "gate".into(),
        [_, "mix"] => "mix".into(),
        [_, dir @ ("fwd" | "bwd"), t] => {
            let kind = match t {
                "lambda_log_neg_re" | "lambda_im" => "lambda",
                "b_re" | "b_im" => "B",
                "c_re" | "c_im" => "C",
                "dmat" => "D",
                "log_delta" => "log_delta",
                other => other,
            };
            format!("{kind}.{dir}")
        }
        ["gcrm", "w_g"] => "W_g".into(),
        ["gcrm", "alpha"] => "alpha".into(),
        ["head", _] => "head".into(),
        ["shared", _] => "shared".into(),
        _ => name.into(),
    }
}

pub fn batch_loss(model: &DecompModel, store: &ParamStore, x: &Tensor, y: &Tensor, w: LossWeights, grad: bool) -> (f64, Option<Vec<Vec<f64>>>) {
    let bound = store.bind(grad);
    let out = model.forward_batch(&bound, x).unwrap();
    let c = &out.components;
    let parts = total_loss(&out.forecast, y, [&c[0], &c[1], &c[2]], &out.embedded, w).unwrap();
    if grad {
        parts.total.backward().unwrap();
        (parts.total.item(), Some(bound.grads()))
    } else {
        (parts.total.item(), None)
    }
}

/// Worst relative error between backprop and central differences, per
/// parameter group, for the total loss on a two-window batch.
pub fn gradient_errors(config: ModelConfig, seed: u64, step: f64) -> BTreeMap<String, f64> {
    let model = DecompModel::new(config.clone()).unwrap();
    let mut store = randomized_params(&model, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (b, m, t, h) = (2, config.n_vars, config.lookback, config.horizon);
    let x = Tensor::new(&[b, m, t], random_values(&mut rng, b * m * t)).unwrap();
    let y = Tensor::new(&[b, m, h], random_values(&mut rng, b * m * h)).unwrap();
    let w = LossWeights::default();

    let (_, grads) = batch_loss(&model, &store, &x, &y, w, true);
    let grads = grads.unwrap();
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        let n = store.get(name).unwrap().value.len();
        for j in 0..n {
            let orig = store.get(name).unwrap().value[j];
            store.get_mut(name).unwrap().value[j] = orig + step;
            let up = batch_loss(&model, &store, &x, &y, w, false).0;
            store.get_mut(name).unwrap().value[j] = orig - step;
            let down = batch_loss(&model, &store, &x, &y, w, false).0;
            store.get_mut(name).unwrap().value[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let e = rel_err(grads[i][j], numeric);
            let slot = worst.entry(group_of(name)).or_insert(0.0);
            *slot = slot.max(e);
        }
    }
    worst
}
