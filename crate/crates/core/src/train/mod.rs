//! Optimizer, training and evaluation loops, and checkpoint files.

mod adam;
pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};

use crate::data::{Dataset, SeriesFrame, WindowSet};
use crate::error::{Error, Result};
use crate::model::{variate_major, BatchOutput, DecompModel};
use crate::objective::{total_loss, LossWeights, MetricAccumulator, Metrics};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Stream of the ChaCha generator used for initialization; shuffling uses
/// its own stream so both stay reproducible independently.
pub const INIT_STREAM: u64 = 0;
pub const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Clip gradients to this global L2 norm when set.
    pub clip_norm: Option<f64>,
    pub weights: LossWeights,
    pub seed: u64,
    /// Windows per evaluation forward pass.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 1,
            adam: AdamConfig::default(),
            clip_norm: None,
            weights: LossWeights::default(),
            seed: 0,
            eval_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config { key: key.into(), msg: msg.into() });
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.eval_batch == 0 {
            return bad("eval_batch", "must be at least 1");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad("clip_norm", "must be finite and > 0");
            }
        }
        self.adam.validate()?;
        self.weights.validate()
    }
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Input `[B, M, T]` and target `[B, M, H]` tensors for some windows.
pub fn batch_tensors(frame: &SeriesFrame, windows: &WindowSet, idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let m = frame.n_vars();
    let inputs: Vec<&[f64]> = idx.iter().map(|&i| windows.input(frame, i)).collect();
    let targets: Vec<&[f64]> = idx.iter().map(|&i| windows.target(frame, i)).collect();
    Ok((
        variate_major(&inputs, windows.lookback, m)?,
        variate_major(&targets, windows.horizon, m)?,
    ))
}

/// Forecasts for the listed windows, row-major `[H, M]` per window.
pub fn predict(
    model: &DecompModel,
    params: &ParamStore,
    frame: &SeriesFrame,
    windows: &WindowSet,
    idx: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let bound = params.bind(false);
    let (x, _) = batch_tensors(frame, windows, idx)?;
    let out = model.forward_batch(&bound, &x)?;
    Ok(time_major(&out, idx.len(), frame.n_vars(), windows.horizon))
}

fn time_major(out: &BatchOutput, b: usize, m: usize, h: usize) -> Vec<Vec<f64>> {
    let f = out.forecast.data();
    (0..b)
        .map(|w| {
            let mut rows = Vec::with_capacity(h * m);
            for t in 0..h {
                rows.extend((0..m).map(|j| f[(w * m + j) * h + t]));
            }
            rows
        })
        .collect()
}

/// MSE and MAE over every window of `windows`, in the frame's units. Empty
/// sets give NaN metrics.
pub fn evaluate(
    model: &DecompModel,
    params: &ParamStore,
    frame: &SeriesFrame,
    windows: &WindowSet,
    eval_batch: usize,
) -> Result<Metrics> {
    let bound = params.bind(false);
    let mut acc = MetricAccumulator::default();
    let all: Vec<usize> = (0..windows.len()).collect();
    for chunk in all.chunks(eval_batch.max(1)) {
        let (x, y) = batch_tensors(frame, windows, chunk)?;
        let out = model.forward_batch(&bound, &x)?;
        acc.add(out.forecast.data(), y.data());
    }
    Ok(acc.finish())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

/// Everything needed to resume or to reproduce a model.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParamStore,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    /// Epochs completed.
    pub epoch: usize,
}

impl TrainState {
    pub fn init(model: &DecompModel, config: &TrainConfig) -> Result<TrainState> {
        let params = model.init(&mut rng(config.seed, INIT_STREAM))?;
        let adam = Adam::new(config.adam, &params);
        Ok(TrainState {
            params,
            adam,
            rng: rng(config.seed, SHUFFLE_STREAM),
            epoch: 0,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// State after the epoch with the lowest validation MSE (the last epoch
    /// when there is no validation data).
    pub best: TrainState,
    pub best_epoch: usize,
    /// State after the final epoch.
    pub last: TrainState,
}

/// Loss of one minibatch; its gradients accumulate on the leaves of `bound`.
pub fn batch_gradients(
    model: &DecompModel,
    bound: &Bound<'_>,
    x: &Tensor,
    y: &Tensor,
    weights: LossWeights,
) -> Result<f64> {
    let out = model.forward_batch(bound, x)?;
    let c = &out.components;
    let parts = total_loss(&out.forecast, y, [&c[0], &c[1], &c[2]], &out.embedded, weights)?;
    parts.total.backward()?;
    Ok(parts.total.item())
}

/// Runs `config.epochs` epochs of minibatch Adam over the training windows,
/// scoring the validation windows after each one. `on_epoch` sees every
/// history row as it is produced.
pub fn train(
    model: &DecompModel,
    data: &Dataset,
    config: &TrainConfig,
    mut state: TrainState,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("the training split has no windows".into()));
    }
    let frame = &data.frame;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, TrainState)> = None;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for _ in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut state.rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let (x, y) = batch_tensors(frame, &data.train, idx)?;
            let bound = state.params.bind(true);
            let loss = batch_gradients(model, &bound, &x, &y, config.weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {}", state.epoch + 1)));
            }
            let mut grads = bound.grads();
            drop(bound);
            if let Some(c) = config.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            state.adam.step(&mut state.params, &grads)?;
            loss_sum += loss * idx.len() as f64;
        }
        state.epoch += 1;

        let val = evaluate(model, &state.params, frame, &data.val, config.eval_batch)?;
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss: loss_sum / order.len() as f64,
            val_mse: val.mse,
            val_mae: val.mae,
        };
        on_epoch(&record);
        history.push(record);

        let better = match &best {
            None => true,
            Some((prev, _, _)) => val.mse.is_nan() || val.mse < *prev,
        };
        if better {
            best = Some((val.mse, state.epoch, state.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best,
        best_epoch,
        last: state,
    })
}

/// Metrics file body with header `epoch,train_loss,val_mse,val_mae`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_mse,val_mae\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_mse, r.val_mae));
    }
    s
}

