use rand::seq::SliceRandom;

use super::{Mode, UtilityNet};
use crate::error::{Error, Result};
use crate::seed;

/// Borrowed samples: `inputs` holds `targets.len()` consecutive feature
/// tensors. Targets are raw oracle scores.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    pub inputs: &'a [f32],
    pub targets: &'a [f32],
}

impl SampleView<'_> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Eval-mode mean squared error before the first update.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    /// Per epoch: mean squared error of the train-mode passes.
    pub train_loss: Vec<f64>,
    /// Per epoch: eval-mode mean squared error on the validation set.
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept; 0 means the initial parameters.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }
}

const EVAL_CHUNK: usize = 256;

/// Mini-batch ADAM on the summed squared error with early stopping on the
/// validation loss. Losses are reported per sample in normalized target
/// units, after the log transform when `log_targets` is set. Leaves the
/// best-validation parameters in `net`.
pub fn train(net: &mut UtilityNet<f32>, train: SampleView<'_>, val: SampleView<'_>, patience: usize) -> Result<TrainReport> {
    let len = net.config().input_len();
    for v in [&train, &val] {
        if v.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if v.inputs.len() != v.len() * len {
            return Err(Error::LengthMismatch(v.len() * len, v.inputs.len()));
        }
    }
    let cfg = net.config().clone();
    let lift = |v: &SampleView<'_>| -> Result<Vec<f64>> {
        v.targets
            .iter()
            .map(|&t| match (cfg.log_targets, t as f64) {
                (false, y) => Ok(y),
                (true, y) if y >= 0.0 => Ok(y.ln_1p()),
                (true, y) => Err(Error::InvalidParameter(format!("log_targets needs nonnegative targets, got {y}"))),
            })
            .collect()
    };
    let (raw_train, raw_val) = (lift(&train)?, lift(&val)?);
    let (shift, scale) = if cfg.normalize_targets {
        let n = raw_train.len() as f64;
        let mean = raw_train.iter().sum::<f64>() / n;
        let var = raw_train.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        (mean, if sd > 1e-12 { sd } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    net.set_target_normalization(shift, scale)?;
    net.reset_optimizer();
    let norm = |raw: &[f64]| raw.iter().map(|t| (t - shift) / scale).collect::<Vec<f64>>();
    let ytrain = norm(&raw_train);
    let yval = norm(&raw_val);

    let mut rng = seed::rng(seed::substream(cfg.seed, "train"));
    let mut report = TrainReport {
        initial_train_loss: mse(net, train.inputs, &ytrain)?,
        initial_val_loss: mse(net, val.inputs, &yval)?,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: 0.0,
    };
    report.best_val_loss = report.initial_val_loss;
    let mut best = net.clone();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut xb = Vec::with_capacity(cfg.batch_size * len);
    let mut yb = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&train.inputs[i * len..(i + 1) * len]);
                yb.push(ytrain[i]);
            }
            let lg = net.loss_and_grad(&xb, &yb, Mode::Train, &mut rng)?;
            total += lg.data_loss;
            if let Some(stats) = &lg.stats {
                net.update_running_stats(stats);
            }
            net.adam_step(&lg.grads)?;
        }
        report.train_loss.push(total / train.len() as f64);
        let v = mse(net, val.inputs, &yval)?;
        report.val_loss.push(v);
        if v < report.best_val_loss {
            report.best_val_loss = v;
            report.best_epoch = epoch;
            best.clone_from(net);
            stale = 0;
        } else {
            stale += 1;
            if stale > patience {
                break;
            }
        }
    }
    *net = best;
    Ok(report)
}

/// Eval-mode mean squared error against normalized targets.
pub fn mse(net: &UtilityNet<f32>, inputs: &[f32], targets: &[f64]) -> Result<f64> {
    let len = net.config().input_len();
    let mut rng = seed::rng(0);
    let mut s = 0.0;
    for (k, xs) in inputs.chunks(EVAL_CHUNK * len).enumerate() {
        let out = net.forward(xs, Mode::Eval, &mut rng)?;
        for (j, f) in out.iter().enumerate() {
            let e = *f as f64 - targets[k * EVAL_CHUNK + j];
            s += e * e;
        }
    }
    Ok(s / targets.len() as f64)
}
