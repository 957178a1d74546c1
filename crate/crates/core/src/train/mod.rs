//! Mini-batch training with quadratic loss plus L2, the repeat/median
//! protocol, and the finite-difference gradient check.

mod dd;
mod gradcheck;

pub use gradcheck::{gradcheck, relative_error, GradcheckOptions, GradcheckReport};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::metrics::{mae, median_lower, median_lower_index, mse};
use crate::model::{model_backward_acc, model_forward, predict, ModelParams, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "name")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam_default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Sgd => f.write_str("sgd"),
            Optimizer::Adam { .. } => f.write_str("adam"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_lambda: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub repeats: usize,
    /// Initialize forget-gate biases to +1 instead of 0.
    pub forget_bias_init: bool,
    /// Hold out the last 10% of training windows and keep the epoch with the
    /// lowest validation MSE.
    pub holdout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            l2_lambda: 1e-4,
            optimizer: Optimizer::adam_default(),
            seed: 0,
            repeats: 5,
            forget_bias_init: false,
            holdout: false,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::InvalidConfig(format!("`{key}`: expected a boolean, got `{other}`"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 12] = [
        "learning_rate",
        "epochs",
        "batch_size",
        "l2_lambda",
        "optimizer",
        "beta1",
        "beta2",
        "epsilon",
        "seed",
        "repeats",
        "forget_bias_init",
        "holdout",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return bad(format!("l2_lambda must be >= 0, got {}", self.l2_lambda));
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return bad(format!("invalid adam parameters ({beta1}, {beta2}, {epsilon})"));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Returns `false` for keys that do not
    /// belong to the training config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "l2_lambda" => self.l2_lambda = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "repeats" => self.repeats = parse_num(key, value)?,
            "forget_bias_init" => self.forget_bias_init = parse_bool(key, value)?,
            "holdout" => self.holdout = parse_bool(key, value)?,
            "optimizer" => {
                self.optimizer = match value.trim() {
                    "sgd" => Optimizer::Sgd,
                    "adam" => match self.optimizer {
                        a @ Optimizer::Adam { .. } => a,
                        Optimizer::Sgd => Optimizer::adam_default(),
                    },
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "unknown optimizer `{other}` (expected sgd or adam)"
                        )))
                    }
                }
            }
            "beta1" | "beta2" | "epsilon" => {
                let v: f64 = parse_num(key, value)?;
                let (mut b1, mut b2, mut eps) = match self.optimizer {
                    Optimizer::Adam { beta1, beta2, epsilon } => (beta1, beta2, epsilon),
                    Optimizer::Sgd => (0.9, 0.999, 1e-8),
                };
                match key {
                    "beta1" => b1 = v,
                    "beta2" => b2 = v,
                    _ => eps = v,
                }
                // adam hyperparameters only matter when adam is selected
                if let Optimizer::Adam { .. } = self.optimizer {
                    self.optimizer = Optimizer::Adam {
                        beta1: b1,
                        beta2: b2,
                        epsilon: eps,
                    };
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key=value` pairs with every default resolved.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("learning_rate".to_string(), format!("{:?}", self.learning_rate)),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("l2_lambda".into(), format!("{:?}", self.l2_lambda)),
            ("optimizer".into(), self.optimizer.to_string()),
        ];
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            out.push(("beta1".into(), format!("{beta1:?}")));
            out.push(("beta2".into(), format!("{beta2:?}")));
            out.push(("epsilon".into(), format!("{epsilon:?}")));
        }
        out.push(("seed".into(), self.seed.to_string()));
        out.push(("repeats".into(), self.repeats.to_string()));
        out.push(("forget_bias_init".into(), self.forget_bias_init.to_string()));
        out.push(("holdout".into(), self.holdout.to_string()));
        out
    }
}

/// Parses flat `key = value` text; `#` starts a comment.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Sum of squares of every penalized parameter (weights and peepholes).
pub fn l2_norm_sq(params: &ModelParams) -> f64 {
    params
        .tensors()
        .iter()
        .filter(|t| t.kind.penalized())
        .flat_map(|t| t.data.iter())
        .map(|w| w * w)
        .sum()
}

/// Mean squared error over the batch plus `λ·‖w‖²` (biases excluded).
pub fn loss(preds: &[f64], targets: &[f64], params: &ModelParams, lambda: f64) -> f64 {
    let n = preds.len().max(1) as f64;
    let data: f64 = preds.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n;
    data + lambda * l2_norm_sq(params)
}

/// Batch loss and its gradient. Windows are reduced in slice order.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    windows: &[&WindowBatch],
    lambda: f64,
) -> Result<(f64, ModelParams)> {
    let n = windows.len().max(1) as f64;
    let mut grads = ModelParams::zeros(spec);
    let mut sq = 0.0;
    for w in windows {
        let (y, trace) = model_forward(spec, params, &w.inputs)?;
        let r = y - w.target;
        sq += r * r;
        model_backward_acc(spec, params, &trace, 2.0 * r / n, &mut grads)?;
    }
    let mut l = sq / n;
    if lambda > 0.0 {
        l += lambda * l2_norm_sq(params);
        for (g, p) in grads.tensors_mut().into_iter().zip(params.tensors()) {
            if p.kind.penalized() {
                for (gi, pi) in g.data.iter_mut().zip(p.data) {
                    *gi += 2.0 * lambda * pi;
                }
            }
        }
    }
    Ok((l, grads))
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
            Optimizer::Sgd => (Vec::new(), Vec::new()),
        };
        OptimizerState { kind, lr, step: 0, m, v }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let mut idx = 0;
        for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (pi, gi) in p.data.iter_mut().zip(g.data) {
                match self.kind {
                    Optimizer::Sgd => *pi -= self.lr * gi,
                    Optimizer::Adam { beta1, beta2, epsilon } => {
                        let m = &mut self.m[idx];
                        let v = &mut self.v[idx];
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                        let m_hat = *m / (1.0 - beta1.powi(self.step as i32));
                        let v_hat = *v / (1.0 - beta2.powi(self.step as i32));
                        *pi -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
                idx += 1;
            }
        }
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    /// Mean training loss (data + penalty) per epoch.
    pub loss_curve: Vec<f64>,
    /// Validation MSE per epoch when holding out.
    pub val_curve: Vec<f64>,
    pub initial_params: ModelParams,
    pub params: ModelParams,
    /// `(MAE, MSE)` on the test windows, filled in by [`train_repeated`].
    pub test: Option<(f64, f64)>,
}

impl RunResult {
    pub fn first_loss(&self) -> Option<f64> {
        self.loss_curve.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().copied()
    }
}

pub fn evaluate(spec: &ModelSpec, params: &ModelParams, windows: &[WindowBatch]) -> Result<Vec<(f64, f64)>> {
    windows
        .iter()
        .map(|w| predict(spec, params, &w.inputs).map(|y| (y, w.target)))
        .collect()
}

fn split_metrics(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Ok((mae(&p, &t)?, mse(&p, &t)?))
}

/// One deterministic run: initialization, shuffling and accumulation order
/// all derive from `seed`.
pub fn train_once(spec: &ModelSpec, config: &TrainConfig, windows: &[WindowBatch], seed: u64) -> Result<RunResult> {
    spec.validate()?;
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::InvalidConfig("no training windows".into()));
    }

    let (train, val) = if config.holdout {
        let n_val = windows.len() / 10;
        if n_val == 0 || n_val == windows.len() {
            return Err(Error::InvalidConfig(format!(
                "holdout needs at least 10 training windows, got {}",
                windows.len()
            )));
        }
        windows.split_at(windows.len() - n_val)
    } else {
        (windows, &windows[..0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forget_bias = if config.forget_bias_init { 1.0 } else { 0.0 };
    let initial = ModelParams::init(spec, forget_bias, &mut rng);
    let mut params = initial.clone();
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, params.count());

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut val_curve = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&WindowBatch> = chunk.iter().map(|&i| &train[i]).collect();
            let (l, grads) = loss_and_grad(spec, &params, &batch, config.l2_lambda)?;
            if !l.is_finite() {
                return Err(Error::Diverged { epoch, loss: l });
            }
            total += l * batch.len() as f64;
            opt.apply(&mut params, &grads);
        }
        let epoch_loss = total / train.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: epoch_loss });
        }
        loss_curve.push(epoch_loss);

        if !val.is_empty() {
            let (_, val_mse) = split_metrics(&evaluate(spec, &params, val)?)?;
            val_curve.push(val_mse);
            if best.as_ref().map_or(true, |(b, _)| val_mse < *b) {
                best = Some((val_mse, params.clone()));
            }
        }
    }

    if let Some((_, p)) = best {
        params = p;
    }
    Ok(RunResult {
        seed,
        loss_curve,
        val_curve,
        initial_params: initial,
        params,
        test: None,
    })
}

#[derive(Clone, Debug)]
pub struct RepeatedResult {
    pub runs: Vec<RunResult>,
    pub median_mae: Option<f64>,
    pub median_mse: Option<f64>,
    /// Repeat whose test MAE is the reported median.
    pub median_run: Option<usize>,
}

/// Runs `config.repeats` independent trainings with seeds `seed + r`, on at
/// most `threads` threads, and reports median test MAE and MSE.
pub fn train_repeated(
    spec: &ModelSpec,
    config: &TrainConfig,
    train: &[WindowBatch],
    test: Option<&[WindowBatch]>,
    threads: usize,
) -> Result<RepeatedResult> {
    config.validate()?;
    let seeds: Vec<u64> = (0..config.repeats as u64).map(|r| config.seed.wrapping_add(r)).collect();
    let threads = threads.clamp(1, seeds.len());

    let run_one = |seed: u64| -> Result<RunResult> {
        let mut run = train_once(spec, config, train, seed)?;
        if let Some(test) = test {
            run.test = Some(split_metrics(&evaluate(spec, &run.params, test)?)?);
        }
        Ok(run)
    };

    let mut results: Vec<Option<Result<RunResult>>> = (0..seeds.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, &seed) in results.iter_mut().zip(&seeds) {
            *slot = Some(run_one(seed));
        }
    } else {
        for group in seeds.chunks(threads).zip(results.chunks_mut(threads)) {
            let (group_seeds, group_slots) = group;
            std::thread::scope(|s| {
                let handles: Vec<_> = group_seeds.iter().map(|&seed| s.spawn(move || run_one(seed))).collect();
                for (slot, h) in group_slots.iter_mut().zip(handles) {
                    *slot = Some(h.join().expect("training thread panicked"));
                }
            });
        }
    }
    let runs = results
        .into_iter()
        .map(|r| r.expect("every repeat ran"))
        .collect::<Result<Vec<_>>>()?;

    let maes: Vec<f64> = runs.iter().filter_map(|r| r.test.map(|t| t.0)).collect();
    let mses: Vec<f64> = runs.iter().filter_map(|r| r.test.map(|t| t.1)).collect();
    Ok(RepeatedResult {
        median_mae: median_lower(&maes),
        median_mse: median_lower(&mses),
        median_run: median_lower_index(&maes),
        runs,
    })
}

#[cfg(test)]
mod tests;
