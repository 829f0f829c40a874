//! Adam optimisation of the full network.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{FalnetError, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{init_params, loss_and_grads, predict_batch, FalnetParams, Mode, ModelConfig, Readout};
use crate::tensor::ParamSet;

pub use crate::model::{falnet_backward, falnet_forward};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub window: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub readout: Readout,
    pub forget_bias: f64,
    pub gamma_init: f64,
    /// Trailing share of the training windows kept out of the updates and
    /// scored after every epoch.
    pub val_fraction: f64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 200,
            dropout: 0.2,
            window: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            hidden: 128,
            layers: 2,
            heads: 4,
            readout: Readout::Last,
            forget_bias: 1.0,
            gamma_init: 0.0,
            val_fraction: 0.1,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FalnetError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.window == 0 {
            return bad("batch size and window must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.adam_eps <= 0.0 {
            return bad("Adam epsilon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("validation fraction {} outside [0, 1)", self.val_fraction));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 || !c.is_finite() {
                return bad(format!("clip norm {c} must be positive"));
            }
        }
        self.model_config(1).validate()
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            dropout: self.dropout,
            readout: self.readout,
            forget_bias: self.forget_bias,
            gamma_init: self.gamma_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: FalnetParams,
    pub v: FalnetParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &FalnetParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut FalnetParams, grads: &FalnetParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.num_params() != grads.num_params() || params.num_params() != state.m.num_params() {
        return Err(FalnetError::ShapeMismatch("gradient and parameter layouts differ".into()));
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let g_views = grads.tensors();
    let p_slices = params.tensors_mut();
    let m_slices = state.m.tensors_mut();
    let v_slices = state.v.tensors_mut();
    for (((p, g), m), v) in p_slices.into_iter().zip(&g_views).zip(m_slices).zip(v_slices) {
        for j in 0..p.len() {
            let gj = g.data[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

fn clip(grads: &mut FalnetParams, max_norm: f64) {
    let norm = grads.flatten().iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub wall_seconds: f64,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mae,val_rmse,val_r2\n");
        for e in &self.epochs {
            match &e.val {
                Some(m) => out.push_str(&format!(
                    "{},{:.9},{:.9},{:.9},{:.9}\n",
                    e.epoch, e.train_loss, m.mae, m.rmse, m.r2
                )),
                None => out.push_str(&format!("{},{:.9},,,\n", e.epoch, e.train_loss)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: FalnetParams,
    pub adam: AdamState,
    pub history: TrainHistory,
}

/// Number of trailing windows scored instead of trained on.
pub fn validation_count(n: usize, fraction: f64) -> usize {
    let held = (n as f64 * fraction).floor() as usize;
    if held < 2 || held >= n {
        0
    } else {
        held
    }
}

fn dropout_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Train from a fresh initialisation drawn from `cfg.seed`.
pub fn train(dataset: &WindowedDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(FalnetError::Empty("training dataset".into()));
    }
    cfg.validate()?;
    let params = init_params(&cfg.model_config(dataset.n_features()), cfg.seed)?;
    let adam = AdamState::new(&params);
    train_from(dataset, cfg, params, adam)
}

/// Continue training from the given parameters and optimiser state.
pub fn train_from(
    dataset: &WindowedDataset,
    cfg: &TrainConfig,
    mut params: FalnetParams,
    mut adam: AdamState,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(FalnetError::Empty("training dataset".into()));
    }
    cfg.validate()?;
    let model = cfg.model_config(dataset.n_features());
    let held = validation_count(dataset.len(), cfg.val_fraction);
    let fit_len = dataset.len() - held;
    let val = dataset.subset(fit_len..dataset.len());

    let started = Instant::now();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..fit_len).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<_> = chunk.iter().map(|&i| dataset.inputs[i].clone()).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| dataset.targets[i]).collect();
            let mode = if model.dropout > 0.0 {
                Mode::Train { seed: dropout_seed(cfg.seed, adam.t) }
            } else {
                Mode::Eval
            };
            let (loss, mut grads) = loss_and_grads(&params, &model, &inputs, &targets, mode)?;
            if !loss.is_finite() {
                return Err(FalnetError::NonFinite(format!("training loss at epoch {epoch}")));
            }
            if let Some(c) = cfg.clip_norm {
                clip(&mut grads, c);
            }
            adam_step(&mut params, &grads, &mut adam, cfg)?;
            total += loss * chunk.len() as f64;
        }

        let val_report = if val.is_empty() {
            None
        } else {
            let pred = predict_batch(&params, &model, &val.inputs)?;
            evaluate(&val.targets, &pred).ok()
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / fit_len as f64,
            val: val_report,
        });
    }
    history.wall_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { params, adam, history })
}

/// Eval-mode mean squared error over a dataset.
pub fn dataset_mse(params: &FalnetParams, model: &ModelConfig, dataset: &WindowedDataset) -> Result<f64> {
    let pred = predict_batch(params, model, &dataset.inputs)?;
    Ok(pred
        .iter()
        .zip(&dataset.targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / dataset.len().max(1) as f64)
}
