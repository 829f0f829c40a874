//! The full network: stacked LSTM → multi-head attention → linear head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_backward, multi_head_forward, AttentionCache, AttentionParams};
use crate::error::{FalnetError, Result};
use crate::lstm::{stack_backward, stack_forward, LstmLayerParams, StackCache};
use crate::tensor::{Matrix, ParamSet, TensorView};

/// Which attention output rows feed the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Last,
    Mean,
}

impl std::str::FromStr for Readout {
    type Err = FalnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Readout::Last),
            "mean" => Ok(Readout::Mean),
            other => Err(FalnetError::InvalidConfig(format!("unknown readout `{other}`"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub readout: Readout,
    pub forget_bias: f64,
    pub gamma_init: f64,
}

impl ModelConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: 128,
            layers: 2,
            heads: 4,
            dropout: 0.2,
            readout: Readout::Last,
            forget_bias: 1.0,
            gamma_init: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.heads == 0 {
            return Err(FalnetError::InvalidConfig(
                "input width, hidden size, layers and heads must be positive".into(),
            ));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(FalnetError::InvalidConfig(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(FalnetError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalnetParams {
    pub lstm_layers: Vec<LstmLayerParams>,
    pub attention: AttentionParams,
    /// `[hidden × 1]`.
    pub head_w: Matrix,
    pub head_b: f64,
}

impl FalnetParams {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut lstm_layers = Vec::with_capacity(cfg.layers);
        let mut width = cfg.input_dim;
        for _ in 0..cfg.layers {
            lstm_layers.push(LstmLayerParams::zeros(width, cfg.hidden));
            width = cfg.hidden;
        }
        Ok(Self {
            lstm_layers,
            attention: AttentionParams::zeros(cfg.hidden, cfg.heads)?,
            head_w: Matrix::zeros(cfg.hidden, 1),
            head_b: 0.0,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }
}

/// Deterministic initialisation from `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<FalnetParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lstm_layers = Vec::with_capacity(cfg.layers);
    let mut width = cfg.input_dim;
    for _ in 0..cfg.layers {
        lstm_layers.push(LstmLayerParams::init(width, cfg.hidden, cfg.forget_bias, &mut rng));
        width = cfg.hidden;
    }
    let attention = AttentionParams::init(cfg.hidden, cfg.heads, cfg.gamma_init, &mut rng)?;
    let bound = (6.0 / (cfg.hidden + 1) as f64).sqrt();
    let mut head_w = Matrix::zeros(cfg.hidden, 1);
    for v in head_w.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    Ok(FalnetParams {
        lstm_layers,
        attention,
        head_w,
        head_b: 0.0,
    })
}

impl ParamSet for FalnetParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.lstm_layers.iter().enumerate() {
            out.extend(layer.tensors().into_iter().map(|mut t| {
                t.name = format!("lstm.{l}.{}", t.name);
                t
            }));
        }
        out.extend(self.attention.tensors().into_iter().map(|mut t| {
            t.name = format!("attention.{}", t.name);
            t
        }));
        out.push(TensorView {
            name: "head.w".into(),
            shape: self.head_w.shape(),
            data: self.head_w.data(),
        });
        out.push(TensorView {
            name: "head.b".into(),
            shape: (1, 1),
            data: std::slice::from_ref(&self.head_b),
        });
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.lstm_layers {
            out.extend(layer.tensors_mut());
        }
        out.extend(self.attention.tensors_mut());
        out.push(self.head_w.data_mut());
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub lstm: StackCache,
    pub attention: AttentionCache,
    pub readout: Vec<f64>,
    pub steps: usize,
}

fn check_window(params: &FalnetParams, window: &Matrix) -> Result<()> {
    let input = params.lstm_layers.first().map_or(0, |l| l.input);
    if window.cols() != input {
        return Err(FalnetError::ShapeMismatch(format!(
            "window has {} features, model expects {input}",
            window.cols()
        )));
    }
    if window.rows() == 0 {
        return Err(FalnetError::Empty("input window".into()));
    }
    Ok(())
}

/// One-step prediction for a `[T × features]` window.
pub fn falnet_forward<R: Rng + ?Sized>(
    params: &FalnetParams,
    cfg: &ModelConfig,
    window: &Matrix,
    train_mode: bool,
    rng: &mut R,
) -> Result<(f64, ForwardCache)> {
    check_window(params, window)?;
    let (hidden_seq, lstm) = stack_forward(&params.lstm_layers, window, cfg.dropout, train_mode, rng)?;
    let (att, attention) = multi_head_forward(&params.attention, &hidden_seq, cfg.dropout, train_mode, rng)?;
    let steps = att.rows();
    let readout = match cfg.readout {
        Readout::Last => att.row(steps - 1).to_vec(),
        Readout::Mean => {
            let mut acc = vec![0.0; att.cols()];
            for r in 0..steps {
                for (a, v) in acc.iter_mut().zip(att.row(r)) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= steps as f64);
            acc
        }
    };
    let prediction = readout
        .iter()
        .zip(params.head_w.data())
        .map(|(r, w)| r * w)
        .sum::<f64>()
        + params.head_b;
    Ok((
        prediction,
        ForwardCache {
            lstm,
            attention,
            readout,
            steps,
        },
    ))
}

/// Gradients of the prediction scaled by `d_prediction`.
pub fn falnet_backward(
    params: &FalnetParams,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    d_prediction: f64,
) -> Result<FalnetParams> {
    let d = params.head_w.rows();
    let mut head_w = Matrix::zeros(d, 1);
    for (g, r) in head_w.data_mut().iter_mut().zip(&cache.readout) {
        *g = r * d_prediction;
    }
    let d_readout: Vec<f64> = params.head_w.data().iter().map(|w| w * d_prediction).collect();
    let mut d_att = Matrix::zeros(cache.steps, d);
    match cfg.readout {
        Readout::Last => d_att.row_mut(cache.steps - 1).copy_from_slice(&d_readout),
        Readout::Mean => {
            let s = 1.0 / cache.steps as f64;
            for r in 0..cache.steps {
                for (g, v) in d_att.row_mut(r).iter_mut().zip(&d_readout) {
                    *g = v * s;
                }
            }
        }
    }
    let (attention, d_hidden) = attention_backward(&params.attention, &cache.attention, &d_att)?;
    let (lstm_layers, _) = stack_backward(&params.lstm_layers, &cache.lstm, &d_hidden)?;
    Ok(FalnetParams {
        lstm_layers,
        attention,
        head_w,
        head_b: d_prediction,
    })
}

/// Whether dropout is active; in train mode every sample draws its masks
/// from its own stream of a ChaCha generator seeded with `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

fn sample_rng(mode: Mode, index: usize) -> (bool, ChaCha8Rng) {
    match mode {
        Mode::Eval => (false, ChaCha8Rng::seed_from_u64(0)),
        Mode::Train { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            (true, rng)
        }
    }
}

/// Mean squared error over the batch and its exact gradient.
///
/// Samples run in parallel; their gradients are reduced in sample order so
/// the result does not depend on thread scheduling.
pub fn loss_and_grads(
    params: &FalnetParams,
    cfg: &ModelConfig,
    inputs: &[Matrix],
    targets: &[f64],
    mode: Mode,
) -> Result<(f64, FalnetParams)> {
    if inputs.len() != targets.len() {
        return Err(FalnetError::ShapeMismatch(format!(
            "{} windows vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(FalnetError::Empty("batch".into()));
    }
    let per_sample: Vec<Result<(f64, FalnetParams)>> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .enumerate()
        .map(|(i, (window, &target))| {
            let (train, mut rng) = sample_rng(mode, i);
            let (pred, cache) = falnet_forward(params, cfg, window, train, &mut rng)?;
            let err = pred - target;
            let grads = falnet_backward(params, cfg, &cache, 2.0 * err)?;
            Ok((err * err, grads))
        })
        .collect();

    let scale = 1.0 / inputs.len() as f64;
    let mut loss = 0.0;
    let mut total = params.zeros_like();
    for item in per_sample {
        let (sq, g) = item?;
        loss += sq;
        total.add_scaled(&g, 1.0);
    }
    for t in total.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, total))
}

/// Forward pass with dropout disabled.
pub fn forward_eval(params: &FalnetParams, cfg: &ModelConfig, window: &Matrix) -> Result<(f64, ForwardCache)> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    falnet_forward(params, cfg, window, false, &mut unused)
}

/// Eval-mode predictions, one per window.
pub fn predict_batch(params: &FalnetParams, cfg: &ModelConfig, inputs: &[Matrix]) -> Result<Vec<f64>> {
    inputs
        .par_iter()
        .map(|w| forward_eval(params, cfg, w).map(|(p, _)| p))
        .collect()
}
