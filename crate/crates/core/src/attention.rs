//! Multi-head scaled dot-product self-attention with a gated residual,
//! `out = γ · MultiHead(X) + X`.
//!
//! Heads are contiguous column blocks of the full `Q`, `K`, `V` projections.
//! There is no positional encoding and no mask.

use rand::Rng;

use crate::error::{FalnetError, Result};
use crate::lstm::{apply_mask, dropout_mask};
use crate::tensor::{matmul, matmul_nt, matmul_tn, softmax_rows, Matrix, ParamSet, TensorView};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub d_model: usize,
    pub heads: usize,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub gamma: f64,
}

impl AttentionParams {
    pub fn zeros(d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(FalnetError::InvalidConfig(format!(
                "model width {d_model} is not divisible by {heads} heads"
            )));
        }
        let w = || Matrix::zeros(d_model, d_model);
        Ok(Self {
            d_model,
            heads,
            w_q: w(),
            w_k: w(),
            w_v: w(),
            w_o: w(),
            gamma: 0.0,
        })
    }

    /// Glorot-uniform projections; `gamma` starts at `gamma_init`.
    pub fn init<R: Rng + ?Sized>(d_model: usize, heads: usize, gamma_init: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(d_model, heads)?;
        let bound = (6.0 / (2 * d_model) as f64).sqrt();
        for w in [&mut p.w_q, &mut p.w_k, &mut p.w_v, &mut p.w_o] {
            for v in w.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        p.gamma = gamma_init;
        Ok(p)
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }
}

impl ParamSet for AttentionParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            TensorView { name: "w_q".into(), shape: self.w_q.shape(), data: self.w_q.data() },
            TensorView { name: "w_k".into(), shape: self.w_k.shape(), data: self.w_k.data() },
            TensorView { name: "w_v".into(), shape: self.w_v.shape(), data: self.w_v.data() },
            TensorView { name: "w_o".into(), shape: self.w_o.shape(), data: self.w_o.data() },
            TensorView { name: "gamma".into(), shape: (1, 1), data: std::slice::from_ref(&self.gamma) },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_q.data_mut(),
            self.w_k.data_mut(),
            self.w_v.data_mut(),
            self.w_o.data_mut(),
            std::slice::from_mut(&mut self.gamma),
        ]
    }
}

/// `softmax(q·kᵀ/√d_k)·v`, returning the output and the weight matrix.
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(Matrix, Matrix)> {
    if q.shape() != k.shape() || k.rows() != v.rows() {
        return Err(FalnetError::ShapeMismatch(format!(
            "q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok(attend(q, k, v))
}

fn attend(q: &Matrix, k: &Matrix, v: &Matrix) -> (Matrix, Matrix) {
    let mut scores = matmul_nt(q, k);
    scores.scale(1.0 / (q.cols() as f64).sqrt());
    let weights = softmax_rows(&scores);
    (matmul(&weights, v), weights)
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub x: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Per-head `[T × T]` attention weights.
    pub weights: Vec<Matrix>,
    /// Concatenated head outputs, before `W^O`.
    pub concat: Matrix,
    /// `MultiHead(X)` after dropout, i.e. the term scaled by γ.
    pub multi_head: Matrix,
    pub mask: Option<Matrix>,
    pub gamma: f64,
}

impl AttentionCache {
    /// Head-averaged attention weights.
    pub fn mean_weights(&self) -> Matrix {
        let mut acc = self.weights[0].clone();
        for w in &self.weights[1..] {
            acc.add_assign(w);
        }
        acc.scale(1.0 / self.weights.len() as f64);
        acc
    }
}

pub fn multi_head_forward<R: Rng + ?Sized>(
    params: &AttentionParams,
    x: &Matrix,
    dropout_rate: f64,
    train_mode: bool,
    rng: &mut R,
) -> Result<(Matrix, AttentionCache)> {
    let d = params.d_model;
    if params.heads == 0 || !d.is_multiple_of(params.heads) {
        return Err(FalnetError::InvalidConfig(format!(
            "model width {d} is not divisible by {} heads",
            params.heads
        )));
    }
    if x.cols() != d {
        return Err(FalnetError::ShapeMismatch(format!(
            "attention input width {}, expected {d}",
            x.cols()
        )));
    }
    let dk = params.d_k();
    let q = matmul(x, &params.w_q);
    let k = matmul(x, &params.w_k);
    let v = matmul(x, &params.w_v);

    let mut concat = Matrix::zeros(x.rows(), d);
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let s = h * dk;
        let (out, w) = attend(&q.col_slice(s, dk), &k.col_slice(s, dk), &v.col_slice(s, dk));
        concat.set_col_slice(s, &out);
        weights.push(w);
    }
    let mut multi_head = matmul(&concat, &params.w_o);
    let mask = (train_mode && dropout_rate > 0.0)
        .then(|| dropout_mask(multi_head.rows(), d, dropout_rate, rng));
    if let Some(m) = &mask {
        apply_mask(&mut multi_head, m);
    }

    let mut out = multi_head.clone();
    out.scale(params.gamma);
    out.add_assign(x);

    let cache = AttentionCache {
        x: x.clone(),
        q,
        k,
        v,
        weights,
        concat,
        multi_head,
        mask,
        gamma: params.gamma,
    };
    Ok((out, cache))
}

/// Gradients of [`multi_head_forward`] given `∂L/∂out`.
pub fn attention_backward(
    params: &AttentionParams,
    cache: &AttentionCache,
    grad_out: &Matrix,
) -> Result<(AttentionParams, Matrix)> {
    if grad_out.shape() != cache.x.shape() {
        return Err(FalnetError::ShapeMismatch(format!(
            "upstream gradient {:?}, expected {:?}",
            grad_out.shape(),
            cache.x.shape()
        )));
    }
    let dk = params.d_k();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut grads = AttentionParams::zeros(params.d_model, params.heads)?;

    grads.gamma = grad_out.dot(&cache.multi_head);
    let mut d_multi = grad_out.clone();
    d_multi.scale(params.gamma);
    if let Some(m) = &cache.mask {
        apply_mask(&mut d_multi, m);
    }
    grads.w_o = matmul_tn(&cache.concat, &d_multi);
    let d_concat = matmul_nt(&d_multi, &params.w_o);

    let t = cache.x.rows();
    let mut dq = Matrix::zeros(t, params.d_model);
    let mut dk_full = Matrix::zeros(t, params.d_model);
    let mut dv = Matrix::zeros(t, params.d_model);
    for (h, a) in cache.weights.iter().enumerate() {
        let s = h * dk;
        let d_head = d_concat.col_slice(s, dk);
        let qh = cache.q.col_slice(s, dk);
        let kh = cache.k.col_slice(s, dk);
        let vh = cache.v.col_slice(s, dk);

        let da = matmul_nt(&d_head, &vh);
        dv.set_col_slice(s, &matmul_tn(a, &d_head));

        // softmax Jacobian, row by row
        let mut ds = Matrix::zeros(t, t);
        for i in 0..t {
            let inner: f64 = a.row(i).iter().zip(da.row(i)).map(|(p, g)| p * g).sum();
            for j in 0..t {
                ds.set(i, j, a.get(i, j) * (da.get(i, j) - inner) * scale);
            }
        }
        dq.set_col_slice(s, &matmul(&ds, &kh));
        dk_full.set_col_slice(s, &matmul_tn(&ds, &qh));
    }

    grads.w_q = matmul_tn(&cache.x, &dq);
    grads.w_k = matmul_tn(&cache.x, &dk_full);
    grads.w_v = matmul_tn(&cache.x, &dv);

    let mut grad_x = grad_out.clone();
    grad_x.add_assign(&matmul_nt(&dq, &params.w_q));
    grad_x.add_assign(&matmul_nt(&dk_full, &params.w_k));
    grad_x.add_assign(&matmul_nt(&dv, &params.w_v));
    Ok((grads, grad_x))
}
