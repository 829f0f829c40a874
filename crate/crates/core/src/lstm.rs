//! Stacked LSTM encoder with full backpropagation through time.
//!
//! Each gate reads the concatenation `[h_{t−1}, x_t]` (hidden state first)
//! through its own `[(hidden + input) × hidden]` matrix.

use rand::Rng;

use crate::error::{FalnetError, Result};
use crate::tensor::{sigmoid, Matrix, ParamSet, TensorView};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub input: usize,
    pub hidden: usize,
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Matrix::zeros(hidden + input, hidden);
        Self {
            input,
            hidden,
            w_f: w(),
            w_i: w(),
            w_c: w(),
            w_o: w(),
            b_f: vec![0.0; hidden],
            b_i: vec![0.0; hidden],
            b_c: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
        }
    }

    /// Glorot-uniform gate matrices, zero biases except the forget gate.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, forget_bias: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        let bound = (6.0 / ((hidden + input + hidden) as f64)).sqrt();
        for w in [&mut p.w_f, &mut p.w_i, &mut p.w_c, &mut p.w_o] {
            for v in w.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        p.b_f.fill(forget_bias);
        p
    }

    fn check(&self) -> Result<()> {
        let rows = self.hidden + self.input;
        for w in [&self.w_f, &self.w_i, &self.w_c, &self.w_o] {
            if w.shape() != (rows, self.hidden) {
                return Err(FalnetError::ShapeMismatch(format!(
                    "gate matrix {:?}, expected ({rows}, {})",
                    w.shape(),
                    self.hidden
                )));
            }
        }
        for b in [&self.b_f, &self.b_i, &self.b_c, &self.b_o] {
            if b.len() != self.hidden {
                return Err(FalnetError::ShapeMismatch("gate bias length".into()));
            }
        }
        Ok(())
    }
}

impl ParamSet for LstmLayerParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let h = self.hidden;
        vec![
            TensorView { name: "w_f".into(), shape: self.w_f.shape(), data: self.w_f.data() },
            TensorView { name: "w_i".into(), shape: self.w_i.shape(), data: self.w_i.data() },
            TensorView { name: "w_c".into(), shape: self.w_c.shape(), data: self.w_c.data() },
            TensorView { name: "w_o".into(), shape: self.w_o.shape(), data: self.w_o.data() },
            TensorView { name: "b_f".into(), shape: (1, h), data: &self.b_f },
            TensorView { name: "b_i".into(), shape: (1, h), data: &self.b_i },
            TensorView { name: "b_c".into(), shape: (1, h), data: &self.b_c },
            TensorView { name: "b_o".into(), shape: (1, h), data: &self.b_o },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_f.data_mut(),
            self.w_i.data_mut(),
            self.w_c.data_mut(),
            self.w_o.data_mut(),
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Gate activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CellCache {
    pub z: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

fn gate(z: &[f64], w: &Matrix, b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (k, &zk) in z.iter().enumerate() {
        if zk == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row(k)) {
            *o += zk * wv;
        }
    }
    out
}

pub fn lstm_cell_forward(
    params: &LstmLayerParams,
    x_t: &[f64],
    prev: &LstmState,
) -> Result<(LstmState, CellCache)> {
    params.check()?;
    if x_t.len() != params.input || prev.h.len() != params.hidden || prev.c.len() != params.hidden {
        return Err(FalnetError::ShapeMismatch(format!(
            "cell input {} / state {} for a {}→{} layer",
            x_t.len(),
            prev.h.len(),
            params.input,
            params.hidden
        )));
    }
    Ok(cell_step(params, x_t, prev))
}

fn cell_step(p: &LstmLayerParams, x_t: &[f64], prev: &LstmState) -> (LstmState, CellCache) {
    let mut z = Vec::with_capacity(p.hidden + p.input);
    z.extend_from_slice(&prev.h);
    z.extend_from_slice(x_t);

    let f: Vec<f64> = gate(&z, &p.w_f, &p.b_f).into_iter().map(sigmoid).collect();
    let i: Vec<f64> = gate(&z, &p.w_i, &p.b_i).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = gate(&z, &p.w_c, &p.b_c).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = gate(&z, &p.w_o, &p.b_o).into_iter().map(sigmoid).collect();

    let c: Vec<f64> = (0..p.hidden)
        .map(|j| f[j] * prev.c[j] + i[j] * g[j])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();

    let cache = CellCache {
        z,
        f,
        i,
        g,
        o,
        c_prev: prev.c.clone(),
        c: c.clone(),
        tanh_c,
    };
    (LstmState { h, c }, cache)
}

/// Runs one layer over a `[T × input]` sequence from a zero state.
fn layer_forward(p: &LstmLayerParams, seq: &Matrix) -> (Matrix, Vec<CellCache>) {
    let mut state = LstmState::zeros(p.hidden);
    let mut out = Matrix::zeros(seq.rows(), p.hidden);
    let mut caches = Vec::with_capacity(seq.rows());
    for t in 0..seq.rows() {
        let (next, cache) = cell_step(p, seq.row(t), &state);
        out.row_mut(t).copy_from_slice(&next.h);
        caches.push(cache);
        state = next;
    }
    (out, caches)
}

/// Inverted-dropout mask: entries are `0` or `1/(1−rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = if rng.random::<f64>() < rate { 0.0 } else { keep };
    }
    m
}

pub(crate) fn apply_mask(x: &mut Matrix, mask: &Matrix) {
    for (v, m) in x.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
}

#[derive(Debug, Clone)]
pub struct StackCache {
    pub layers: Vec<Vec<CellCache>>,
    /// `masks[l]` was applied to layer `l`'s output before it fed layer `l + 1`.
    pub masks: Vec<Option<Matrix>>,
}

pub fn check_stack(layers: &[LstmLayerParams], input: usize) -> Result<()> {
    if layers.is_empty() {
        return Err(FalnetError::InvalidConfig("LSTM stack needs at least one layer".into()));
    }
    let mut width = input;
    for (l, p) in layers.iter().enumerate() {
        p.check()?;
        if p.input != width {
            return Err(FalnetError::ShapeMismatch(format!(
                "layer {l} expects input width {}, previous width is {width}",
                p.input
            )));
        }
        width = p.hidden;
    }
    Ok(())
}

/// Forward through every layer; inter-layer inverted dropout in train mode.
pub fn stack_forward<R: Rng + ?Sized>(
    layers: &[LstmLayerParams],
    sequence: &Matrix,
    dropout_rate: f64,
    train_mode: bool,
    rng: &mut R,
) -> Result<(Matrix, StackCache)> {
    check_stack(layers, sequence.cols())?;
    if sequence.rows() == 0 {
        return Err(FalnetError::Empty("LSTM input sequence".into()));
    }
    let mut cache = StackCache {
        layers: Vec::with_capacity(layers.len()),
        masks: Vec::with_capacity(layers.len()),
    };
    let mut current = sequence.clone();
    for (l, p) in layers.iter().enumerate() {
        let (mut out, caches) = layer_forward(p, &current);
        cache.layers.push(caches);
        let mask = (train_mode && dropout_rate > 0.0 && l + 1 < layers.len())
            .then(|| dropout_mask(out.rows(), out.cols(), dropout_rate, rng));
        if let Some(m) = &mask {
            apply_mask(&mut out, m);
        }
        cache.masks.push(mask);
        current = out;
    }
    Ok((current, cache))
}

/// Adds one gate's contribution: `∂W += zᵀ·da`, `∂b += da`, `∂z += W·da`.
fn accumulate_gate(
    grad_w: &mut Matrix,
    grad_b: &mut [f64],
    w: &Matrix,
    da: &[f64],
    z: &[f64],
    dz: &mut [f64],
) {
    for (b, d) in grad_b.iter_mut().zip(da) {
        *b += d;
    }
    for (k, &zk) in z.iter().enumerate() {
        let mut acc = 0.0;
        for (gv, (&d, &wv)) in grad_w.row_mut(k).iter_mut().zip(da.iter().zip(w.row(k))) {
            *gv += zk * d;
            acc += wv * d;
        }
        dz[k] += acc;
    }
}

fn layer_backward(
    p: &LstmLayerParams,
    caches: &[CellCache],
    grad_seq: &Matrix,
) -> (LstmLayerParams, Matrix) {
    let h = p.hidden;
    let mut grads = LstmLayerParams::zeros(p.input, h);
    let mut grad_in = Matrix::zeros(caches.len(), p.input);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da_f = vec![0.0; h];
    let mut da_i = vec![0.0; h];
    let mut da_g = vec![0.0; h];
    let mut da_o = vec![0.0; h];

    for t in (0..caches.len()).rev() {
        let c = &caches[t];
        let up = grad_seq.row(t);
        for j in 0..h {
            let dh = up[j] + dh_next[j];
            let d_o = dh * c.tanh_c[j];
            let dc = dc_next[j] + dh * c.o[j] * (1.0 - c.tanh_c[j] * c.tanh_c[j]);
            da_f[j] = dc * c.c_prev[j] * c.f[j] * (1.0 - c.f[j]);
            da_i[j] = dc * c.g[j] * c.i[j] * (1.0 - c.i[j]);
            da_g[j] = dc * c.i[j] * (1.0 - c.g[j] * c.g[j]);
            da_o[j] = d_o * c.o[j] * (1.0 - c.o[j]);
            dc_next[j] = dc * c.f[j];
        }

        let mut dz = vec![0.0; h + p.input];
        accumulate_gate(&mut grads.w_f, &mut grads.b_f, &p.w_f, &da_f, &c.z, &mut dz);
        accumulate_gate(&mut grads.w_i, &mut grads.b_i, &p.w_i, &da_i, &c.z, &mut dz);
        accumulate_gate(&mut grads.w_c, &mut grads.b_c, &p.w_c, &da_g, &c.z, &mut dz);
        accumulate_gate(&mut grads.w_o, &mut grads.b_o, &p.w_o, &da_o, &c.z, &mut dz);
        dh_next.copy_from_slice(&dz[..h]);
        grad_in.row_mut(t).copy_from_slice(&dz[h..]);
    }
    (grads, grad_in)
}

/// Reverse-mode gradients of [`stack_forward`] given `∂L/∂hidden_seq`.
pub fn stack_backward(
    layers: &[LstmLayerParams],
    cache: &StackCache,
    grad_hidden_seq: &Matrix,
) -> Result<(Vec<LstmLayerParams>, Matrix)> {
    if cache.layers.len() != layers.len() {
        return Err(FalnetError::ShapeMismatch("cache depth differs from the stack".into()));
    }
    let last = layers.last().expect("non-empty stack");
    let steps = cache.layers[0].len();
    if grad_hidden_seq.shape() != (steps, last.hidden) {
        return Err(FalnetError::ShapeMismatch(format!(
            "upstream gradient {:?}, expected ({steps}, {})",
            grad_hidden_seq.shape(),
            last.hidden
        )));
    }
    let mut grads: Vec<LstmLayerParams> = Vec::with_capacity(layers.len());
    let mut upstream = grad_hidden_seq.clone();
    for l in (0..layers.len()).rev() {
        if let Some(mask) = &cache.masks[l] {
            apply_mask(&mut upstream, mask);
        }
        let (g, down) = layer_backward(&layers[l], &cache.layers[l], &upstream);
        grads.push(g);
        upstream = down;
    }
    grads.reverse();
    Ok((grads, upstream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_from_rest() {
        let p = LstmLayerParams::zeros(3, 4);
        let (next, cache) = lstm_cell_forward(&p, &[1.0, -2.0, 5.0], &LstmState::zeros(4)).unwrap();
        assert!(cache.f.iter().chain(&cache.i).chain(&cache.o).all(|&v| v == 0.5));
        assert!(cache.g.iter().all(|&v| v == 0.0));
        assert!(next.c.iter().chain(&next.h).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_unit_cell() {
        let p = LstmLayerParams::zeros(2, 3);
        let prev = LstmState {
            h: vec![0.0; 3],
            c: vec![1.0; 3],
        };
        let (next, _) = lstm_cell_forward(&p, &[0.3, 0.7], &prev).unwrap();
        for j in 0..3 {
            assert_eq!(next.c[j], 0.5);
            assert!((next.h[j] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
            assert!((next.h[j] - 0.23105).abs() < 1e-5);
        }
    }

    #[test]
    fn table_sized_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmLayerParams::init(6, 128, 1.0, &mut rng);
        let (next, _) = lstm_cell_forward(&p, &[0.1; 6], &LstmState::zeros(128)).unwrap();
        assert_eq!(next.h.len(), 128);
        assert!(lstm_cell_forward(&p, &[0.1; 5], &LstmState::zeros(128)).is_err());
    }

    #[test]
    fn stack_shapes_and_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = vec![
            LstmLayerParams::init(6, 128, 1.0, &mut rng),
            LstmLayerParams::init(128, 128, 1.0, &mut rng),
        ];
        let seq = Matrix::filled(10, 6, 0.2);
        let (out, _) = stack_forward(&layers, &seq, 0.2, true, &mut rng).unwrap();
        assert_eq!(out.shape(), (10, 128));

        let (train, _) = stack_forward(&layers, &seq, 0.0, true, &mut rng).unwrap();
        let (eval, _) = stack_forward(&layers, &seq, 0.0, false, &mut rng).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn single_step_stack_is_one_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LstmLayerParams::init(3, 4, 1.0, &mut rng);
        let x = [0.4, -0.1, 0.9];
        let (out, _) = stack_forward(
            std::slice::from_ref(&p),
            &Matrix::row_vector(&x),
            0.5,
            false,
            &mut rng,
        )
        .unwrap();
        let (state, _) = lstm_cell_forward(&p, &x, &LstmState::zeros(4)).unwrap();
        assert_eq!(out.row(0), &state.h[..]);
    }

    #[test]
    fn stacking_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layers = vec![
            LstmLayerParams::init(3, 4, 1.0, &mut rng),
            LstmLayerParams::init(5, 4, 1.0, &mut rng),
        ];
        assert!(check_stack(&layers, 3).is_err());
        assert!(check_stack(&[], 3).is_err());
        assert!(check_stack(&layers[..1], 4).is_err());
    }

    fn random_stack(seed: u64, input: usize, hidden: usize) -> (Vec<LstmLayerParams>, Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![
            LstmLayerParams::init(input, hidden, 1.0, &mut rng),
            LstmLayerParams::init(hidden, hidden, 1.0, &mut rng),
        ];
        // random biases so every gate is exercised away from its init value
        for l in &mut layers {
            for b in [&mut l.b_f, &mut l.b_i, &mut l.b_c, &mut l.b_o] {
                b.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
            }
        }
        let seq = Matrix::from_vec_unchecked(3, input, (0..3 * input).map(|_| rng.random_range(-1.0..1.0)).collect());
        let probe = Matrix::from_vec_unchecked(3, hidden, (0..3 * hidden).map(|_| rng.random_range(-1.0..1.0)).collect());
        (layers, seq, probe)
    }

    /// `L = Σ probe ⊙ hidden_seq`, so `∂L/∂hidden_seq = probe`.
    fn probe_loss(layers: &[LstmLayerParams], seq: &Matrix, probe: &Matrix, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, _) = stack_forward(layers, seq, 0.3, true, &mut rng).unwrap();
        out.dot(probe)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (layers, seq, probe) = random_stack(42, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (_, cache) = stack_forward(&layers, &seq, 0.3, true, &mut rng).unwrap();
        let (grads, grad_in) = stack_backward(&layers, &cache, &probe).unwrap();

        for l in 0..layers.len() {
            let analytic = grads[l].tensors();
            let names: Vec<_> = analytic.iter().map(|t| t.name.clone()).collect();
            for (ti, name) in names.iter().enumerate() {
                let base = Matrix::from_vec_unchecked(1, analytic[ti].data.len(), analytic[ti].data.to_vec());
                let x0 = Matrix::row_vector(layers[l].tensors()[ti].data);
                let numeric = finite_diff_grad(
                    |m| {
                        let mut ls = layers.clone();
                        ls[l].tensors_mut()[ti].copy_from_slice(m.data());
                        probe_loss(&ls, &seq, &probe, 99)
                    },
                    &x0,
                    1e-5,
                );
                let err = max_relative_error(base.data(), numeric.data(), 1e-6);
                assert!(err < 1e-4, "layer {l} {name}: {err}");
            }
        }
        let numeric = finite_diff_grad(|m| probe_loss(&layers, m, &probe, 99), &seq, 1e-5);
        assert!(max_relative_error(grad_in.data(), numeric.data(), 1e-6) < 1e-4);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let (layers, seq, _) = random_stack(5, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = stack_forward(&layers, &seq, 0.0, false, &mut rng).unwrap();
        let (grads, gin) = stack_backward(&layers, &cache, &Matrix::zeros(3, 4)).unwrap();
        assert!(grads.iter().all(|g| g.flatten().iter().all(|&v| v == 0.0)));
        assert!(gin.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_deterministic() {
        let (layers, seq, probe) = random_stack(8, 3, 4);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let (_, cache) = stack_forward(&layers, &seq, 0.2, true, &mut rng).unwrap();
            let (g, gin) = stack_backward(&layers, &cache, &probe).unwrap();
            let mut bits: Vec<u64> = g.iter().flat_map(|p| p.flatten()).map(f64::to_bits).collect();
            bits.extend(gin.data().iter().map(|v| v.to_bits()));
            bits
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn backward_rejects_bad_shapes() {
        let (layers, seq, _) = random_stack(4, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = stack_forward(&layers, &seq, 0.0, false, &mut rng).unwrap();
        assert!(stack_backward(&layers, &cache, &Matrix::zeros(2, 4)).is_err());
        assert!(stack_backward(&layers[..1], &cache, &Matrix::zeros(3, 4)).is_err());
    }
}
