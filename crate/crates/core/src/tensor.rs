//! Dense row-major `f64` matrices and the handful of kernels the model needs.
//!
//! Every learnable layer in this crate carries a hand-written backward pass;
//! [`finite_diff_grad`] is the oracle they are all checked against.

use crate::error::{FalnetError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Checked construction: length must match and every entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(FalnetError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FalnetError::NonFinite("matrix data".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Unchecked construction. Panics only on a length mismatch.
    pub fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(FalnetError::ShapeMismatch("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_vec_unchecked(1, values.len(), values.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of columns `[start, start + width)`.
    pub fn col_slice(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    /// Writes `src` into columns starting at `start`.
    pub fn set_col_slice(&mut self, start: usize, src: &Matrix) {
        debug_assert_eq!(self.rows, src.rows);
        for r in 0..self.rows {
            let w = src.cols;
            self.row_mut(r)[start..start + w].copy_from_slice(src.row(r));
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `x · w (+ b)` with shape checking.
pub fn matmul_affine(x: &Matrix, w: &Matrix, b: Option<&[f64]>) -> Result<Matrix> {
    if x.cols != w.rows {
        return Err(FalnetError::ShapeMismatch(format!(
            "[{}x{}]·[{}x{}]",
            x.rows, x.cols, w.rows, w.cols
        )));
    }
    if let Some(b) = b {
        if b.len() != w.cols {
            return Err(FalnetError::ShapeMismatch(format!(
                "bias of length {} for {} output columns",
                b.len(),
                w.cols
            )));
        }
    }
    let mut out = matmul(x, w);
    if let Some(b) = b {
        for r in 0..out.rows {
            for (o, bj) in out.row_mut(r).iter_mut().zip(b) {
                *o += bj;
            }
        }
    }
    Ok(out)
}

/// `a · b`. Panics on inner-dimension mismatch; use [`matmul_affine`] for checked input.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (l, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &w) in out_row.iter_mut().zip(b.row(l)) {
                *o += x * w;
            }
        }
    }
    out
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows, "matmul_tn row mismatch");
    let mut out = Matrix::zeros(a.cols, b.cols);
    for l in 0..a.rows {
        let b_row = b.row(l);
        for (i, &x) in a.row(l).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &w) in out_row.iter_mut().zip(b_row) {
                *o += x * w;
            }
        }
    }
    out
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "matmul_nt col mismatch");
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = a_row.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

pub fn sigmoid_matrix(x: &Matrix) -> Matrix {
    x.map(sigmoid)
}

pub fn tanh_matrix(x: &Matrix) -> Matrix {
    x.map(tanh)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Central-difference gradient of a scalar function of a matrix.
pub fn finite_diff_grad<F>(mut f: F, x: &Matrix, eps: f64) -> Matrix
where
    F: FnMut(&Matrix) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows, x.cols);
    for idx in 0..x.data.len() {
        let orig = probe.data[idx];
        probe.data[idx] = orig + eps;
        let up = f(&probe);
        probe.data[idx] = orig - eps;
        let down = f(&probe);
        probe.data[idx] = orig;
        grad.data[idx] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Relative error used by the gradient checks: `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps near-zero gradients from turning rounding noise into a
/// large relative error.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] across two equally shaped slices.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y, floor))
        .fold(0.0, f64::max)
}

/// Named view of one learnable tensor.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

/// A fixed, ordered collection of learnable tensors.
///
/// `tensors` and `tensors_mut` must enumerate the same tensors in the same
/// order; the optimizer and checkpoint code rely on that pairing.
pub trait ParamSet {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// `self += scale · other`.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s.data) {
                *d += scale * v;
            }
        }
    }

    /// All values in enumeration order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_product() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 4.0, 5.0]]).unwrap();
        let y = matmul_affine(&x, &Matrix::identity(3), None).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = matmul_affine(&a, &b, None).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
        let c = matmul_affine(&a, &b, Some(&[1.0, -1.0])).unwrap();
        assert_eq!(c.data(), &[20.0, 21.0, 44.0, 49.0]);
    }

    #[test]
    fn shape_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 2);
        assert!(matches!(
            matmul_affine(&a, &b, None),
            Err(FalnetError::ShapeMismatch(_))
        ));
        assert!(matmul_affine(&b, &b, Some(&[1.0])).is_err());
    }

    #[test]
    fn checked_construction_rejects_nan() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn transposed_products_agree() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.3, 1.0], vec![2.0, -4.0]]).unwrap();
        assert_eq!(matmul_tn(&a, &b), matmul(&a.transpose(), &b));
        let c = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 2.0, 1.0]]).unwrap();
        assert_eq!(matmul_nt(&a, &c), matmul(&a, &c.transpose()));
    }

    #[test]
    fn activation_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh(0.0), 0.0);
        for x in [0.5, 2.0, 10.0] {
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        }
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&Matrix::filled(1, 4, 2.5));
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let s = softmax_rows(&Matrix::row_vector(&[0.0, 3f64.ln()]));
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-15);
        let s = softmax_rows(&Matrix::row_vector(&[1000.0, 1000.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn finite_difference_cases() {
        let x = Matrix::row_vector(&[3.0]);
        let g = finite_diff_grad(|m| m.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.get(0, 0) - 6.0).abs() < 1e-6);

        let x = Matrix::row_vector(&[0.0]);
        let g = finite_diff_grad(|m| m.data().iter().map(|&v| sigmoid(v)).sum(), &x, 1e-5);
        assert!((g.get(0, 0) - 0.25).abs() < 1e-6);

        let x = Matrix::filled(2, 2, 1.3);
        let g = finite_diff_grad(|_| 4.2, &x, 1e-5);
        assert!(g.data().iter().all(|v| v.abs() < 1e-9));
    }
}
