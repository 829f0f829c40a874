//! Discrete Fourier transform and low-pass residual denoising.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley–Tukey transform;
//! every other length goes through Bluestein's chirp-z reformulation on top
//! of it, so all transforms are `O(N log N)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FalnetError, Result};

/// Frequency-domain view of a real series.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Normalised frequency of bin `k` in cycles/sample, in `[0, 0.5]`.
    pub fn frequency(&self, k: usize) -> f64 {
        normalized_frequency(k, self.bins.len())
    }

    /// Largest `|X_k − conj(X_{N−k})|`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.bins.len();
        (1..n)
            .map(|k| (self.bins[k] - self.bins[n - k].conj()).norm())
            .chain(std::iter::once(self.bins.first().map_or(0.0, |b| b.im.abs())))
            .fold(0.0, f64::max)
    }
}

/// Low-pass cutoff `τ` in cycles/sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    pub cutoff: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self { cutoff: 0.1 }
    }
}

impl DenoiseConfig {
    pub fn new(cutoff: f64) -> Result<Self> {
        let cfg = Self { cutoff };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoff > 0.0 && self.cutoff <= 0.5 {
            Ok(())
        } else {
            Err(FalnetError::InvalidConfig(format!(
                "denoise cutoff {} outside (0, 0.5]",
                self.cutoff
            )))
        }
    }
}

#[inline]
pub fn normalized_frequency(k: usize, n: usize) -> f64 {
    k.min(n - k) as f64 / n as f64
}

fn bit_reverse_permute(buf: &mut [Complex64]) {
    let n = buf.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
}

/// In-place unnormalised radix-2 transform. `sign` is −1 for forward, +1 for inverse.
fn radix2(buf: &mut [Complex64], sign: f64) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    bit_reverse_permute(buf);
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|j| Complex64::from_polar(1.0, sign * 2.0 * PI * j as f64 / n as f64))
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let w = twiddles[j * stride];
                let a = buf[start + j];
                let b = buf[start + j + half] * w;
                buf[start + j] = a + b;
                buf[start + j + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Chirp-z evaluation of an arbitrary-length DFT via a power-of-two convolution.
fn bluestein(input: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = input.len();
    let m = (2 * n - 1).next_power_of_two();
    // k² mod 2N keeps the chirp angle small and exact in integers.
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, sign * PI * k2 / n as f64)
        })
        .collect();

    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = input[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, -1.0);
    radix2(&mut b, -1.0);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, 1.0);
    let scale = 1.0 / m as f64;
    (0..n).map(|k| a[k] * scale * chirp[k]).collect()
}

/// Unnormalised DFT (`sign = −1`) or its conjugate (`sign = +1`) of any length.
fn transform(input: &[Complex64], sign: f64) -> Vec<Complex64> {
    if input.len().is_power_of_two() {
        let mut buf = input.to_vec();
        radix2(&mut buf, sign);
        buf
    } else {
        bluestein(input, sign)
    }
}

/// `X_k = Σ_n x_n e^{−2πikn/N}`.
pub fn fft_forward(series: &[f64]) -> Result<Spectrum> {
    if series.is_empty() {
        return Err(FalnetError::Empty("fft input".into()));
    }
    let buf: Vec<Complex64> = series.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Ok(Spectrum {
        bins: transform(&buf, -1.0),
    })
}

/// Complex inverse transform, `x_t = (1/N) Σ_k X_k e^{2πikt/N}`.
pub fn fft_inverse_complex(spectrum: &Spectrum) -> Vec<Complex64> {
    let n = spectrum.len();
    let scale = 1.0 / n as f64;
    transform(&spectrum.bins, 1.0)
        .into_iter()
        .map(|z| z * scale)
        .collect()
}

/// Real inverse transform. Rejects spectra that are not conjugate-symmetric.
pub fn fft_inverse(spectrum: &Spectrum) -> Result<Vec<f64>> {
    if spectrum.is_empty() {
        return Err(FalnetError::Empty("spectrum".into()));
    }
    let scale = spectrum
        .bins
        .iter()
        .map(|b| b.norm())
        .fold(1.0_f64, f64::max);
    let defect = spectrum.symmetry_defect();
    if defect > 1e-6 * scale {
        return Err(FalnetError::NonRealSignal(defect));
    }
    Ok(fft_inverse_complex(spectrum)
        .into_iter()
        .map(|z| z.re)
        .collect())
}

/// Zeroes every bin whose normalised frequency exceeds the cutoff.
pub fn low_pass(spectrum: &mut Spectrum, cfg: &DenoiseConfig) {
    let n = spectrum.len();
    for (k, bin) in spectrum.bins.iter_mut().enumerate() {
        if normalized_frequency(k, n) > cfg.cutoff {
            *bin = Complex64::new(0.0, 0.0);
        }
    }
}

/// Forward transform, low-pass, inverse transform.
pub fn denoise_residual(residual: &[f64], cfg: &DenoiseConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut spectrum = fft_forward(residual)?;
    low_pass(&mut spectrum, cfg);
    fft_inverse(&spectrum)
}

/// Number of retained non-DC bins on each side of the spectrum, or `None`
/// when every bin is retained.
fn retained_half_width(n: usize, cutoff: f64) -> Option<usize> {
    let kept = (0..=n / 2)
        .take_while(|&k| normalized_frequency(k, n) <= cutoff)
        .count();
    let half = kept - 1;
    (2 * half + 1 < n).then_some(half)
}

/// Causal denoise: `out[t]` is the final sample of
/// `denoise_residual(series[..=t])`.
///
/// The low-pass endpoint is a fixed linear functional of the prefix, a
/// Dirichlet kernel over lags, so each output costs `O(t)` instead of a
/// full transform.
pub fn causal_denoise(series: &[f64], cfg: &DenoiseConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(FalnetError::Empty("causal denoise input".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut kernel = Vec::with_capacity(series.len());
    for t in 0..series.len() {
        let n = t + 1;
        let Some(half) = retained_half_width(n, cfg.cutoff) else {
            out.push(series[t]);
            continue;
        };
        let nf = n as f64;
        let width = (2 * half + 1) as f64;
        kernel.clear();
        kernel.push(width / nf);
        for lag in 1..n {
            let x = PI * lag as f64 / nf;
            kernel.push((width * x).sin() / (nf * x.sin()));
        }
        // Sample t - lag sits `lag` steps behind the endpoint.
        let value = (0..n).map(|lag| kernel[lag] * series[t - lag]).sum();
        out.push(value);
    }
    Ok(out)
}
