//! Single-pass STL: cycle-subseries LOESS for the seasonal part, LOESS on the
//! deseasonalised series for the trend. No robustness weights.

use serde::{Deserialize, Serialize};

use super::loess::{loess_with_neighbours, neighbours_for_span};
use super::spectral::{denoise_residual, DenoiseConfig};
use crate::error::{FalnetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StlConfig {
    /// Span of the LOESS fit over each cycle-subseries.
    pub seasonal_span: f64,
    /// Trend span as a fraction of the series; `None` means `1.5·period / n`.
    pub trend_span: Option<f64>,
    pub inner_iterations: usize,
}

impl Default for StlConfig {
    fn default() -> Self {
        Self {
            seasonal_span: 0.75,
            trend_span: None,
            inner_iterations: 2,
        }
    }
}

/// Additive split `y = trend + seasonal + residual`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
    /// Empty until [`Decomposition::denoise`] runs.
    pub denoised_residual: Vec<f64>,
    pub period: usize,
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }

    pub fn denoise(&mut self, cfg: &DenoiseConfig) -> Result<()> {
        self.denoised_residual = denoise_residual(&self.residual, cfg)?;
        Ok(())
    }

    /// Fitted trend followed by its last value held for `len − n` more steps.
    pub fn extend_trend(&self, len: usize) -> Vec<f64> {
        let mut out = self.trend.clone();
        let last = *self.trend.last().expect("non-empty decomposition");
        out.resize(len.max(self.len()), last);
        out.truncate(len);
        out
    }

    /// Fitted seasonal followed by repetitions of its final full period.
    pub fn extend_seasonal(&self, len: usize) -> Vec<f64> {
        let n = self.len();
        let p = self.period;
        let mut out = self.seasonal.clone();
        for t in n..len {
            out.push(self.seasonal[n - p + (t - n) % p]);
        }
        out.truncate(len);
        out
    }
}

/// Subtracts each full period's mean; a trailing partial period is centred
/// with the mean of the last `period` values.
fn demean_by_period(raw: &[f64], period: usize) -> Vec<f64> {
    let n = raw.len();
    let mut out = raw.to_vec();
    let full = n / period;
    for block in 0..full {
        let r = block * period..(block + 1) * period;
        let mean = raw[r.clone()].iter().sum::<f64>() / period as f64;
        out[r].iter_mut().for_each(|v| *v -= mean);
    }
    if full * period < n {
        let mean = raw[n - period..].iter().sum::<f64>() / period as f64;
        out[full * period..].iter_mut().for_each(|v| *v -= mean);
    }
    out
}

pub fn stl_decompose(series: &[f64], period: usize, cfg: &StlConfig) -> Result<Decomposition> {
    if period == 0 {
        return Err(FalnetError::InvalidConfig("period must be positive".into()));
    }
    let n = series.len();
    if n < 2 * period || n < 3 {
        return Err(FalnetError::InsufficientHistory {
            len: n,
            needed: (2 * period).max(3),
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(FalnetError::NonFinite("STL input".into()));
    }
    if !(cfg.seasonal_span > 0.0 && cfg.seasonal_span <= 1.0) {
        return Err(FalnetError::InvalidConfig("seasonal span outside (0, 1]".into()));
    }
    let trend_span = cfg.trend_span.unwrap_or(1.5 * period as f64 / n as f64);
    if !(trend_span > 0.0) {
        return Err(FalnetError::InvalidConfig("trend span must be positive".into()));
    }
    let trend_q = neighbours_for_span(n, trend_span.min(1.0)).max(3);

    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    for _ in 0..cfg.inner_iterations.max(1) {
        let mut raw = vec![0.0; n];
        for phase in 0..period {
            let sub: Vec<f64> = (phase..n)
                .step_by(period)
                .map(|t| series[t] - trend[t])
                .collect();
            let q = neighbours_for_span(sub.len(), cfg.seasonal_span).max(3.min(sub.len()));
            let smooth = loess_with_neighbours(&sub, q, 1);
            for (j, v) in smooth.into_iter().enumerate() {
                raw[phase + j * period] = v;
            }
        }
        seasonal = demean_by_period(&raw, period);
        let deseasonalised: Vec<f64> = series.iter().zip(&seasonal).map(|(y, s)| y - s).collect();
        trend = loess_with_neighbours(&deseasonalised, trend_q, 1);
    }
    let residual = series
        .iter()
        .zip(&trend)
        .zip(&seasonal)
        .map(|((y, t), s)| y - t - s)
        .collect();
    Ok(Decomposition {
        trend,
        seasonal,
        residual,
        denoised_residual: Vec::new(),
        period,
    })
}
