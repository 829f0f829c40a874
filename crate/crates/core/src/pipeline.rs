//! End-to-end preprocessing, forecasting and recomposition.
//!
//! Every channel is decomposed on the training rows only. The fitted trend is
//! held at its last value and the seasonal pattern repeats its final period,
//! which gives a residual for every row of the frame. Model inputs are the
//! causally low-passed residuals, so a window never sees samples after its
//! last row. Training labels are the low-passed target residual; test labels
//! are the raw target residual.

use serde::{Deserialize, Serialize};

use crate::data::{make_windows_with_targets, split_point, MinMaxScaler, TimeSeriesFrame, WindowedDataset, DEFAULT_TARGET};
use crate::decomposition::{causal_denoise, stl_decompose, Decomposition, DenoiseConfig, StlConfig};
use crate::error::{FalnetError, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{predict_batch, FalnetParams, ModelConfig};
use crate::training::TrainConfig;

pub const HORIZON: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub period: usize,
    pub tau: f64,
    pub train_fraction: f64,
    pub target: String,
    pub stl: StlConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            period: 24,
            tau: 0.1,
            train_fraction: 0.8,
            target: DEFAULT_TARGET.to_string(),
            stl: StlConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(FalnetError::InvalidConfig(format!("period {} must be at least 2", self.period)));
        }
        DenoiseConfig::new(self.tau)?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(FalnetError::InvalidConfig(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        self.train.validate()
    }

    pub fn denoise(&self) -> DenoiseConfig {
        DenoiseConfig { cutoff: self.tau }
    }
}

/// Everything fitted on the training rows that later rows are transformed with.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub channels: Vec<String>,
    pub target: usize,
    pub n_fit: usize,
    pub denoise: DenoiseConfig,
    /// One decomposition of the first `n_fit` rows per channel, low-passed residual filled.
    pub decompositions: Vec<Decomposition>,
    /// Fit on the causal residual features of the training rows.
    pub scaler: MinMaxScaler,
}

impl Preprocessor {
    /// Fit on rows `..n_fit` of a gap-free frame.
    pub fn fit(frame: &TimeSeriesFrame, n_fit: usize, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if frame.missing_count() > 0 {
            return Err(FalnetError::InvalidConfig("preprocessing requires a gap-free frame".into()));
        }
        if n_fit > frame.len() {
            return Err(FalnetError::InsufficientHistory {
                len: frame.len(),
                needed: n_fit,
            });
        }
        let target = frame.channel_index(&cfg.target)?;
        let denoise = cfg.denoise();
        let mut decompositions = Vec::with_capacity(frame.n_channels());
        for c in 0..frame.n_channels() {
            let col = frame.column(c);
            let mut d = stl_decompose(&col[..n_fit], cfg.period, &cfg.stl)?;
            d.denoise(&denoise)?;
            decompositions.push(d);
        }
        let mut pre = Self {
            channels: frame.channels.clone(),
            target,
            n_fit,
            denoise,
            decompositions,
            scaler: MinMaxScaler {
                channels: frame.channels.clone(),
                min: Vec::new(),
                max: Vec::new(),
            },
        };
        let features = pre.causal_residuals(frame)?;
        pre.scaler = MinMaxScaler::fit(&features.slice_rows(0, n_fit))?;
        Ok(pre)
    }

    fn check_frame(&self, frame: &TimeSeriesFrame) -> Result<()> {
        if frame.channels != self.channels {
            return Err(FalnetError::ShapeMismatch(format!(
                "frame channels {:?} differ from fitted {:?}",
                frame.channels, self.channels
            )));
        }
        if frame.missing_count() > 0 {
            return Err(FalnetError::InvalidConfig("preprocessing requires a gap-free frame".into()));
        }
        Ok(())
    }

    /// Trend and seasonal components of channel `c` over `len` rows.
    pub fn components(&self, c: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
        let d = &self.decompositions[c];
        (d.extend_trend(len), d.extend_seasonal(len))
    }

    /// `y − T̂ − Ŝ` for every channel and row.
    pub fn residuals(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check_frame(frame)?;
        let mut out = frame.clone();
        for c in 0..frame.n_channels() {
            let (trend, seasonal) = self.components(c, frame.len());
            let col: Vec<f64> = frame
                .column(c)
                .iter()
                .zip(trend.iter().zip(&seasonal))
                .map(|(y, (t, s))| y - t - s)
                .collect();
            out.set_column(c, &col);
        }
        Ok(out)
    }

    fn causal_residuals(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        let mut out = self.residuals(frame)?;
        for c in 0..out.n_channels() {
            let smoothed = causal_denoise(&out.column(c), &self.denoise)?;
            out.set_column(c, &smoothed);
        }
        Ok(out)
    }

    /// Normalised model inputs for every row.
    pub fn features(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.scaler.apply(&self.causal_residuals(frame)?)
    }

    /// Normalised labels for every row.
    pub fn targets(&self, frame: &TimeSeriesFrame) -> Result<Vec<f64>> {
        let mut raw = self.residuals(frame)?.column(self.target);
        let fitted = &self.decompositions[self.target].denoised_residual;
        raw[..self.n_fit].copy_from_slice(fitted);
        self.scaler.apply_channel(self.target, &raw)
    }

    /// Original-unit forecasts from normalised model outputs for the given rows.
    pub fn recompose(&self, rows: &[usize], normalized: &[f64]) -> Result<Vec<f64>> {
        if rows.len() != normalized.len() {
            return Err(FalnetError::ShapeMismatch(format!(
                "{} rows vs {} predictions",
                rows.len(),
                normalized.len()
            )));
        }
        let len = rows.iter().max().map_or(0, |&r| r + 1);
        let (trend, seasonal) = self.components(self.target, len);
        let residual = self.scaler.invert_channel(self.target, normalized)?;
        Ok(rows
            .iter()
            .zip(residual)
            .map(|(&t, r)| r + trend[t] + seasonal[t])
            .collect())
    }
}

/// A preprocessed frame cut into windows, with the chronological split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pre: Preprocessor,
    pub dataset: WindowedDataset,
    /// Windows whose label row lies in the training rows.
    pub n_train: usize,
}

impl Prepared {
    pub fn train_set(&self) -> WindowedDataset {
        self.dataset.subset(0..self.n_train)
    }

    pub fn test_set(&self) -> WindowedDataset {
        self.dataset.subset(self.n_train..self.dataset.len())
    }
}

/// Fit the preprocessor on the leading `train_fraction` of a cleaned frame and window it.
pub fn prepare(frame: &TimeSeriesFrame, cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let n_fit = split_point(frame.len(), cfg.train_fraction)?;
    let pre = Preprocessor::fit(frame, n_fit, cfg)?;
    let dataset = windows(&pre, frame, cfg.train.window)?;
    let n_train = dataset.target_index.iter().take_while(|&&t| t < n_fit).count();
    if n_train == 0 || n_train == dataset.len() {
        return Err(FalnetError::InsufficientHistory {
            len: frame.len(),
            needed: n_fit + 1,
        });
    }
    Ok(Prepared { pre, dataset, n_train })
}

/// Windowed, normalised dataset over the whole frame.
pub fn windows(pre: &Preprocessor, frame: &TimeSeriesFrame, window: usize) -> Result<WindowedDataset> {
    let features = pre.features(frame)?;
    let targets = pre.targets(frame)?;
    make_windows_with_targets(&features, &targets, window, HORIZON, &pre.channels[pre.target])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub rows: Vec<usize>,
    pub timestamps: Vec<i64>,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
    pub truth_normalized: Vec<f64>,
    pub prediction_normalized: Vec<f64>,
}

impl Forecast {
    pub fn metrics(&self) -> Result<MetricsReport> {
        evaluate(&self.truth, &self.prediction)
    }

    pub fn normalized_metrics(&self) -> Result<MetricsReport> {
        evaluate(&self.truth_normalized, &self.prediction_normalized)
    }
}

/// One-step forecasts in original units for every window of `dataset`.
pub fn predict_series(
    params: &FalnetParams,
    model: &ModelConfig,
    pre: &Preprocessor,
    frame: &TimeSeriesFrame,
    dataset: &WindowedDataset,
) -> Result<Forecast> {
    let normalized = predict_batch(params, model, &dataset.inputs)?;
    let prediction = pre.recompose(&dataset.target_index, &normalized)?;
    if prediction.iter().any(|p| !p.is_finite()) {
        return Err(FalnetError::NonFinite("forecast".into()));
    }
    let target = frame.column(pre.target);
    Ok(Forecast {
        rows: dataset.target_index.clone(),
        timestamps: dataset.target_index.iter().map(|&t| frame.timestamps[t]).collect(),
        truth: dataset.target_index.iter().map(|&t| target[t]).collect(),
        prediction,
        truth_normalized: dataset.targets.clone(),
        prediction_normalized: normalized,
    })
}

/// `ŷ_t = y_{t−1}` for each listed row.
pub fn persistence_forecast(series: &[f64], rows: &[usize]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|&t| {
            if t == 0 || t > series.len() {
                Err(FalnetError::InsufficientHistory { len: t, needed: 1 })
            } else {
                Ok(series[t - 1])
            }
        })
        .collect()
}
