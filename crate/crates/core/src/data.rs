//! Ingestion and cleaning of hourly pollutant series.
//!
//! Missing cells are represented as `NaN` inside [`TimeSeriesFrame`]; every
//! other stage of the pipeline expects a frame with no missing values.

use chrono::{DateTime, NaiveDateTime};

use crate::error::{FalnetError, Result};
use crate::tensor::Matrix;

pub const DEFAULT_CHANNELS: [&str; 6] = ["PM2.5", "PM10", "SO2", "NO2", "CO", "O3"];
pub const DEFAULT_TARGET: &str = "PM2.5";

const SECONDS_PER_HOUR: i64 = 3600;

/// Hourly multichannel series. Row `r` holds the observation at `timestamps[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    /// Hours since the Unix epoch, strictly increasing with unit spacing.
    pub timestamps: Vec<i64>,
    pub channels: Vec<String>,
    /// Row-major `[time × channel]`; `NaN` marks a missing cell.
    pub values: Vec<f64>,
}

impl TimeSeriesFrame {
    pub fn new(timestamps: Vec<i64>, channels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != timestamps.len() * channels.len() {
            return Err(FalnetError::ShapeMismatch(format!(
                "{} values for {} rows x {} channels",
                values.len(),
                timestamps.len(),
                channels.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(FalnetError::NonMonotonicTime { line: i + 2 });
        }
        Ok(Self {
            timestamps,
            channels,
            values,
        })
    }

    /// Builds a frame from per-channel columns on a contiguous hourly grid.
    pub fn from_columns(start_hour: i64, channels: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.len() != channels.len() {
            return Err(FalnetError::ShapeMismatch("column count".into()));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(FalnetError::ShapeMismatch("ragged columns".into()));
        }
        let mut values = Vec::with_capacity(n * channels.len());
        for t in 0..n {
            values.extend(columns.iter().map(|c| c[t]));
        }
        Self::new((0..n as i64).map(|t| start_hour + t).collect(), channels, values)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| FalnetError::UnknownChannel(name.to_string()))
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels.len() + c]
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, v: f64) {
        let w = self.channels.len();
        self.values[t * w + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.get(t, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, col: &[f64]) {
        assert_eq!(col.len(), self.len());
        for (t, &v) in col.iter().enumerate() {
            self.set(t, c, v);
        }
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// Rows `[start, end)` as a new frame.
    pub fn slice_rows(&self, start: usize, end: usize) -> TimeSeriesFrame {
        let w = self.channels.len();
        TimeSeriesFrame {
            timestamps: self.timestamps[start..end].to_vec(),
            channels: self.channels.clone(),
            values: self.values[start * w..end * w].to_vec(),
        }
    }
}

fn parse_timestamp(field: &str) -> Option<i64> {
    let field = field.trim();
    if !field.is_empty() && field.trim_start_matches('-').bytes().all(|b| b.is_ascii_digit()) {
        let secs: i64 = field.parse().ok()?;
        return (secs % SECONDS_PER_HOUR == 0).then_some(secs.div_euclid(SECONDS_PER_HOUR));
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d %H:%M:%S",
    ];
    let dt = FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(field, f).ok())?;
    let secs = dt.and_utc().timestamp();
    (secs % SECONDS_PER_HOUR == 0).then_some(secs.div_euclid(SECONDS_PER_HOUR))
}

/// Formats an epoch hour as `YYYY-MM-DDTHH:00`.
pub fn format_timestamp(hour: i64) -> String {
    DateTime::from_timestamp(hour * SECONDS_PER_HOUR, 0)
        .map(|d| d.format("%Y-%m-%dT%H:00").to_string())
        .unwrap_or_else(|| (hour * SECONDS_PER_HOUR).to_string())
}

/// Parses a `timestamp,<channel>...` CSV onto a uniform hourly grid.
///
/// Empty cells and hours absent from the file become missing (`NaN`).
pub fn parse_csv(text: &str) -> Result<TimeSeriesFrame> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| FalnetError::MalformedHeader("empty document".into()))?;
    let header = header.trim_start_matches('\u{feff}');
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if names.len() < 2 {
        return Err(FalnetError::MalformedHeader(
            "need a timestamp column and at least one channel".into(),
        ));
    }
    let channels = names[1..].to_vec();
    if channels.iter().any(String::is_empty) {
        return Err(FalnetError::MalformedHeader("empty channel name".into()));
    }
    for (i, c) in channels.iter().enumerate() {
        if channels[..i].contains(c) {
            return Err(FalnetError::MalformedHeader(format!("duplicate channel `{c}`")));
        }
    }
    if parse_timestamp(&names[0]).is_some()
        || names[1..].iter().all(|n| n.parse::<f64>().is_ok())
    {
        return Err(FalnetError::MalformedHeader("header row looks like data".into()));
    }

    let width = channels.len();
    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 1 {
            return Err(FalnetError::MalformedRow {
                line: line_no,
                message: format!("expected {} fields, found {}", width + 1, fields.len()),
            });
        }
        let hour = parse_timestamp(fields[0]).ok_or_else(|| FalnetError::MalformedRow {
            line: line_no,
            message: format!("unparseable hourly timestamp `{}`", fields[0].trim()),
        })?;
        if let Some((prev, _)) = rows.last() {
            if hour <= *prev {
                return Err(FalnetError::NonMonotonicTime { line: line_no });
            }
        }
        let mut vals = Vec::with_capacity(width);
        for f in &fields[1..] {
            let f = f.trim();
            if f.is_empty() {
                vals.push(f64::NAN);
                continue;
            }
            let v: f64 = f.parse().map_err(|_| FalnetError::MalformedRow {
                line: line_no,
                message: format!("non-numeric value `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(FalnetError::MalformedRow {
                    line: line_no,
                    message: format!("non-finite value `{f}`"),
                });
            }
            vals.push(v);
        }
        rows.push((hour, vals));
    }
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(FalnetError::NoData),
    };

    let n = (last - first + 1) as usize;
    let mut values = vec![f64::NAN; n * width];
    for (hour, vals) in rows {
        let r = (hour - first) as usize;
        values[r * width..(r + 1) * width].copy_from_slice(&vals);
    }
    TimeSeriesFrame::new((first..=last).collect(), channels, values)
}

/// Serialises a frame with six fractional digits; missing cells are left empty.
pub fn write_csv(frame: &TimeSeriesFrame) -> String {
    let mut out = String::with_capacity(frame.len() * (16 + 12 * frame.n_channels()));
    out.push_str("timestamp");
    for c in &frame.channels {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for t in 0..frame.len() {
        out.push_str(&format_timestamp(frame.timestamps[t]));
        for c in 0..frame.n_channels() {
            out.push(',');
            let v = frame.get(t, c);
            if !v.is_nan() {
                out.push_str(&format!("{v:.6}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Fills missing values in one series: linear between observed neighbours,
/// nearest observed value at the ends.
pub fn interpolate_series(series: &mut [f64]) -> Option<()> {
    let observed: Vec<usize> = (0..series.len()).filter(|&i| !series[i].is_nan()).collect();
    if observed.len() < 2 {
        return None;
    }
    let (first, last) = (observed[0], *observed.last().unwrap());
    let (head, tail) = (series[first], series[last]);
    series[..first].fill(head);
    series[last + 1..].fill(tail);
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 2 {
            continue;
        }
        let (ya, yb) = (series[a], series[b]);
        let span = (b - a) as f64;
        for (k, v) in series[a + 1..b].iter_mut().enumerate() {
            *v = ya + (yb - ya) * ((k + 1) as f64 / span);
        }
    }
    Some(())
}

pub fn interpolate_missing(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    let mut out = frame.clone();
    for c in 0..frame.n_channels() {
        let mut col = frame.column(c);
        interpolate_series(&mut col)
            .ok_or_else(|| FalnetError::ChannelMissing(frame.channels[c].clone()))?;
        out.set_column(c, &col);
    }
    Ok(out)
}

/// Quantile by linear interpolation between order statistics (type 7).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Marks values outside `[Q1 − k·IQR, Q3 + k·IQR]` as missing and refills them
/// by interpolation. Fences are global per channel.
pub fn iqr_filter(frame: &TimeSeriesFrame, k: f64) -> Result<TimeSeriesFrame> {
    if frame.missing_count() > 0 {
        return Err(FalnetError::InvalidConfig(
            "iqr_filter expects a frame without missing values".into(),
        ));
    }
    if !(k.is_finite() && k >= 0.0) {
        return Err(FalnetError::InvalidConfig(format!("IQR multiplier {k}")));
    }
    let mut out = frame.clone();
    for c in 0..frame.n_channels() {
        let mut col = frame.column(c);
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile_type7(&sorted, 0.25);
        let q3 = quantile_type7(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - k * iqr, q3 + k * iqr);
        let mut flagged = false;
        for v in col.iter_mut() {
            if *v < lo || *v > hi {
                *v = f64::NAN;
                flagged = true;
            }
        }
        if flagged {
            interpolate_series(&mut col)
                .ok_or_else(|| FalnetError::ChannelMissing(frame.channels[c].clone()))?;
            out.set_column(c, &col);
        }
    }
    Ok(out)
}

/// Interpolation followed by IQR outlier replacement (k = 1.5).
pub fn clean(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    iqr_filter(&interpolate_missing(frame)?, 1.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub channels: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Per-channel extrema, ignoring missing cells.
    pub fn fit(frame: &TimeSeriesFrame) -> Result<Self> {
        let mut min = Vec::with_capacity(frame.n_channels());
        let mut max = Vec::with_capacity(frame.n_channels());
        for c in 0..frame.n_channels() {
            let col = frame.column(c);
            let obs = col.iter().copied().filter(|v| !v.is_nan());
            let (lo, hi) = obs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            if lo > hi {
                return Err(FalnetError::ChannelMissing(frame.channels[c].clone()));
            }
            min.push(lo);
            max.push(hi);
        }
        Ok(Self {
            channels: frame.channels.clone(),
            min,
            max,
        })
    }

    fn range(&self, c: usize) -> Result<f64> {
        let r = self.max[c] - self.min[c];
        if r > 0.0 {
            Ok(r)
        } else {
            Err(FalnetError::DegenerateChannel(self.channels[c].clone()))
        }
    }

    fn check_channels(&self, frame: &TimeSeriesFrame) -> Result<()> {
        if frame.channels != self.channels {
            return Err(FalnetError::ShapeMismatch(
                "frame channels differ from the fitted scaler".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check_channels(frame)?;
        let mut out = frame.clone();
        for c in 0..frame.n_channels() {
            let col = self.apply_channel(c, &frame.column(c))?;
            out.set_column(c, &col);
        }
        Ok(out)
    }

    pub fn invert(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check_channels(frame)?;
        let mut out = frame.clone();
        for c in 0..frame.n_channels() {
            let col = self.invert_channel(c, &frame.column(c))?;
            out.set_column(c, &col);
        }
        Ok(out)
    }

    pub fn apply_channel(&self, c: usize, values: &[f64]) -> Result<Vec<f64>> {
        let range = self.range(c)?;
        Ok(values.iter().map(|v| (v - self.min[c]) / range).collect())
    }

    pub fn invert_channel(&self, c: usize, values: &[f64]) -> Result<Vec<f64>> {
        let range = self.range(c)?;
        Ok(values.iter().map(|v| v * range + self.min[c]).collect())
    }
}

/// Many-to-one supervised pairs cut from a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    /// One `[window_len × features]` matrix per sample.
    pub inputs: Vec<Matrix>,
    pub targets: Vec<f64>,
    /// Frame row of each target.
    pub target_index: Vec<usize>,
    pub window_len: usize,
    pub horizon: usize,
    pub target_channel: String,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::cols)
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> WindowedDataset {
        WindowedDataset {
            inputs: self.inputs[range.clone()].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            target_index: self.target_index[range].to_vec(),
            window_len: self.window_len,
            horizon: self.horizon,
            target_channel: self.target_channel.clone(),
        }
    }
}

pub fn make_windows(
    frame: &TimeSeriesFrame,
    window_len: usize,
    horizon: usize,
    target_channel: &str,
) -> Result<WindowedDataset> {
    let c = frame.channel_index(target_channel)?;
    make_windows_with_targets(frame, &frame.column(c), window_len, horizon, target_channel)
}

/// Windows over `frame` whose labels come from a separate `targets` series
/// aligned with the frame rows.
pub fn make_windows_with_targets(
    frame: &TimeSeriesFrame,
    targets: &[f64],
    window_len: usize,
    horizon: usize,
    target_channel: &str,
) -> Result<WindowedDataset> {
    if window_len == 0 || horizon == 0 {
        return Err(FalnetError::InvalidConfig(
            "window length and horizon must be positive".into(),
        ));
    }
    if targets.len() != frame.len() {
        return Err(FalnetError::ShapeMismatch("target series length".into()));
    }
    if frame.missing_count() > 0 || targets.iter().any(|v| v.is_nan()) {
        return Err(FalnetError::InvalidConfig(
            "windows require a frame without missing values".into(),
        ));
    }
    let needed = window_len + horizon;
    if frame.len() < needed {
        return Err(FalnetError::InsufficientHistory {
            len: frame.len(),
            needed,
        });
    }
    let samples = frame.len() - needed + 1;
    let f = frame.n_channels();
    let mut inputs = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    let mut index = Vec::with_capacity(samples);
    for i in 0..samples {
        let block = frame.values[i * f..(i + window_len) * f].to_vec();
        inputs.push(Matrix::from_vec_unchecked(window_len, f, block));
        let t = i + window_len + horizon - 1;
        labels.push(targets[t]);
        index.push(t);
    }
    Ok(WindowedDataset {
        inputs,
        targets: labels,
        target_index: index,
        window_len,
        horizon,
        target_channel: target_channel.to_string(),
    })
}

/// Number of leading samples that go to the training side of an `n`-sample split.
pub fn split_point(n: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FalnetError::InvalidConfig(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    if n < 2 {
        return Err(FalnetError::InsufficientHistory { len: n, needed: 2 });
    }
    let cut = (train_fraction * n as f64).floor() as usize;
    if cut == 0 || cut == n {
        return Err(FalnetError::InsufficientHistory { len: n, needed: 2 });
    }
    Ok(cut)
}

/// Chronological train/test split: the first `floor(fraction·n)` samples train.
pub fn chrono_split(
    dataset: &WindowedDataset,
    train_fraction: f64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    let n = dataset.len();
    let cut = split_point(n, train_fraction)?;
    Ok((dataset.subset(0..cut), dataset.subset(cut..n)))
}
