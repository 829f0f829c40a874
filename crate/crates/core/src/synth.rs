//! Seeded synthetic air-quality frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{TimeSeriesFrame, DEFAULT_CHANNELS};
use crate::error::{FalnetError, Result};

/// 2021-01-01T00:00 in hours since the epoch.
pub const SYNTH_START_HOUR: i64 = 447_072;

pub const MIN_SYNTH_LEN: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub level: f64,
    pub diurnal_amplitude: f64,
    pub trend_sigma: f64,
    /// Width of the moving average applied to the random-walk trend.
    pub trend_smoothing: usize,
    pub ar_phi: f64,
    pub ar_sigma: f64,
    /// Per-step probability of a decaying spike.
    pub spike_rate: f64,
    pub spike_height: f64,
    pub spike_decay: f64,
    pub missing_rate: f64,
    pub outlier_rate: f64,
    pub outlier_factor: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            level: 35.0,
            diurnal_amplitude: 10.0,
            trend_sigma: 0.05,
            trend_smoothing: 25,
            ar_phi: 0.7,
            ar_sigma: 1.0,
            spike_rate: 0.0,
            spike_height: 15.0,
            spike_decay: 0.7,
            missing_rate: 0.02,
            outlier_rate: 0.005,
            outlier_factor: 10.0,
        }
    }
}

struct Companion {
    lag: usize,
    scale: f64,
    offset: f64,
    noise: f64,
}

const COMPANIONS: [Companion; 5] = [
    Companion { lag: 1, scale: 1.6, offset: 5.0, noise: 2.0 },
    Companion { lag: 3, scale: 0.2, offset: 3.0, noise: 0.5 },
    Companion { lag: 2, scale: 0.8, offset: 10.0, noise: 2.0 },
    Companion { lag: 1, scale: 0.02, offset: 0.5, noise: 0.05 },
    Companion { lag: 6, scale: -0.5, offset: 60.0, noise: 3.0 },
];

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| FalnetError::InvalidConfig(format!("noise scale {sigma}: {e}")))
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return x.to_vec();
    }
    let half = width / 2;
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// A six-channel hourly frame with `PM2.5` first, gaps as NaN.
pub fn synth_generate(n: usize, seed: u64, spec: &SynthSpec) -> Result<TimeSeriesFrame> {
    if n < MIN_SYNTH_LEN {
        return Err(FalnetError::InsufficientHistory {
            len: n,
            needed: MIN_SYNTH_LEN,
        });
    }
    for (name, p) in [("missing", spec.missing_rate), ("outlier", spec.outlier_rate), ("spike", spec.spike_rate)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(FalnetError::InvalidConfig(format!("{name} rate {p} outside [0, 1]")));
        }
    }
    if !(-1.0 < spec.ar_phi && spec.ar_phi < 1.0) {
        return Err(FalnetError::InvalidConfig(format!("AR coefficient {} must be inside (-1, 1)", spec.ar_phi)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let step = normal(spec.trend_sigma)?;
    let mut walk = Vec::with_capacity(n);
    let mut acc = 0.0;
    for _ in 0..n {
        acc += step.sample(&mut rng);
        walk.push(acc);
    }
    let trend = moving_average(&walk, spec.trend_smoothing);

    let shock = normal(spec.ar_sigma)?;
    let mut ar = 0.0;
    let mut spike = 0.0;
    let mut pm = Vec::with_capacity(n);
    for (t, tr) in trend.iter().enumerate() {
        ar = spec.ar_phi * ar + shock.sample(&mut rng);
        spike *= spec.spike_decay;
        if spec.spike_rate > 0.0 && rng.random_bool(spec.spike_rate) {
            spike += spec.spike_height;
        }
        let diurnal = spec.diurnal_amplitude * (std::f64::consts::TAU * t as f64 / 24.0).sin();
        pm.push((spec.level + tr + diurnal + ar + spike).max(1.0));
    }

    let mut columns = vec![pm.clone()];
    for c in &COMPANIONS {
        let noise = normal(c.noise)?;
        let col = (0..n)
            .map(|t| {
                let src = pm[t.saturating_sub(c.lag)];
                (c.offset + c.scale * src + noise.sample(&mut rng)).max(0.01)
            })
            .collect();
        columns.push(col);
    }

    for col in &mut columns {
        for v in col.iter_mut() {
            let u: f64 = rng.random();
            if u < spec.missing_rate {
                *v = f64::NAN;
            } else if u < spec.missing_rate + spec.outlier_rate {
                *v *= spec.outlier_factor;
            }
        }
    }

    let names = DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect();
    TimeSeriesFrame::from_columns(SYNTH_START_HOUR, names, &columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::format_timestamp;

    fn acf(x: &[f64], lag: usize) -> f64 {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let cov: f64 = (lag..n).map(|t| (x[t] - mean) * (x[t - lag] - mean)).sum();
        cov / var
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec::default();
        let a = synth_generate(500, 3, &spec).unwrap();
        let b = synth_generate(500, 3, &spec).unwrap();
        let c = synth_generate(500, 4, &spec).unwrap();
        let bits = |f: &TimeSeriesFrame| f.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn layout_and_start() {
        let f = synth_generate(48, 0, &SynthSpec::default()).unwrap();
        assert_eq!(f.len(), 48);
        assert_eq!(f.channels[0], "PM2.5");
        assert_eq!(f.n_channels(), 6);
        assert_eq!(format_timestamp(f.timestamps[0]), "2021-01-01T00:00");
        assert!(synth_generate(47, 0, &SynthSpec::default()).is_err());
    }

    #[test]
    fn diurnal_autocorrelation() {
        let spec = SynthSpec {
            missing_rate: 0.0,
            outlier_rate: 0.0,
            ..SynthSpec::default()
        };
        let f = synth_generate(2000, 11, &spec).unwrap();
        assert!(acf(&f.column(0), 24) > 0.3);
    }

    #[test]
    fn blank_and_outlier_fractions() {
        let f = synth_generate(2000, 5, &SynthSpec::default()).unwrap();
        let cells = f.values.len() as f64;
        let blank = f.missing_count() as f64 / cells;
        assert!((0.015..=0.025).contains(&blank), "blank fraction {blank}");

        let clean = synth_generate(
            2000,
            5,
            &SynthSpec {
                missing_rate: 0.0,
                outlier_rate: 0.0,
                ..SynthSpec::default()
            },
        )
        .unwrap();
        assert!(clean.values.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn spikes_raise_the_peak() {
        let quiet = SynthSpec {
            missing_rate: 0.0,
            outlier_rate: 0.0,
            ..SynthSpec::default()
        };
        let spiky = SynthSpec {
            spike_rate: 0.01,
            spike_height: 40.0,
            ..quiet.clone()
        };
        let max = |s: &SynthSpec| synth_generate(1000, 2, s).unwrap().column(0).into_iter().fold(0.0, f64::max);
        assert!(max(&spiky) > max(&quiet) + 10.0);
    }

    #[test]
    fn moving_average_of_constant() {
        assert_eq!(moving_average(&[2.0; 7], 3), vec![2.0; 7]);
        assert_eq!(moving_average(&[0.0, 3.0, 0.0], 3), vec![1.5, 1.0, 1.5]);
    }
}
