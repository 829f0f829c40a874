use serde::{Deserialize, Serialize};

use crate::error::{FalnetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub r2: f64,
}

impl MetricsReport {
    /// `{"mae":…,"mse":…,"rmse":…,"r2":…}` with six decimals.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"mae\":{:.6},\"mse\":{:.6},\"rmse\":{:.6},\"r2\":{:.6}}}",
            self.mae, self.mse, self.rmse, self.r2
        )
    }
}

/// MAE, MSE, RMSE and R² of `y_hat` against `y`.
///
/// RMSE is always derived from MSE. A constant `y` leaves R² undefined and is
/// reported as [`FalnetError::ConstantTarget`].
pub fn evaluate(y: &[f64], y_hat: &[f64]) -> Result<MetricsReport> {
    if y.len() != y_hat.len() {
        return Err(FalnetError::ShapeMismatch(format!(
            "{} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(FalnetError::Empty("metrics input".into()));
    }
    let n = y.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        let e = a - b;
        abs += e.abs();
        sq += e * e;
    }
    let mean = y.iter().sum::<f64>() / n;
    let total: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if total == 0.0 {
        return Err(FalnetError::ConstantTarget);
    }
    let mse = sq / n;
    Ok(MetricsReport {
        mae: abs / n,
        mse,
        rmse: mse.sqrt(),
        r2: 1.0 - sq / total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let y = [3.0, -1.0, 8.5];
        let m = evaluate(&y, &y).unwrap();
        assert_eq!((m.mae, m.mse, m.rmse, m.r2), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn mean_prediction() {
        let m = evaluate(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.mse - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.rmse - 0.816_496_580_927_726).abs() < 1e-12);
        assert_eq!(m.r2, 0.0);
    }

    #[test]
    fn reported_mse_rmse_pair_is_consistent() {
        assert!((1158.2528_f64.sqrt() - 34.0331).abs() < 0.01);
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate(&[1.0], &[1.0, 2.0]), Err(FalnetError::ShapeMismatch(_))));
        assert!(evaluate(&[], &[]).is_err());
        assert!(matches!(evaluate(&[2.0, 2.0], &[1.0, 3.0]), Err(FalnetError::ConstantTarget)));
    }

    #[test]
    fn negative_r2_allowed() {
        let m = evaluate(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!(m.r2 < 0.0);
    }

    #[test]
    fn json_layout() {
        let m = evaluate(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(
            m.to_json(),
            "{\"mae\":0.666667,\"mse\":0.666667,\"rmse\":0.816497,\"r2\":0.000000}"
        );
    }
}
