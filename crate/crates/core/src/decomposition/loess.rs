//! Degree-0/1 LOESS over equally spaced abscissae `0..n` with tricube weights.

use crate::error::{FalnetError, Result};

/// Smooths `series` with local weighted regression.
///
/// `span` is the fraction of points in each local neighbourhood; the window
/// holds every point within the distance of the `ceil(span·n)`-th nearest
/// neighbour, and the tricube bandwidth sits one sample beyond that distance
/// so every window point carries positive weight.
pub fn loess_smooth(series: &[f64], span: f64, degree: usize) -> Result<Vec<f64>> {
    if degree > 1 {
        return Err(FalnetError::InvalidConfig(format!(
            "LOESS degree {degree} unsupported (0 or 1)"
        )));
    }
    if series.len() < 3 {
        return Err(FalnetError::InsufficientHistory {
            len: series.len(),
            needed: 3,
        });
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(FalnetError::InvalidConfig(format!("LOESS span {span} outside (0, 1]")));
    }
    let q = neighbours_for_span(series.len(), span);
    if q < degree + 2 {
        return Err(FalnetError::InvalidConfig(format!(
            "LOESS window of {q} points is too small for degree {degree}"
        )));
    }
    Ok(loess_with_neighbours(series, q, degree))
}

pub(crate) fn neighbours_for_span(n: usize, span: f64) -> usize {
    ((span * n as f64).ceil() as usize).clamp(1, n)
}

/// Distance to the `q`-th nearest point of `i` on the grid `0..n`.
fn neighbour_distance(i: usize, n: usize, q: usize) -> usize {
    let count = |d: usize| d.min(i) + d.min(n - 1 - i) + 1;
    let mut d = (q.saturating_sub(1)) / 2;
    while count(d) < q {
        d += 1;
    }
    d
}

#[inline]
fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

/// LOESS without the public argument checks; `q` is clamped to `[1, n]`.
pub(crate) fn loess_with_neighbours(series: &[f64], q: usize, degree: usize) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let q = q.clamp(1, n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let d = neighbour_distance(i, n, q);
        let h = (d + 1) as f64;
        let lo = i.saturating_sub(d);
        let hi = (i + d).min(n - 1);

        let mut sw = 0.0;
        let mut swx = 0.0;
        let mut swy = 0.0;
        for j in lo..=hi {
            let w = tricube((j as f64 - i as f64).abs() / h);
            sw += w;
            swx += w * j as f64;
            swy += w * series[j];
        }
        let xbar = swx / sw;
        let ybar = swy / sw;
        if degree == 0 {
            out.push(ybar);
            continue;
        }
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for j in lo..=hi {
            let w = tricube((j as f64 - i as f64).abs() / h);
            let dx = j as f64 - xbar;
            sxx += w * dx * dx;
            sxy += w * dx * (series[j] - ybar);
        }
        let fit = if sxx > 1e-12 * sw {
            ybar + (sxy / sxx) * (i as f64 - xbar)
        } else {
            ybar
        };
        out.push(fit);
    }
    out
}
