//! Small least-squares helpers for rate and slope fits.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (zero for two points).
    pub slope_stderr: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

/// Ordinary least squares y = slope·x + intercept.
pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let slope_stderr = if points.len() > 2 {
        (ss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_stderr,
        rms: (ss / n).sqrt(),
    }
}

impl LinearFit {
    /// Half-width of the two-sided confidence interval of the slope at
    /// `level` (e.g. 0.95) from `points` samples; None below three points.
    pub fn slope_half_width(&self, points: usize, level: f64) -> Option<f64> {
        if points < 3 || !(0.0..1.0).contains(&level) {
            return None;
        }
        let t = StudentsT::new(0.0, 1.0, (points - 2) as f64).ok()?;
        Some(t.inverse_cdf(0.5 + 0.5 * level) * self.slope_stderr)
    }
}

/// Fit of y = c·x^s in log-log coordinates; returns (c, s, fit).
pub fn power_law_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, LinearFit) {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x.ln(), y.abs().ln()))
        .collect();
    let fit = linear_fit(&pts);
    (fit.intercept.exp(), fit.slope, fit)
}

/// Observed convergence orders between consecutive levels refined by `ratio`.
pub fn observed_orders(errors: &[f64], ratio: f64) -> Vec<f64> {
    errors
        .windows(2)
        .map(|w| (w[0] / w[1]).ln() / ratio.ln())
        .collect()
}
