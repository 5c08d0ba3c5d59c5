//! Monte Carlo summaries and log-log regression.

use crate::error::{invalid, Result};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl MomentEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self { mean, stderr: (var / n).sqrt(), count: xs.len() }
    }

    /// `(E X)^{1/p}` with its delta-method standard error.
    pub fn root(&self, p: f64) -> Self {
        let r = self.mean.powf(1.0 / p);
        Self {
            mean: r,
            stderr: self.stderr * r / (p * self.mean),
            count: self.count,
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Ordinary least squares with a 95% confidence interval on the slope.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let k = x.len();
    if k < 3 || y.len() != k {
        return invalid("line fit needs at least three points");
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("line fit needs distinct abscissae");
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let df = (k - 2) as f64;
    let se = (rss / df / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, df).map(|t| t.inverse_cdf(0.975)).unwrap_or(f64::NAN);
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr: se,
        ci_low: slope - q * se,
        ci_high: slope + q * se,
    })
}

/// Log-log regression of estimates against a scale variable, judged against
/// an expected exponent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub x: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub expected_slope: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ScalingReport {
    pub fn fit(x: Vec<f64>, est: &[MomentEstimate], expected: f64, tolerance: f64) -> Result<Self> {
        if est.iter().any(|e| !(e.mean > 0.0)) || x.iter().any(|v| !(*v > 0.0)) {
            return invalid("log-log fit needs positive values");
        }
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = est.iter().map(|e| e.mean.ln()).collect();
        let f = fit_line(&lx, &ly)?;
        Ok(Self {
            x,
            estimate: est.iter().map(|e| e.mean).collect(),
            stderr: est.iter().map(|e| e.stderr).collect(),
            slope: f.slope,
            intercept: f.intercept,
            ci_low: f.ci_low,
            ci_high: f.ci_high,
            expected_slope: expected,
            tolerance,
            pass: (f.slope - expected).abs() <= tolerance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_power_law() {
        let x: Vec<f64> = (1..=6).map(|i| i as f64 * 0.1).collect();
        let est: Vec<MomentEstimate> = x
            .iter()
            .map(|v| MomentEstimate { mean: 3.0 * v.powf(0.75), stderr: 0.0, count: 10 })
            .collect();
        let r = ScalingReport::fit(x, &est, 0.75, 0.01).unwrap();
        assert_relative_eq!(r.slope, 0.75, epsilon = 1e-12);
        assert_relative_eq!(r.intercept, 3f64.ln(), epsilon = 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn confidence_interval_uses_student_quantile() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.1, 0.9, 2.2, 2.9];
        let f = fit_line(&x, &y).unwrap();
        // t_{0.975, 2} = 4.302653
        assert_relative_eq!((f.ci_high - f.slope) / f.slope_stderr, 4.302_652_7, epsilon = 1e-5);
    }

    #[test]
    fn moment_root_error() {
        let m = MomentEstimate { mean: 4.0, stderr: 0.4, count: 100 }.root(2.0);
        assert_relative_eq!(m.mean, 2.0);
        assert_relative_eq!(m.stderr, 0.1);
    }
}
