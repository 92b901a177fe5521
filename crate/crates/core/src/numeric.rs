//! Small numerical helpers shared across modules: compensated summation,
//! sample statistics and least-squares line fits.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated sum of a sequence.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

/// Sample mean, unbiased variance and standard error of the mean.
///
/// Returns `None` for an empty sample. A single value has zero standard error.
pub fn mean_se(values: &[f64]) -> Option<MeanSe> {
    let count = values.len();
    if count == 0 {
        return None;
    }
    let mean = compensated_sum(values.iter().copied()) / count as f64;
    let var = sample_variance_about(values, mean);
    Some(MeanSe { mean, std_error: (var / count as f64).sqrt(), count })
}

/// Unbiased sample variance (zero for fewer than two values).
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = compensated_sum(values.iter().copied()) / values.len() as f64;
    sample_variance_about(values, mean)
}

fn sample_variance_about(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (values.len() - 1) as f64
}

/// Ordinary least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Coefficient of determination; 1 for a perfect fit, 1 also when `y` is constant.
    pub r2: f64,
}

/// Least-squares fit; `None` if fewer than two points or all `x` equal.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let m = x.len();
    if m < 2 || y.len() != m {
        return None;
    }
    let mx = compensated_sum(x.iter().copied()) / m as f64;
    let my = compensated_sum(y.iter().copied()) / m as f64;
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    if sxx <= 0.0 {
        return None;
    }
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let syy = compensated_sum(y.iter().map(|b| (b - my) * (b - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy <= 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LineFit { intercept, slope, r2 })
}

/// `log Σ exp(a_i)` evaluated with the max shift.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + compensated_sum(a.iter().map(|v| (v - m).exp())).ln()
}

/// Softmax `e^{a_i}/Σ e^{a_j}` evaluated in the log domain.
pub fn softmax(a: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(a);
    a.iter().map(|v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn line_fit_on_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let w = softmax(&[0.0, 700.0, 1400.0]);
        assert!(w.iter().all(|v| v.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_se_of_constant_sample() {
        let s = mean_se(&[3.0; 10]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.std_error, 0.0);
        assert!(mean_se(&[]).is_none());
    }
}
