//! Small statistics helpers shared by the estimators and the runner.

use statrs::distribution::{ContinuousCDF, Normal};

/// Ordinary least-squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for a perfect fit.
    pub slope_se: f64,
}

pub(crate) fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        sxx += dx * dx;
        sxy += dx * (yi - mean_y);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = mean_y - slope * mean_x;
    let slope_se = if x.len() > 2 && sxx > 0.0 {
        let ssr: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| {
                let r = yi - intercept - slope * xi;
                r * r
            })
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LineFit {
        slope,
        intercept,
        slope_se,
    }
}

/// Sample mean and unbiased sample standard deviation, accumulated relative
/// to the first value so that identical inputs give their exact value and a
/// zero deviation.
pub(crate) fn mean_std(mut values: impl ExactSizeIterator<Item = f64>) -> (f64, f64) {
    let n = values.len();
    let Some(shift) = values.next() else {
        return (f64::NAN, f64::NAN);
    };
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for v in values {
        let d = v - shift;
        sum += d;
        sum_sq += d * d;
    }
    let nf = n as f64;
    let mean = shift + sum / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - sum * sum / nf) / (nf - 1.0)).max(0.0);
    (mean, var.sqrt())
}

/// Nearest-rank quantile of already sorted data; tolerates infinite entries.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Upper `p`-quantile of the standard normal distribution.
pub(crate) fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
