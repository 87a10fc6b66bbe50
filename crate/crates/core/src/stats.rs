//! Estimators shared by the Monte Carlo modules.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::SQRT_2;

/// Running mean and variance (Welford). Merging is only ever done in a fixed
/// order so results do not depend on scheduling.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanVar {
    pub count: f64,
    pub mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanVar) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count / n;
        self.m2 += other.m2 + d * d * self.count * other.count / n;
        self.count = n;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2.0 {
            0.0
        } else {
            self.m2 / (self.count - 1.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count < 2.0 {
            0.0
        } else {
            libm::sqrt(self.variance() / self.count)
        }
    }
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let mut acc = MeanVar::new();
    xs.iter().for_each(|&x| acc.push(x));
    (acc.mean, acc.stderr())
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / syy
    };
    let (slope_stderr, intercept_stderr) = if n > 2 {
        let s2 = ss_res / (nf - 2.0);
        (
            libm::sqrt(s2 / sxx),
            libm::sqrt(s2 * (1.0 / nf + mx * mx / sxx)),
        )
    } else {
        (0.0, 0.0)
    };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        slope_stderr,
        intercept_stderr,
    })
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = libm::exp(-2.0 * kf * kf * lambda * lambda);
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against N(0,1).
/// Returns the statistic `D` and its p-value (Stephens' small-sample correction).
pub fn ks_standard_normal(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = normal_cdf(x);
        let lo = i as f64 / nf;
        let hi = (i + 1) as f64 / nf;
        d = d.max(libm::fabs(f - lo)).max(libm::fabs(hi - f));
    }
    let sn = libm::sqrt(nf);
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    (d, kolmogorov_tail(lambda))
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Pearson correlation of paired observations.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let a = x[i] - mx;
        let b = y[i] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / libm::sqrt(sxx * syy)
    }
}

/// Standard error of each coordinate across independent replicate vectors.
pub fn spread_stderr(samples: &[Vec<f64>], len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            if samples.len() < 2 {
                return 0.0;
            }
            let mut acc = MeanVar::new();
            samples.iter().for_each(|s| acc.push(s[i]));
            acc.stderr()
        })
        .collect()
}

/// Unbiased covariance (`n x n`, row-major) of the given rows.
pub fn sample_covariance(rows: &[&[f64]], n: usize) -> Vec<f64> {
    let m = rows.len() as f64;
    let mut mean = vec![0.0; n];
    for r in rows {
        for i in 0..n {
            mean[i] += r[i] / m;
        }
    }
    let mut cov = vec![0.0; n * n];
    for r in rows {
        for i in 0..n {
            for j in 0..n {
                cov[i * n + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let denom = (m - 1.0).max(1.0);
    cov.iter_mut().for_each(|v| *v /= denom);
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let mut a = MeanVar::new();
        xs.iter().for_each(|&x| a.push(x));
        assert!((a.mean - 5.0).abs() < 1e-14);
        assert!((a.variance() - 16.5).abs() < 1e-12);
        let mut b = MeanVar::new();
        let mut c = MeanVar::new();
        xs[..2].iter().for_each(|&x| b.push(x));
        xs[2..].iter().for_each(|&x| c.push(x));
        b.merge(&c);
        assert!((b.variance() - a.variance()).abs() < 1e-12);
    }

    #[test]
    fn exact_line_fit() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kolmogorov_tail_reference_points() {
        // Classical critical values of the Kolmogorov distribution.
        assert!((kolmogorov_tail(1.3581) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_tail(1.6276) - 0.01).abs() < 2e-4);
    }

    #[test]
    fn ks_rejects_shifted_sample() {
        let xs: vec::Vec<f64> = (0..2000).map(|i| (i as f64 + 0.5) / 2000.0 * 4.0 - 1.0).collect();
        let (_, p) = ks_standard_normal(&xs);
        assert!(p < 1e-6);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
    }
}
