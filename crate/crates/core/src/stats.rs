//! Sample statistics and the Kolmogorov–Smirnov machinery.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Asymptotic Kolmogorov distribution `P(sqrt(n) D_n <= x)`.
pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 0.3 {
        // small-x series: sqrt(2π)/x Σ exp(-(2k-1)^2 π^2 / (8x^2))
        let c = (2.0 * std::f64::consts::PI).sqrt() / x;
        let s: f64 = (1..=20)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-m * m * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp()
            })
            .sum();
        return c * s;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    1.0 - 2.0 * s
}

/// Quantile of the asymptotic Kolmogorov distribution.
pub fn kolmogorov_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (0.05, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Standard deviation of the asymptotic Kolmogorov law, `sqrt(π²/12 - π ln²2/2)`.
pub const KOLMOGOROV_SD: f64 = 0.2603;

/// One-sample KS statistic `sup |F_n - F|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |acc: f64, (i, &x)| {
        let f = cdf(x);
        let upper = (i as f64 + 1.0) / n - f;
        let lower = f - i as f64 / n;
        acc.max(upper).max(lower)
    })
}

/// 1% critical value of the KS statistic for `n` samples.
pub fn ks_threshold_1pct(n: usize) -> f64 {
    kolmogorov_quantile(0.99) / (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn within(&self, target: f64, k_sigma: f64) -> bool {
        (self.value - target).abs() <= k_sigma * self.stderr
    }
}

pub fn mean(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Estimate {
        value: m,
        stderr: (v / n).sqrt(),
    }
}

/// Unbiased sample variance with its standard error from the fourth central
/// moment.
pub fn variance(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    Estimate {
        value: m2 * n / (n - 1.0).max(1.0),
        stderr: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    }
}

/// Second moment about zero, for samples known to have mean zero.
pub fn second_moment(xs: &[f64]) -> Estimate {
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    mean(&sq)
}

/// Pearson correlation with the large-sample standard error `(1-r²)/sqrt(n)`.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    let r = if sxx > 0.0 && syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 };
    Estimate {
        value: r,
        stderr: (1.0 - r * r) / n.sqrt(),
    }
}

/// Least-squares line `y = a + b x`; returns `(a, b, rms residual)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    (a, b, (rss / n).sqrt())
}

/// Least-squares plane `z = a + b x + c y`; returns `(a, b, c, rms residual)`.
pub fn linear_fit2(xs: &[f64], ys: &[f64], zs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mz = zs.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((x, y), z) in xs.iter().zip(ys).zip(zs) {
        let (dx, dy, dz) = (x - mx, y - my, z - mz);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    let (b, c) = if det.abs() > 1e-12 * sxx * syy {
        ((sxz * syy - syz * sxy) / det, (syz * sxx - sxz * sxy) / det)
    } else if sxx > 0.0 {
        (sxz / sxx, 0.0)
    } else {
        (0.0, 0.0)
    };
    let a = mz - b * mx - c * my;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .zip(zs)
        .map(|((x, y), z)| (z - a - b * x - c * y).powi(2))
        .sum();
    (a, b, c, (rss / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use approx::assert_relative_eq;

    #[test]
    fn normal_cdf_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-11);
        assert_relative_eq!(normal_cdf(-2.0), 0.022750131948179195, epsilon = 1e-11);
    }

    #[test]
    fn kolmogorov_quantiles() {
        // tabulated asymptotic critical values
        assert!((kolmogorov_quantile(0.99) - 1.6276).abs() < 1e-4);
        assert!((kolmogorov_quantile(0.95) - 1.3581).abs() < 1e-4);
        // both series agree where they overlap
        let a = kolmogorov_cdf(0.3 - 1e-12);
        let b = kolmogorov_cdf(0.3 + 1e-12);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn kolmogorov_sd_matches_closed_form() {
        let pi = std::f64::consts::PI;
        let ln2 = 2f64.ln();
        let sd = (pi * pi / 12.0 - pi * ln2 * ln2 / 2.0).sqrt();
        assert!((sd - KOLMOGOROV_SD).abs() < 1e-4);
    }

    #[test]
    fn ks_degenerate_and_exact() {
        let zeros = vec![0.0; 100];
        assert_relative_eq!(ks_statistic(&zeros, normal_cdf), 0.5, epsilon = 1e-15);
        let one = [0.0];
        assert_relative_eq!(ks_statistic(&one, normal_cdf), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn variance_estimate_of_normals() {
        let mut s = SeedStream::new(1, 0);
        let xs: Vec<f64> = (0..50_000).map(|_| s.normal()).collect();
        let v = variance(&xs);
        assert!(v.within(1.0, 4.0), "{v:?}");
        assert!((v.stderr - (2.0f64 / 50_000.0).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (a, b, r) = linear_fit(&xs, &ys);
        assert_relative_eq!(a, 3.0, epsilon = 1e-12);
        assert_relative_eq!(b, -0.5, epsilon = 1e-12);
        assert!(r < 1e-12);
        let zs: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x - 0.25 * x * x).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let (a, b, c, r) = linear_fit2(&xs, &ys, &zs);
        assert!((a - 1.0).abs() < 1e-9 && (b - 2.0).abs() < 1e-9 && (c + 0.25).abs() < 1e-9 && r < 1e-9);
    }
}
