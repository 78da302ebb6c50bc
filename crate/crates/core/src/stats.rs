//! Summary statistics used by the Monte Carlo harness.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-pass sample covariance (divisor `n − 1`) of row vectors; `None` for fewer than two rows.
pub fn covariance(rows: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let m = rows[0].len();
    let means: Vec<f64> = (0..m).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; m]; m];
    for r in rows {
        for i in 0..m {
            let di = r[i] - means[i];
            for j in 0..=i {
                cov[i][j] += di * (r[j] - means[j]);
            }
        }
    }
    for i in 0..m {
        for j in 0..=i {
            let v = cov[i][j] / (n - 1) as f64;
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    Some(cov)
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Raw moment `E[X^k]`.
pub fn raw_moment(xs: &[f64], k: i32) -> f64 {
    xs.iter().map(|x| x.powi(k)).sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Kolmogorov–Smirnov distance between the sample and `N(0, 1)`.
pub fn ks_statistic_normal(xs: &[f64]) -> f64 {
    let std = Normal::standard();
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std.cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sided 1% critical value of the one-sample KS statistic
/// (Stephens' small-sample form of `1.628/√n`).
pub fn ks_critical_1pct(n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    1.628 / (sn + 0.12 + 0.11 / sn)
}
