//! Local means over non-overlapping blocks of `p_n` observations.

use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::linalg::KahanSum;
use crate::model::SamplingScheme;
use crate::simulate::ObservationSeries;

/// Block means `Ȳ_j = (1/p_n) Σ_{i<p_n} Y_{j p_n + i}`, `j = 0..k_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMeanSeries {
    scheme: SamplingScheme,
    dim: usize,
    /// Row-major `k_n × d`.
    means: Vec<f64>,
}

impl LocalMeanSeries {
    pub fn from_means(scheme: SamplingScheme, dim: usize, means: Vec<f64>) -> Result<Self> {
        if dim == 0 || means.len() != scheme.k * dim {
            return Err(QlaError::DimensionMismatch(format!(
                "expected {} block means, got {}",
                scheme.k * dim,
                means.len()
            )));
        }
        Ok(Self { scheme, dim, means })
    }

    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.scheme.k
    }
    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
    pub fn mean(&self, j: usize) -> &[f64] {
        &self.means[j * self.dim..(j + 1) * self.dim]
    }
    pub fn means(&self) -> &[f64] {
        &self.means
    }
}

/// Block means with compensated summation; observations past `k_n p_n` are ignored.
pub fn local_means(series: &ObservationSeries) -> Result<LocalMeanSeries> {
    let scheme = *series.scheme();
    let (p, k, d) = (scheme.p, scheme.k, series.dim());
    let need = k * p;
    if series.len() < need {
        return Err(QlaError::InsufficientData {
            have: series.len(),
            need,
        });
    }
    let inv_p = 1.0 / p as f64;
    let mut means = Vec::with_capacity(k * d);
    let mut acc = vec![KahanSum::new(); d];
    for j in 0..k {
        acc.iter_mut().for_each(|a| *a = KahanSum::new());
        for i in 0..p {
            for (a, &y) in acc.iter_mut().zip(series.value(j * p + i)) {
                a.add(y);
            }
        }
        means.extend(acc.iter().map(|a| a.value() * inv_p));
    }
    LocalMeanSeries::from_means(scheme, d, means)
}

/// Rows `Ȳ_{j+1} − Ȳ_j`, `j = 0..k_n−1`, flattened row-major.
pub fn block_increments(lm: &LocalMeanSeries) -> Result<Vec<f64>> {
    let k = lm.len();
    if k < 2 {
        return Err(QlaError::InsufficientBlocks { k_n: k });
    }
    let d = lm.dim();
    let mut out = Vec::with_capacity((k - 1) * d);
    for j in 0..k - 1 {
        let (a, b) = (lm.mean(j), lm.mean(j + 1));
        out.extend(a.iter().zip(b).map(|(x, y)| y - x));
    }
    Ok(out)
}

/// Second-moment constants of the block Brownian functionals, per unit `Δ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaMoments {
    /// `E[ζ ζᵀ] / Δ_n`
    pub m: f64,
    /// `E[ζ' ζ'ᵀ] / Δ_n`
    pub m_prime: f64,
    /// `E[ζ ζ'ᵀ] / Δ_n`
    pub chi: f64,
}

pub fn zeta_moment_constants(p: usize) -> ZetaMoments {
    let p = p as f64;
    let p2 = p * p;
    ZetaMoments {
        m: 1.0 / 3.0 + 1.0 / (2.0 * p) + 1.0 / (6.0 * p2),
        m_prime: 1.0 / 3.0 - 1.0 / (2.0 * p) + 1.0 / (6.0 * p2),
        chi: (1.0 - 1.0 / p2) / 6.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn series(values: Vec<f64>, h: f64) -> ObservationSeries {
        let scheme = SamplingScheme::build(values.len() - 1, h, 2.0).unwrap();
        ObservationSeries::new(scheme, 1, values).unwrap()
    }

    #[test]
    fn constant_and_hand_averages() {
        let s = series(vec![2.5; 41], 0.25);
        let lm = local_means(&s).unwrap();
        assert_eq!(lm.len(), 20);
        assert!(lm.means().iter().all(|&m| m == 2.5));

        let odd: Vec<f64> = (0..9).map(|i| (2 * i + 1) as f64).collect();
        let lm = local_means(&series(odd, 0.25)).unwrap();
        assert_eq!(lm.means(), &[2.0, 6.0, 10.0, 14.0]);
        let inc = block_increments(&lm).unwrap();
        assert_eq!(inc, vec![4.0; 3]);
    }

    #[test]
    fn linear_means_have_constant_increments() {
        let lm = LocalMeanSeries::from_means(
            SamplingScheme::build(20, 0.25, 2.0).unwrap(),
            1,
            (0..10).map(|j| 0.5 + 1.5 * j as f64).collect(),
        )
        .unwrap();
        assert!(block_increments(&lm).unwrap().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn matches_naive_double_loop() {
        let values: Vec<f64> = (0..1001).map(|i| ((i * 7919) % 1013) as f64 * 1e-3 - 0.4).collect();
        let scheme = SamplingScheme::build(1000, 1.0 / 49.0, 2.0).unwrap();
        let s = ObservationSeries::new(scheme, 1, values.clone()).unwrap();
        let lm = local_means(&s).unwrap();
        for j in 0..scheme.k {
            let mut naive = 0.0;
            for i in 0..scheme.p {
                naive += values[j * scheme.p + i];
            }
            naive /= scheme.p as f64;
            let tol = f64::EPSILON * naive.abs().max(1.0) * scheme.p as f64;
            assert!((lm.mean(j)[0] - naive).abs() <= tol);
        }
    }

    #[test]
    fn insufficient_data() {
        let scheme = SamplingScheme::build(100, 0.25, 2.0).unwrap();
        let short = ObservationSeries::new(
            SamplingScheme { n: 10, ..scheme },
            1,
            vec![0.0; 11],
        )
        .unwrap();
        assert!(matches!(local_means(&short), Err(QlaError::InsufficientData { .. })));
    }

    #[test]
    fn zeta_constants() {
        let z = zeta_moment_constants(1);
        assert!((z.m - 1.0).abs() < 1e-15 && z.m_prime.abs() < 1e-15 && z.chi == 0.0);
        let z = zeta_moment_constants(2);
        assert!((z.m - 0.625).abs() < 1e-15);
        assert!((z.m_prime - 0.125).abs() < 1e-15);
        assert!((z.chi - 0.125).abs() < 1e-15);
        let z = zeta_moment_constants(1000);
        assert!((z.m - 1.0 / 3.0).abs() < 1e-3);
        assert!((z.m_prime - 1.0 / 3.0).abs() < 1e-3);
        assert!((z.chi - 1.0 / 6.0).abs() < 1e-3);
    }

    #[test]
    fn zeta_sum_identity_exact() {
        for p in 1..=64i64 {
            let r = |n: i64, d: i64| Ratio::new(n, d);
            let m = r(1, 3) + r(1, 2 * p) + r(1, 6 * p * p);
            let mp = r(1, 3) - r(1, 2 * p) + r(1, 6 * p * p);
            assert_eq!(m + mp, r(2, 3) + r(1, 3 * p * p));
            let z = zeta_moment_constants(p as usize);
            let approx = 2.0 / 3.0 + 1.0 / (3.0 * (p * p) as f64);
            assert!((z.m + z.m_prime - approx).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn local_means_are_linear(
            ys in proptest::collection::vec(-10.0f64..10.0, 61),
            zs in proptest::collection::vec(-10.0f64..10.0, 61),
            a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let combo: Vec<f64> = ys.iter().zip(&zs).map(|(y, z)| a * y + b * z).collect();
            let h = 1.0 / 9.0;
            let my = local_means(&series(ys, h)).unwrap();
            let mz = local_means(&series(zs, h)).unwrap();
            let mc = local_means(&series(combo, h)).unwrap();
            for j in 0..mc.len() {
                let lin = a * my.mean(j)[0] + b * mz.mean(j)[0];
                prop_assert!((mc.mean(j)[0] - lin).abs() < 1e-12);
            }
        }
    }
}
