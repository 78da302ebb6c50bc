#![allow(dead_code)]

use qla_core::model::{builtin_ou_model, InitialState, NoiseFamily, NoiseSpec, SamplingScheme, TrueParameters};
use qla_core::simulate::{contaminate, simulate_path, ObservationSeries};
use qla_core::SimSeed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct OuCase {
    pub alpha: f64,
    pub beta: [f64; 2],
    pub lambda: f64,
    pub series: ObservationSeries,
}

pub fn ou_truth(alpha: f64, beta: [f64; 2], lambda: f64) -> TrueParameters {
    TrueParameters {
        alpha: vec![alpha],
        beta: beta.to_vec(),
        noise: NoiseSpec::scalar(lambda, NoiseFamily::Gaussian).unwrap(),
        x0: InitialState::Gaussian {
            mean: vec![beta[1]],
            cov: vec![alpha * alpha / (2.0 * beta[0])],
        },
    }
}

pub fn ou_series(alpha: f64, beta: [f64; 2], lambda: f64, scheme: &SamplingScheme, seed: SimSeed) -> ObservationSeries {
    let truth = ou_truth(alpha, beta, lambda);
    let path = simulate_path(&builtin_ou_model(), &truth, scheme, 4, seed).unwrap();
    contaminate(&path, &truth.noise, seed).unwrap()
}

/// A random OU dataset with parameters well inside the registered boxes.
pub fn random_ou_case(rng: &mut ChaCha8Rng, n_range: (usize, usize), h: f64) -> OuCase {
    let alpha = rng.random_range(0.4..1.6);
    let beta = [rng.random_range(0.5..2.5), rng.random_range(-1.0..1.0)];
    let lambda = rng.random_range(0.01..0.3);
    let n = rng.random_range(n_range.0..=n_range.1);
    let scheme = SamplingScheme::build(n, h, 2.0).unwrap();
    let seed = SimSeed::new(rng.random(), rng.random());
    OuCase {
        alpha,
        beta,
        lambda,
        series: ou_series(alpha, beta, lambda, &scheme, seed),
    }
}

pub fn naive_block_means(y: &[f64], p: usize, k: usize) -> Vec<f64> {
    (0..k).map(|j| y[j * p..(j + 1) * p].iter().sum::<f64>() / p as f64).collect()
}

pub fn naive_lambda(y: &[f64]) -> f64 {
    let n = y.len() - 1;
    (0..n).map(|i| (y[i + 1] - y[i]).powi(2)).sum::<f64>() / (2.0 * n as f64)
}

/// Scalar OU diffusion contrast written out term by term.
pub fn naive_h1(y: &[f64], p: usize, k: usize, delta: f64, alpha: f64) -> f64 {
    let m = naive_block_means(y, p, k);
    let lam = naive_lambda(y);
    let s = alpha * alpha + 3.0 * lam;
    let mut total = 0.0;
    for j in 1..=k - 2 {
        let d = m[j + 1] - m[j];
        total += d * d / ((2.0 / 3.0) * delta * s) + s.ln();
    }
    -0.5 * total
}

pub fn naive_h2(y: &[f64], p: usize, k: usize, delta: f64, alpha: f64, beta: &[f64]) -> f64 {
    let m = naive_block_means(y, p, k);
    let mut total = 0.0;
    for j in 1..=k - 2 {
        let drift = -beta[0] * (m[j - 1] - beta[1]);
        let r = m[j + 1] - m[j] - delta * drift;
        total += r * r / (delta * alpha * alpha);
    }
    -0.5 * total
}

/// Sums that make both scalar OU contrasts closed-form in the parameters.
pub struct OuStats {
    pub terms: f64,
    pub lambda: f64,
    pub delta: f64,
    pub sdd: f64,
    pub sd: f64,
    pub sdx: f64,
    pub sx: f64,
    pub sxx: f64,
}

impl OuStats {
    pub fn new(series: &ObservationSeries) -> Self {
        let sc = series.scheme();
        let m = naive_block_means(series.values(), sc.p, sc.k);
        let mut st = OuStats {
            terms: (sc.k - 2) as f64,
            lambda: naive_lambda(series.values()),
            delta: sc.delta,
            sdd: 0.0,
            sd: 0.0,
            sdx: 0.0,
            sx: 0.0,
            sxx: 0.0,
        };
        for j in 1..=sc.k - 2 {
            let (d, x) = (m[j + 1] - m[j], m[j - 1]);
            st.sdd += d * d;
            st.sd += d;
            st.sdx += d * x;
            st.sx += x;
            st.sxx += x * x;
        }
        st
    }

    pub fn h1(&self, alpha: f64) -> f64 {
        let s = alpha * alpha + 3.0 * self.lambda;
        -0.5 * (1.5 * self.sdd / (self.delta * s) + self.terms * s.ln())
    }

    /// The residual is `D − Δ(c − β₁x)` with `c = β₁β₂`.
    pub fn h2(&self, alpha: f64, beta: &[f64]) -> f64 {
        let (b1, c) = (beta[0], beta[0] * beta[1]);
        let dl = self.delta;
        let q = self.sdd + dl * dl * (c * c * self.terms - 2.0 * c * b1 * self.sx + b1 * b1 * self.sxx)
            - 2.0 * dl * (c * self.sd - b1 * self.sdx);
        -0.5 * q / (dl * alpha * alpha)
    }
}

/// Ridders–Richardson extrapolation of central differences for `∂f/∂x_i`.
pub fn richardson_partial<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], i: usize, h0: f64) -> f64 {
    const LEVELS: usize = 6;
    let mut table = [[0.0f64; LEVELS]; LEVELS];
    let mut p = x.to_vec();
    let mut h = h0;
    let mut best = f64::NAN;
    let mut best_err = f64::INFINITY;
    for r in 0..LEVELS {
        p[i] = x[i] + h;
        let up = f(&p);
        p[i] = x[i] - h;
        let dn = f(&p);
        p[i] = x[i];
        table[r][0] = (up - dn) / (2.0 * h);
        let mut fac = 4.0;
        for c in 1..=r {
            table[r][c] = (fac * table[r][c - 1] - table[r - 1][c - 1]) / (fac - 1.0);
            fac *= 4.0;
            let err = (table[r][c] - table[r][c - 1]).abs().max((table[r][c] - table[r - 1][c - 1]).abs());
            if err < best_err {
                best_err = err;
                best = table[r][c];
            }
        }
        h /= 2.0;
    }
    best
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
