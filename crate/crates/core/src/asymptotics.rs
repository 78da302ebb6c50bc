//! Limiting information matrices and the sandwich covariance of the
//! jointly normalised estimators, in block order `(vech Λ, α, β)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::linalg::{self, KahanSum};
use crate::model::{DiffusionModel, InitialState, NoiseSpec, TrueParameters};
use crate::quadrature::gauss_hermite;
use crate::rng::{SimSeed, StreamId};

/// Finite-difference step for derivatives of the model callbacks.
pub const CALLBACK_FD_STEP: f64 = 1e-6;

/// Half-vectorisation index `σ(i, j)` (1-based, `i ≤ j`).
pub fn vech_index(i: usize, j: usize, d: usize) -> Result<usize> {
    if !(1 <= i && i <= j && j <= d) {
        return Err(QlaError::Domain(format!("vech index ({i}, {j}) outside 1 <= i <= j <= {d}")));
    }
    if i == 1 {
        return Ok(j);
    }
    Ok((1..i).map(|l| d - l + 1).sum::<usize>() + j - i + 1)
}

/// Inverse of [`vech_index`].
pub fn vech_pair(s: usize, d: usize) -> Result<(usize, usize)> {
    let len = d * (d + 1) / 2;
    if s == 0 || s > len {
        return Err(QlaError::Domain(format!("vech position {s} outside 1..={len}")));
    }
    let mut start = 0;
    for i in 1..=d {
        let row = d - i + 1;
        if s <= start + row {
            return Ok((i, i + s - start - 1));
        }
        start += row;
    }
    unreachable!("position checked against the length")
}

/// `σ` and its inverse for a fixed dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VechIndexer {
    pub d: usize,
}

impl VechIndexer {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    pub fn len(&self) -> usize {
        self.d * (self.d + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.d == 0
    }

    pub fn index(&self, i: usize, j: usize) -> Result<usize> {
        vech_index(i, j, self.d)
    }

    pub fn pair(&self, s: usize) -> Result<(usize, usize)> {
        vech_pair(s, self.d)
    }

    /// `vech` of a row-major symmetric matrix, upper triangle row by row.
    pub fn vech(&self, m: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d).flat_map(|i| (i..d).map(move |j| m[i * d + j])).collect()
    }
}

/// `W₁` for the noise block.
pub fn w1_matrix(noise: &NoiseSpec) -> Vec<f64> {
    let d = noise.dim();
    let lam = noise.lambda();
    let root = linalg::psd_sqrt(lam, d);
    let kurt = noise.excess_kurtosis_per_coord();
    let vi = VechIndexer::new(d);
    let m0 = vi.len();
    let pairs: Vec<(usize, usize)> = (1..=m0).map(|s| vi.pair(s).expect("in range")).map(|(i, j)| (i - 1, j - 1)).collect();
    let v = |l1: usize, l2: usize, l3: usize, l4: usize| {
        let quartic: f64 = (0..d)
            .map(|k| root[l1 * d + k] * root[l2 * d + k] * root[l3 * d + k] * root[l4 * d + k] * kurt[k])
            .sum();
        quartic + 1.5 * (lam[l1 * d + l3] * lam[l2 * d + l4] + lam[l1 * d + l4] * lam[l2 * d + l3])
    };
    let mut w = vec![0.0; m0 * m0];
    for (a, &(l1, l2)) in pairs.iter().enumerate() {
        for (b, &(l3, l4)) in pairs.iter().enumerate() {
            w[a * m0 + b] = v(l1, l2, l3, l4);
        }
    }
    w
}

/// Settings for approximating `ν` by a long simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErgodicSettings {
    pub t_burn: f64,
    pub t_avg: f64,
    /// Spacing of the points entering the time average.
    pub sample_step: f64,
    pub substeps: usize,
}

impl Default for ErgodicSettings {
    fn default() -> Self {
        Self {
            t_burn: 100.0,
            t_avg: 1e4,
            sample_step: 0.01,
            substeps: 10,
        }
    }
}

/// The invariant law, either in closed form or as a weighted point set
/// (Gauss–Hermite nodes, or the states of an ergodic path).
#[derive(Debug, Clone, PartialEq)]
pub enum InvariantMeasure {
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<f64>,
    },
    ErgodicPath {
        dim: usize,
        states: Vec<f64>,
        /// Time span covered by the averaged states.
        averaging_length: f64,
    },
}

fn gh_nodes_for_dim(d: usize) -> usize {
    match d {
        1 => 256,
        2 => 32,
        3 => 16,
        _ => 8,
    }
}

impl InvariantMeasure {
    /// The closed-form law registered with the model, if any.
    pub fn closed_form(model: &DiffusionModel, params: &TrueParameters) -> Option<Self> {
        model
            .invariant_law(&params.alpha, &params.beta)
            .map(|law| InvariantMeasure::Gaussian { mean: law.mean, cov: law.cov })
    }

    /// Simulates `X` after a burn-in and keeps the states on a regular grid.
    pub fn ergodic(model: &DiffusionModel, params: &TrueParameters, settings: ErgodicSettings, seed: SimSeed) -> Result<Self> {
        if !(settings.t_burn >= 0.0 && settings.t_avg > 0.0 && settings.sample_step > 0.0 && settings.substeps > 0) {
            return Err(QlaError::Config("invalid ergodic averaging settings".into()));
        }
        let d = model.dim_state();
        let r = model.dim_noise();
        let mut x = match &params.x0 {
            InitialState::Fixed(x) if x.len() == d => x.clone(),
            InitialState::Gaussian { mean, .. } if mean.len() == d => mean.clone(),
            _ => return Err(QlaError::DimensionMismatch("initial state has wrong dimension".into())),
        };
        let burn = (settings.t_burn / settings.sample_step).round() as usize;
        let keep = (settings.t_avg / settings.sample_step).round().max(1.0) as usize;
        let dt = settings.sample_step / settings.substeps as f64;
        let sqrt_dt = dt.sqrt();
        let mut rng = seed.stream(StreamId::ErgodicAverage);
        let mut b = vec![0.0; d];
        let mut a = vec![0.0; d * r];
        let mut z = vec![0.0; r];
        let mut states = Vec::with_capacity(keep * d);
        for i in 0..burn + keep {
            for _ in 0..settings.substeps {
                model.drift_into(&x, &params.beta, &mut b);
                model.diffusion_into(&x, &params.alpha, &mut a);
                for zk in z.iter_mut() {
                    *zk = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
                }
                for (row, xi) in x.iter_mut().enumerate() {
                    *xi += b[row] * dt + (0..r).map(|k| a[row * r + k] * z[k]).sum::<f64>();
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(QlaError::NonFiniteAverage);
            }
            if i >= burn {
                states.extend_from_slice(&x);
            }
        }
        Ok(InvariantMeasure::ErgodicPath {
            dim: d,
            states,
            averaging_length: keep as f64 * settings.sample_step,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            InvariantMeasure::Gaussian { mean, .. } => mean.len(),
            InvariantMeasure::ErgodicPath { dim, .. } => *dim,
        }
    }

    /// Effective averaging length of the path variant.
    pub fn averaging_length(&self) -> Option<f64> {
        match self {
            InvariantMeasure::ErgodicPath { averaging_length, .. } => Some(*averaging_length),
            InvariantMeasure::Gaussian { .. } => None,
        }
    }

    /// Calls `visit(x, weight)` for every support point; weights sum to one.
    fn for_each_point(&self, mut visit: impl FnMut(&[f64], f64) -> Result<()>) -> Result<()> {
        match self {
            InvariantMeasure::Gaussian { mean, cov } => {
                let d = mean.len();
                let root = linalg::psd_sqrt(cov, d);
                let (t, w) = gauss_hermite(gh_nodes_for_dim(d));
                let norm = std::f64::consts::PI.sqrt();
                let q = t.len();
                let mut idx = vec![0usize; d];
                let mut z = vec![0.0; d];
                let mut x = vec![0.0; d];
                loop {
                    let mut weight = 1.0;
                    for i in 0..d {
                        z[i] = std::f64::consts::SQRT_2 * t[idx[i]];
                        weight *= w[idx[i]] / norm;
                    }
                    for i in 0..d {
                        x[i] = mean[i] + (0..d).map(|k| root[i * d + k] * z[k]).sum::<f64>();
                    }
                    if weight > 0.0 {
                        visit(&x, weight)?;
                    }
                    let mut i = d;
                    loop {
                        if i == 0 {
                            return Ok(());
                        }
                        i -= 1;
                        idx[i] += 1;
                        if idx[i] < q {
                            break;
                        }
                        idx[i] = 0;
                    }
                }
            }
            InvariantMeasure::ErgodicPath { dim, states, .. } => {
                let n = states.len() / dim;
                let w = 1.0 / n as f64;
                for c in states.chunks_exact(*dim) {
                    visit(c, w)?;
                }
                Ok(())
            }
        }
    }

    /// `ν(f)` for a vector-valued `f` writing `len` outputs.
    pub fn expectation_many<F>(&self, len: usize, mut f: F) -> Result<Vec<f64>>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    {
        let mut sums = vec![KahanSum::new(); len];
        let mut buf = vec![0.0; len];
        self.for_each_point(|x, w| {
            f(x, &mut buf)?;
            for (s, v) in sums.iter_mut().zip(&buf) {
                s.add(w * v);
            }
            Ok(())
        })?;
        let out: Vec<f64> = sums.iter().map(KahanSum::value).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(QlaError::NonFiniteAverage);
        }
        Ok(out)
    }
}

/// `ν(f) = ∫ f dν`.
pub fn invariant_expectation<F>(nu: &InvariantMeasure, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    Ok(nu.expectation_many(1, |x, out| {
        out[0] = f(x);
        Ok(())
    })?[0])
}

/// Information matrices and sandwich covariance, row-major `M × M` with
/// `M = d(d+1)/2 + m₁ + m₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCovariance {
    pub tau: f64,
    pub noise_dim: usize,
    pub alpha_dim: usize,
    pub beta_dim: usize,
    pub i_matrix: Vec<f64>,
    pub j_matrix: Vec<f64>,
    pub sandwich: Vec<f64>,
}

impl AsymptoticCovariance {
    pub fn size(&self) -> usize {
        self.noise_dim + self.alpha_dim + self.beta_dim
    }

    /// Offsets of the `(noise, alpha, beta)` blocks.
    pub fn block_offsets(&self) -> [usize; 3] {
        [0, self.noise_dim, self.noise_dim + self.alpha_dim]
    }

    fn block(&self, m: &[f64], which: usize) -> Vec<f64> {
        let size = self.size();
        let off = self.block_offsets()[which];
        let len = [self.noise_dim, self.alpha_dim, self.beta_dim][which];
        (0..len)
            .flat_map(|i| (0..len).map(move |j| (i, j)))
            .map(|(i, j)| m[(off + i) * size + off + j])
            .collect()
    }

    pub fn sandwich_block(&self, which: Block) -> Vec<f64> {
        self.block(&self.sandwich, which as usize)
    }

    pub fn i_block(&self, which: Block) -> Vec<f64> {
        self.block(&self.i_matrix, which as usize)
    }

    pub fn j_block(&self, which: Block) -> Vec<f64> {
        self.block(&self.j_matrix, which as usize)
    }

    pub fn sandwich_diagonal(&self) -> Vec<f64> {
        let m = self.size();
        (0..m).map(|i| self.sandwich[i * m + i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Noise = 0,
    Alpha = 1,
    Beta = 2,
}

/// `∂_{α_κ} A` for every `κ`, stacked `m₁ × d × d`, by central differences.
fn diffusion_matrix_derivatives(model: &DiffusionModel, x: &[f64], alpha: &[f64]) -> Vec<f64> {
    let d = model.dim_state();
    let mut out = Vec::with_capacity(alpha.len() * d * d);
    let mut p = alpha.to_vec();
    for k in 0..alpha.len() {
        p[k] = alpha[k] + CALLBACK_FD_STEP;
        let up = model.diffusion_matrix(x, &p);
        p[k] = alpha[k] - CALLBACK_FD_STEP;
        let dn = model.diffusion_matrix(x, &p);
        p[k] = alpha[k];
        out.extend(up.iter().zip(&dn).map(|(u, v)| (u - v) / (2.0 * CALLBACK_FD_STEP)));
    }
    out
}

/// `∂_{β_λ} b` for every `λ`, stacked `m₂ × d`.
fn drift_derivatives(model: &DiffusionModel, x: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(beta.len() * model.dim_state());
    let mut p = beta.to_vec();
    for k in 0..beta.len() {
        p[k] = beta[k] + CALLBACK_FD_STEP;
        let up = model.drift(x, &p);
        p[k] = beta[k] - CALLBACK_FD_STEP;
        let dn = model.drift(x, &p);
        p[k] = beta[k];
        out.extend(up.iter().zip(&dn).map(|(u, v)| (u - v) / (2.0 * CALLBACK_FD_STEP)));
    }
    out
}

fn trace_of_product(a: &[f64], b: &[f64], d: usize) -> f64 {
    (0..d).map(|i| (0..d).map(|k| a[i * d + k] * b[k * d + i]).sum::<f64>()).sum()
}

/// Assembles `I^τ`, `J^τ` and the sandwich at the true parameters.
pub fn information_matrices(
    model: &DiffusionModel,
    params: &TrueParameters,
    noise: &NoiseSpec,
    tau: f64,
    nu: &InvariantMeasure,
) -> Result<AsymptoticCovariance> {
    if !(tau > 1.0 && tau <= 2.0) {
        return Err(QlaError::Domain(format!("tau must lie in (1, 2], got {tau}")));
    }
    params.validate(model)?;
    let d = model.dim_state();
    if noise.dim() != d || nu.dim() != d {
        return Err(QlaError::DimensionMismatch("noise, invariant measure and model disagree on dimension".into()));
    }
    let (m1, m2) = (model.dim_alpha(), model.dim_beta());
    let lam = noise.lambda();
    let at_two = tau == 2.0;
    let dd = d * d;

    // Layout of the integrand: I22 (m1²), J22 (m1²), I33 (m2²).
    let len = 2 * m1 * m1 + m2 * m2;
    let integrals = nu.expectation_many(len, |x, out| {
        let a = model.diffusion_matrix(x, &params.alpha);
        let mut a_tau = a.clone();
        if at_two {
            for (v, l) in a_tau.iter_mut().zip(lam) {
                *v += 3.0 * l;
            }
        }
        let a_tau_inv = linalg::spd_inverse(&a_tau, d).ok_or(QlaError::NonPositiveDefinite { block: 0 })?;
        let a_inv = linalg::spd_inverse(&a, d).ok_or(QlaError::NonPositiveDefinite { block: 0 })?;
        let da = diffusion_matrix_derivatives(model, x, &params.alpha);
        let mut bbar = Vec::with_capacity(m1 * dd);
        let mut c = Vec::with_capacity(m1 * dd);
        for k in 0..m1 {
            let dk = &da[k * dd..(k + 1) * dd];
            let inv_dk = linalg::matmul(&a_tau_inv, dk, d);
            let mut bk = linalg::matmul(&inv_dk, &a_tau_inv, d);
            bk.iter_mut().for_each(|v| *v *= 0.75);
            linalg::symmetrize(&mut bk, d);
            bbar.extend(bk);
            c.extend(inv_dk);
        }
        for k1 in 0..m1 {
            let b1 = &bbar[k1 * dd..(k1 + 1) * dd];
            let b1a = linalg::matmul(b1, &a, d);
            let b1l = linalg::matmul(b1, lam, d);
            for k2 in 0..m1 {
                let b2 = &bbar[k2 * dd..(k2 + 1) * dd];
                let b2a = linalg::matmul(b2, &a, d);
                let mut w2 = trace_of_product(&b1a, &b2a, d);
                if at_two {
                    let b2l = linalg::matmul(b2, lam, d);
                    w2 += 4.0 * trace_of_product(&b1a, &b2l, d) + 12.0 * trace_of_product(&b1l, &b2l, d);
                }
                out[k1 * m1 + k2] = w2;
                out[m1 * m1 + k1 * m1 + k2] =
                    0.5 * trace_of_product(&c[k1 * dd..(k1 + 1) * dd], &c[k2 * dd..(k2 + 1) * dd], d);
            }
        }
        let db = drift_derivatives(model, x, &params.beta);
        for l1 in 0..m2 {
            for l2 in 0..m2 {
                let f1 = &db[l1 * d..(l1 + 1) * d];
                let f2 = &db[l2 * d..(l2 + 1) * d];
                let q: f64 = (0..d).map(|i| (0..d).map(|j| f1[i] * a_inv[i * d + j] * f2[j]).sum::<f64>()).sum();
                out[2 * m1 * m1 + l1 * m2 + l2] = q;
            }
        }
        Ok(())
    })?;

    let m0 = d * (d + 1) / 2;
    let size = m0 + m1 + m2;
    let mut i_mat = vec![0.0; size * size];
    let mut j_mat = vec![0.0; size * size];
    let w1 = w1_matrix(noise);
    for a in 0..m0 {
        for b in 0..m0 {
            i_mat[a * size + b] = w1[a * m0 + b];
        }
        j_mat[a * size + a] = 1.0;
    }
    for k1 in 0..m1 {
        for k2 in 0..m1 {
            let (r, c) = (m0 + k1, m0 + k2);
            i_mat[r * size + c] = 0.5 * (integrals[k1 * m1 + k2] + integrals[k2 * m1 + k1]);
            j_mat[r * size + c] = 0.5 * (integrals[m1 * m1 + k1 * m1 + k2] + integrals[m1 * m1 + k2 * m1 + k1]);
        }
    }
    let off = 2 * m1 * m1;
    for l1 in 0..m2 {
        for l2 in 0..m2 {
            let (r, c) = (m0 + m1 + l1, m0 + m1 + l2);
            let v = 0.5 * (integrals[off + l1 * m2 + l2] + integrals[off + l2 * m2 + l1]);
            i_mat[r * size + c] = v;
            j_mat[r * size + c] = v;
        }
    }
    let mut ac = AsymptoticCovariance {
        tau,
        noise_dim: m0,
        alpha_dim: m1,
        beta_dim: m2,
        i_matrix: i_mat,
        j_matrix: j_mat,
        sandwich: Vec::new(),
    };
    ac.sandwich = sandwich_covariance(&ac)?;
    Ok(ac)
}

/// `J⁻¹ I J⁻¹`, symmetrised, computed block by block so cross-blocks stay exactly zero.
pub fn sandwich_covariance(ac: &AsymptoticCovariance) -> Result<Vec<f64>> {
    let size = ac.size();
    if ac.i_matrix.len() != size * size || ac.j_matrix.len() != size * size {
        return Err(QlaError::DimensionMismatch("information matrices have the wrong size".into()));
    }
    let mut out = vec![0.0; size * size];
    for (which, len) in [ac.noise_dim, ac.alpha_dim, ac.beta_dim].into_iter().enumerate() {
        if len == 0 {
            continue;
        }
        let off = ac.block_offsets()[which];
        let i_b = ac.block(&ac.i_matrix, which);
        let j_b = ac.block(&ac.j_matrix, which);
        let mut l = j_b.clone();
        if !linalg::cholesky_in_place(&mut l, len) {
            return Err(QlaError::JSingular);
        }
        let j_inv = linalg::spd_inverse(&j_b, len).ok_or(QlaError::JSingular)?;
        let mut s = linalg::matmul(&linalg::matmul(&j_inv, &i_b, len), &j_inv, len);
        linalg::symmetrize(&mut s, len);
        for i in 0..len {
            for j in 0..len {
                out[(off + i) * size + off + j] = s[i * len + j];
            }
        }
    }
    Ok(out)
}
