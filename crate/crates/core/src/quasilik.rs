//! Noise-variance estimator, the two adaptive quasi-likelihoods, their
//! random fields, and finite-difference scores and curvatures.

use crate::error::{QlaError, Result};
use crate::fd;
use crate::linalg::{self, KahanSum};
use crate::model::{DiffusionModel, ParamBox, SamplingScheme};
use crate::preaverage::{local_means, LocalMeanSeries};
use crate::simulate::ObservationSeries;

pub const DEFAULT_JITTER: f64 = 1e-10;

/// `Λ̂_n = (1/2n) Σ_{i<n} (Y_{i+1} − Y_i)^{⊗2}` over every increment of the series.
pub fn noise_variance_estimate(series: &ObservationSeries) -> Result<Vec<f64>> {
    let len = series.len();
    if len < 2 {
        return Err(QlaError::InsufficientData { have: len, need: 2 });
    }
    let d = series.dim();
    let mut acc = vec![KahanSum::new(); d * d];
    let mut diff = vec![0.0; d];
    for i in 0..len - 1 {
        let (a, b) = (series.value(i), series.value(i + 1));
        for l in 0..d {
            diff[l] = b[l] - a[l];
        }
        for r in 0..d {
            for c in 0..=r {
                acc[r * d + c].add(diff[r] * diff[c]);
            }
        }
    }
    let scale = 1.0 / (2.0 * (len - 1) as f64);
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..=r {
            let v = acc[r * d + c].value() * scale;
            out[r * d + c] = v;
            out[c * d + r] = v;
        }
    }
    Ok(out)
}

/// `A_nᵗ(x, α, Λ) = A(x, α) + 3 Δ_n^{(2−τ)/(τ−1)} Λ`.
pub fn modified_diffusion_matrix(
    model: &DiffusionModel,
    x: &[f64],
    alpha: &[f64],
    lambda: &[f64],
    scheme: &SamplingScheme,
) -> Vec<f64> {
    let w = scheme.noise_weight();
    let mut a = model.diffusion_matrix(x, alpha);
    for (v, l) in a.iter_mut().zip(lambda) {
        *v += w * l;
    }
    a
}

/// Which quasi-likelihood a diagnostic refers to.
#[derive(Debug, Clone, PartialEq)]
pub enum Contrast {
    /// `H₁ₙᵗ(α; Λ̂)`.
    Diffusion,
    /// `H₂ₙ(β; α)` with the given plug-in diffusion parameter.
    Drift { alpha: Vec<f64> },
}

/// Everything the quasi-likelihoods need from the data: the lagged block
/// means `Ȳ_{j−1}`, increments `Ȳ_{j+1} − Ȳ_j` for `j = 1..=k_n−2`, and the
/// plug-in `Λ̂`.
#[derive(Debug, Clone)]
pub struct QuasiLikContext {
    model: DiffusionModel,
    scheme: SamplingScheme,
    dim: usize,
    lambda_hat: Vec<f64>,
    jitter: f64,
    lagged: Vec<f64>,
    increments: Vec<f64>,
}

impl QuasiLikContext {
    pub fn new(lm: &LocalMeanSeries, model: &DiffusionModel, lambda_hat: &[f64]) -> Result<Self> {
        let d = lm.dim();
        if d != model.dim_state() || lambda_hat.len() != d * d {
            return Err(QlaError::DimensionMismatch(
                "local means, model and lambda disagree on dimension".into(),
            ));
        }
        let k = lm.len();
        if k < 3 {
            return Err(QlaError::InsufficientBlocks { k_n: k });
        }
        let terms = k - 2;
        let mut lagged = Vec::with_capacity(terms * d);
        let mut increments = Vec::with_capacity(terms * d);
        for j in 1..=terms {
            lagged.extend_from_slice(lm.mean(j - 1));
            increments.extend(lm.mean(j + 1).iter().zip(lm.mean(j)).map(|(a, b)| a - b));
        }
        Ok(Self {
            model: model.clone(),
            scheme: *lm.scheme(),
            dim: d,
            lambda_hat: linalg::clip_psd(lambda_hat, d),
            jitter: DEFAULT_JITTER,
            lagged,
            increments,
        })
    }

    /// Computes `Λ̂_n` and the local means from a raw series.
    pub fn from_series(series: &ObservationSeries, model: &DiffusionModel) -> Result<Self> {
        let lambda = noise_variance_estimate(series)?;
        let lm = local_means(series)?;
        Self::new(&lm, model, &lambda)
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter.max(0.0);
        self
    }

    pub fn with_lambda(mut self, lambda: &[f64]) -> Self {
        self.lambda_hat = linalg::clip_psd(lambda, self.dim);
        self
    }

    pub fn model(&self) -> &DiffusionModel {
        &self.model
    }
    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn lambda_hat(&self) -> &[f64] {
        &self.lambda_hat
    }
    pub fn jitter(&self) -> f64 {
        self.jitter
    }
    /// Number of summands, `k_n − 2`.
    pub fn terms(&self) -> usize {
        self.lagged.len() / self.dim
    }
    pub fn lagged(&self, j: usize) -> &[f64] {
        &self.lagged[j * self.dim..(j + 1) * self.dim]
    }
    pub fn increment(&self, j: usize) -> &[f64] {
        &self.increments[j * self.dim..(j + 1) * self.dim]
    }

    fn check_in_box(bounds: &ParamBox, p: &[f64], what: &str) -> Result<()> {
        if !bounds.contains_closed(p) {
            return Err(QlaError::Domain(format!("{what} {p:?} outside its closed box")));
        }
        Ok(())
    }

    /// `H₁ₙᵗ(α; Λ̂) = −½ Σ_j { ((2/3)Δ_n A_nᵗ(Ȳ_{j−1}))⁻¹[(Ȳ_{j+1}−Ȳ_j)^{⊗2}] + log det A_nᵗ(Ȳ_{j−1}) }`.
    pub fn h1(&self, alpha: &[f64]) -> Result<f64> {
        Self::check_in_box(self.model.alpha_box(), alpha, "alpha")?;
        let d = self.dim;
        let w = self.scheme.noise_weight();
        let inv_weight = 1.5 / self.scheme.delta;
        let mut a_buf = vec![0.0; d * self.model.dim_noise()];
        let mut s = vec![0.0; d * d];
        let mut l = vec![0.0; d * d];
        let mut scratch = vec![0.0; d];
        let mut sum = KahanSum::new();
        for j in 0..self.terms() {
            self.model
                .diffusion_matrix_into(self.lagged(j), alpha, &mut a_buf, &mut s);
            for (v, lam) in s.iter_mut().zip(&self.lambda_hat) {
                *v += w * lam;
            }
            if !linalg::cholesky_with_jitter(&s, d, self.jitter, &mut l) {
                return Err(QlaError::NonPositiveDefinite { block: j + 1 });
            }
            let q = linalg::chol_quad_form(&l, d, self.increment(j), &mut scratch);
            sum.add(inv_weight * q + linalg::chol_log_det(&l, d));
        }
        Ok(-0.5 * sum.value())
    }

    /// Factors `Δ_n A(Ȳ_{j−1}, α)` once so that `H₂ₙ(·; α)` is cheap to
    /// evaluate repeatedly.
    pub fn drift_contrast(&self, alpha: &[f64]) -> Result<DriftContrast<'_>> {
        Self::check_in_box(self.model.alpha_box(), alpha, "alpha")?;
        let d = self.dim;
        let terms = self.terms();
        let mut a_buf = vec![0.0; d * self.model.dim_noise()];
        let mut s = vec![0.0; d * d];
        let mut factors = vec![0.0; terms * d * d];
        for j in 0..terms {
            self.model
                .diffusion_matrix_into(self.lagged(j), alpha, &mut a_buf, &mut s);
            s.iter_mut().for_each(|v| *v *= self.scheme.delta);
            if !linalg::cholesky_with_jitter(&s, d, self.jitter, &mut factors[j * d * d..(j + 1) * d * d]) {
                return Err(QlaError::NonPositiveDefinite { block: j + 1 });
            }
        }
        Ok(DriftContrast {
            ctx: self,
            alpha: alpha.to_vec(),
            factors,
        })
    }

    /// `H₂ₙ(β; α) = −½ Σ_j (Δ_n A(Ȳ_{j−1}, α))⁻¹[(Ȳ_{j+1}−Ȳ_j−Δ_n b(Ȳ_{j−1}, β))^{⊗2}]`.
    pub fn h2(&self, beta: &[f64], alpha: &[f64]) -> Result<f64> {
        self.drift_contrast(alpha)?.value(beta)
    }

    pub fn evaluate(&self, contrast: &Contrast, point: &[f64]) -> Result<f64> {
        match contrast {
            Contrast::Diffusion => self.h1(point),
            Contrast::Drift { alpha } => self.h2(point, alpha),
        }
    }

    pub fn bounds(&self, contrast: &Contrast) -> &ParamBox {
        match contrast {
            Contrast::Diffusion => self.model.alpha_box(),
            Contrast::Drift { .. } => self.model.beta_box(),
        }
    }

    /// `k_n` for the diffusion contrast, `T_n` for the drift contrast.
    pub fn normalizer(&self, contrast: &Contrast) -> f64 {
        match contrast {
            Contrast::Diffusion => self.scheme.k as f64,
            Contrast::Drift { .. } => self.scheme.t_n(),
        }
    }

    /// Local rate `√k_n` or `√T_n`.
    pub fn rate(&self, contrast: &Contrast) -> f64 {
        self.normalizer(contrast).sqrt()
    }

    /// Evaluates one contrast, reusing the drift factorisation across calls.
    pub fn with_objective<T>(
        &self,
        contrast: &Contrast,
        body: impl FnOnce(&mut dyn FnMut(&[f64]) -> Result<f64>) -> Result<T>,
    ) -> Result<T> {
        match contrast {
            Contrast::Diffusion => body(&mut |a: &[f64]| self.h1(a)),
            Contrast::Drift { alpha } => {
                let dc = self.drift_contrast(alpha)?;
                body(&mut |b: &[f64]| dc.value(b))
            }
        }
    }
}

/// `H₂ₙ(·; α)` with the weight factorisation cached.
#[derive(Debug, Clone)]
pub struct DriftContrast<'a> {
    ctx: &'a QuasiLikContext,
    alpha: Vec<f64>,
    factors: Vec<f64>,
}

impl DriftContrast<'_> {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn value(&self, beta: &[f64]) -> Result<f64> {
        let ctx = self.ctx;
        QuasiLikContext::check_in_box(ctx.model.beta_box(), beta, "beta")?;
        let d = ctx.dim;
        let delta = ctx.scheme.delta;
        let mut b = vec![0.0; d];
        let mut resid = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let mut sum = KahanSum::new();
        for j in 0..ctx.terms() {
            ctx.model.drift_into(ctx.lagged(j), beta, &mut b);
            for (l, r) in resid.iter_mut().enumerate() {
                *r = ctx.increment(j)[l] - delta * b[l];
            }
            let f = &self.factors[j * d * d..(j + 1) * d * d];
            sum.add(linalg::chol_quad_form(f, d, &resid, &mut scratch));
        }
        Ok(-0.5 * sum.value())
    }
}

/// Finite-difference gradient of the contrast at `point`.
pub fn gradient(ctx: &QuasiLikContext, contrast: &Contrast, point: &[f64]) -> Result<Vec<f64>> {
    let bounds = ctx.bounds(contrast).clone();
    ctx.with_objective(contrast, |f| fd::gradient(f, point, Some(&bounds)))
}

/// Scaled score: `k_n^{−1/2} ∇_α H₁` or `T_n^{−1/2} ∇_β H₂`.
pub fn scaled_score(ctx: &QuasiLikContext, contrast: &Contrast, point: &[f64]) -> Result<Vec<f64>> {
    let rate = ctx.rate(contrast);
    Ok(gradient(ctx, contrast, point)?.into_iter().map(|g| g / rate).collect())
}

/// Negated, normalised, symmetrised FD Hessian: `−∇²H₁/k_n` or `−∇²H₂/T_n`.
pub fn curvature(ctx: &QuasiLikContext, contrast: &Contrast, point: &[f64]) -> Result<Vec<f64>> {
    let bounds = ctx.bounds(contrast).clone();
    let norm = ctx.normalizer(contrast);
    let mut h = ctx.with_objective(contrast, |f| fd::hessian(f, point, Some(&bounds)))?;
    let m = point.len();
    h.iter_mut().for_each(|v| *v = -*v / norm);
    linalg::symmetrize(&mut h, m);
    Ok(h)
}

fn shifted_point(ctx: &QuasiLikContext, contrast: &Contrast, center: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let bounds = ctx.bounds(contrast);
    if u.len() != center.len() || center.len() != bounds.dim() {
        return Err(QlaError::DimensionMismatch("u and center must match the parameter dimension".into()));
    }
    if !bounds.contains_open(center) {
        return Err(QlaError::OutsideAdmissibleSet(format!("center {center:?} is not interior")));
    }
    let rate = ctx.rate(contrast);
    let p: Vec<f64> = center.iter().zip(u).map(|(c, ui)| c + ui / rate).collect();
    if !bounds.contains_open(&p) {
        return Err(QlaError::OutsideAdmissibleSet(format!("u = {u:?} maps to {p:?}")));
    }
    Ok(p)
}

/// `log Z(u) = H(center + u / rate) − H(center)`.
pub fn log_random_field(ctx: &QuasiLikContext, contrast: &Contrast, center: &[f64], u: &[f64]) -> Result<f64> {
    let p = shifted_point(ctx, contrast, center, u)?;
    if u.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    ctx.with_objective(contrast, |f| Ok(f(&p)? - f(center)?))
}

/// `Z(u) = exp(H(center + u / rate) − H(center))`.
pub fn random_field(ctx: &QuasiLikContext, contrast: &Contrast, center: &[f64], u: &[f64]) -> Result<f64> {
    Ok(log_random_field(ctx, contrast, center, u)?.exp())
}
