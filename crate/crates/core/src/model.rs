//! Parametric diffusion model, noise law, and the block sampling scheme.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::linalg;

/// `b(x, β)` written into `out[0..d]`.
pub type DriftFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
/// `a(x, α)` written row-major into `out[0..d*r]`.
pub type DiffusionFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
/// Closed-form Gaussian invariant law `(mean, covariance)` at `(α, β)`.
pub type InvariantLawFn = dyn Fn(&[f64], &[f64]) -> Option<GaussianLaw> + Send + Sync;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    /// Row-major d×d covariance.
    pub cov: Vec<f64>,
}

/// Axis-aligned parameter box with strictly positive finite widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(QlaError::DimensionMismatch(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(QlaError::Domain(format!(
                    "box coordinate {i} must have finite positive width, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_intervals(intervals: &[[f64; 2]]) -> Result<Self> {
        Self::new(
            intervals.iter().map(|iv| iv[0]).collect(),
            intervals.iter().map(|iv| iv[1]).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains_closed(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    pub fn contains_open(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .enumerate()
                .all(|(i, &v)| v > self.lower[i] && v < self.upper[i])
    }

    pub fn clamp(&self, p: &mut [f64]) {
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// The `2^m` corners, in lexicographic order of (lower, upper) choices.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        self.shrunk_corners(0.0)
    }

    /// Corners moved a fraction `shrink` of the way toward the center.
    pub fn shrunk_corners(&self, shrink: f64) -> Vec<Vec<f64>> {
        let m = self.dim();
        let c = self.center();
        (0..1usize << m)
            .map(|mask| {
                (0..m)
                    .map(|i| {
                        let bit = (mask >> (m - 1 - i)) & 1;
                        let v = if bit == 0 { self.lower[i] } else { self.upper[i] };
                        v + shrink * (c[i] - v)
                    })
                    .collect()
            })
            .collect()
    }

    /// Distance-to-boundary test: true when any coordinate lies within
    /// `rel_tol · width` of a face.
    pub fn near_boundary(&self, p: &[f64], rel_tol: f64) -> bool {
        p.iter().enumerate().any(|(i, &v)| {
            let tol = rel_tol * self.width(i);
            v - self.lower[i] <= tol || self.upper[i] - v <= tol
        })
    }
}

/// Parametric diffusion `dX = b(X,β)dt + a(X,α)dw` with box parameter spaces.
#[derive(Clone)]
pub struct DiffusionModel {
    name: String,
    dim_state: usize,
    dim_noise: usize,
    alpha_box: ParamBox,
    beta_box: ParamBox,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    invariant_law: Option<Arc<InvariantLawFn>>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("alpha_box", &self.alpha_box)
            .field("beta_box", &self.beta_box)
            .field("closed_form_invariant_law", &self.invariant_law.is_some())
            .finish()
    }
}

impl DiffusionModel {
    pub fn new<B, A>(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        alpha_box: ParamBox,
        beta_box: ParamBox,
        drift: B,
        diffusion: A,
    ) -> Result<Self>
    where
        B: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        A: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim_state == 0 || dim_noise == 0 {
            return Err(QlaError::Domain(
                "state and noise dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            dim_state,
            dim_noise,
            alpha_box,
            beta_box,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            invariant_law: None,
        })
    }

    pub fn with_invariant_law<F>(mut self, law: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Option<GaussianLaw> + Send + Sync + 'static,
    {
        self.invariant_law = Some(Arc::new(law));
        self
    }

    pub fn with_boxes(mut self, alpha_box: ParamBox, beta_box: ParamBox) -> Self {
        self.alpha_box = alpha_box;
        self.beta_box = beta_box;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim_state(&self) -> usize {
        self.dim_state
    }
    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }
    pub fn dim_alpha(&self) -> usize {
        self.alpha_box.dim()
    }
    pub fn dim_beta(&self) -> usize {
        self.beta_box.dim()
    }
    pub fn alpha_box(&self) -> &ParamBox {
        &self.alpha_box
    }
    pub fn beta_box(&self) -> &ParamBox {
        &self.beta_box
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], beta: &[f64], out: &mut [f64]) {
        (self.drift)(x, beta, out)
    }

    #[inline]
    pub fn diffusion_into(&self, x: &[f64], alpha: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, alpha, out)
    }

    /// `A(x, α) = a aᵀ` into `out` (d×d); `a_buf` has length d·r.
    #[inline]
    pub fn diffusion_matrix_into(&self, x: &[f64], alpha: &[f64], a_buf: &mut [f64], out: &mut [f64]) {
        (self.diffusion)(x, alpha, a_buf);
        linalg::outer_self(a_buf, self.dim_state, self.dim_noise, out);
    }

    pub fn drift(&self, x: &[f64], beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.drift_into(x, beta, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64], alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.diffusion_into(x, alpha, &mut out);
        out
    }

    pub fn diffusion_matrix(&self, x: &[f64], alpha: &[f64]) -> Vec<f64> {
        let d = self.dim_state;
        let mut a = vec![0.0; d * self.dim_noise];
        let mut out = vec![0.0; d * d];
        self.diffusion_matrix_into(x, alpha, &mut a, &mut out);
        out
    }

    pub fn invariant_law(&self, alpha: &[f64], beta: &[f64]) -> Option<GaussianLaw> {
        self.invariant_law.as_ref().and_then(|f| f(alpha, beta))
    }

    pub fn has_invariant_law(&self) -> bool {
        self.invariant_law.is_some()
    }
}

/// The scalar Ornstein–Uhlenbeck reference model
/// `dX = −β₁(X − β₂)dt + α dW`, registered as `"ou1d"`.
pub fn builtin_ou_model() -> DiffusionModel {
    let alpha_box = ParamBox::new(vec![0.1], vec![2.0]).expect("static box");
    let beta_box = ParamBox::new(vec![0.1, -2.0], vec![3.0, 2.0]).expect("static box");
    DiffusionModel::new(
        "ou1d",
        1,
        1,
        alpha_box,
        beta_box,
        |x, beta, out| out[0] = -beta[0] * (x[0] - beta[1]),
        |_x, alpha, out| out[0] = alpha[0],
    )
    .expect("static model")
    .with_invariant_law(|alpha, beta| {
        if beta[0] <= 0.0 {
            return None;
        }
        Some(GaussianLaw {
            mean: vec![beta[1]],
            cov: vec![alpha[0] * alpha[0] / (2.0 * beta[0])],
        })
    })
}

/// Name → model lookup used by configuration files.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    models: BTreeMap<String, DiffusionModel>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            models: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(builtin_ou_model());
        reg
    }

    pub fn register(&mut self, model: DiffusionModel) {
        self.models.insert(model.name().to_string(), model);
    }

    pub fn get(&self, name: &str) -> Result<DiffusionModel> {
        self.models
            .get(name)
            .cloned()
            .ok_or_else(|| QlaError::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }
}

/// Per-coordinate law of ε: symmetric, unit variance, all moments finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    /// Uniform on `[−√3, √3]`.
    UniformSymmetric,
    /// Independent ±1 signs per coordinate.
    RademacherProduct,
}

impl NoiseFamily {
    pub fn fourth_moment(&self) -> f64 {
        match self {
            NoiseFamily::Gaussian => 3.0,
            NoiseFamily::UniformSymmetric => 9.0 / 5.0,
            NoiseFamily::RademacherProduct => 1.0,
        }
    }

    pub fn excess_kurtosis(&self) -> f64 {
        self.fourth_moment() - 3.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseFamily::Gaussian => StandardNormal.sample(rng),
            NoiseFamily::UniformSymmetric => {
                let s3 = 3.0f64.sqrt();
                rng.random_range(-s3..s3)
            }
            NoiseFamily::RademacherProduct => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Noise variance `Λ` (symmetric PSD) and the law of ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    dim: usize,
    /// Row-major d×d.
    lambda: Vec<f64>,
    family: NoiseFamily,
}

impl NoiseSpec {
    pub fn new(dim: usize, lambda: Vec<f64>, family: NoiseFamily) -> Result<Self> {
        if lambda.len() != dim * dim || dim == 0 {
            return Err(QlaError::DimensionMismatch(format!(
                "lambda has {} entries, expected {}",
                lambda.len(),
                dim * dim
            )));
        }
        let scale = lambda.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..dim {
            for j in 0..i {
                if (lambda[i * dim + j] - lambda[j * dim + i]).abs() > 1e-12 * scale {
                    return Err(QlaError::Domain("lambda must be symmetric".into()));
                }
            }
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(QlaError::Domain("lambda must be finite".into()));
        }
        if linalg::min_eigenvalue(&lambda, dim) < -1e-12 * scale {
            return Err(QlaError::Domain(
                "lambda must be positive semidefinite".into(),
            ));
        }
        Ok(Self { dim, lambda, family })
    }

    pub fn scalar(lambda: f64, family: NoiseFamily) -> Result<Self> {
        Self::new(1, vec![lambda], family)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn excess_kurtosis_per_coord(&self) -> Vec<f64> {
        vec![self.family.excess_kurtosis(); self.dim]
    }
}

/// Observation and block design `(n, h_n, τ)` with derived `p_n, k_n, Δ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    pub p: usize,
    pub k: usize,
    pub delta: f64,
}

impl SamplingScheme {
    /// `p_n = round(h^{−1/τ})` clamped to at least 2, `k_n = ⌊n/p_n⌋`,
    /// `Δ_n = p_n h`. Fails unless `k_n ≥ 3`.
    pub fn build(n: usize, h: f64, tau: f64) -> Result<Self> {
        if !(tau > 1.0 && tau <= 2.0) {
            return Err(QlaError::Domain(format!("tau must lie in (1, 2], got {tau}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(QlaError::Domain(format!("h_n must be positive, got {h}")));
        }
        if n == 0 {
            return Err(QlaError::Domain("n must be at least 1".into()));
        }
        let raw = h.powf(-1.0 / tau).round();
        let p = if raw.is_finite() && raw >= 2.0 {
            raw as usize
        } else {
            2
        };
        let k = n / p;
        if k < 3 {
            return Err(QlaError::InsufficientBlocks { k_n: k });
        }
        Ok(Self {
            n,
            h,
            tau,
            p,
            k,
            delta: p as f64 * h,
        })
    }

    /// Observation horizon `T_n = n h_n`.
    pub fn t_n(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn k_delta_sq(&self) -> f64 {
        self.k as f64 * self.delta * self.delta
    }

    /// Coefficient of Λ in `A_nᵗ`: `3 Δ_n^{(2−τ)/(τ−1)}`, exactly 3 at τ = 2.
    pub fn noise_weight(&self) -> f64 {
        if self.tau == 2.0 {
            3.0
        } else {
            3.0 * self.delta.powf((2.0 - self.tau) / (self.tau - 1.0))
        }
    }
}

/// How `X_0` is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Fixed(Vec<f64>),
    Gaussian { mean: Vec<f64>, cov: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub noise: NoiseSpec,
    pub x0: InitialState,
}

impl TrueParameters {
    pub fn validate(&self, model: &DiffusionModel) -> Result<()> {
        if !model.alpha_box().contains_open(&self.alpha) {
            return Err(QlaError::Domain(format!(
                "alpha* {:?} is not interior to the alpha box",
                self.alpha
            )));
        }
        if !model.beta_box().contains_open(&self.beta) {
            return Err(QlaError::Domain(format!(
                "beta* {:?} is not interior to the beta box",
                self.beta
            )));
        }
        if self.noise.dim() != model.dim_state() {
            return Err(QlaError::DimensionMismatch(
                "noise dimension differs from state dimension".into(),
            ));
        }
        let d = model.dim_state();
        match &self.x0 {
            InitialState::Fixed(x) if x.len() == d => Ok(()),
            InitialState::Gaussian { mean, cov } if mean.len() == d && cov.len() == d * d => Ok(()),
            _ => Err(QlaError::DimensionMismatch(
                "initial state dimension differs from state dimension".into(),
            )),
        }
    }
}

/// Machine-checkable summary of the standing assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub min_det_a: f64,
    pub det_positive: bool,
    pub k_delta_sq: f64,
    pub k_delta_sq_warning: bool,
    pub t_n: f64,
    pub p_at_least_two: bool,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.det_positive && self.p_at_least_two
    }
}

/// Spot-checks `inf det A > 0` over `probe_grid × alpha-box corners` and
/// reports the block-design diagnostics. Never fails.
pub fn validate_assumptions(
    model: &DiffusionModel,
    scheme: &SamplingScheme,
    probe_grid: &[Vec<f64>],
) -> ValidationReport {
    let d = model.dim_state();
    let mut min_det = f64::INFINITY;
    for alpha in model.alpha_box().corners() {
        for x in probe_grid {
            let a = model.diffusion_matrix(x, &alpha);
            let det = linalg::to_dmatrix(&a, d).determinant();
            min_det = min_det.min(det);
        }
    }
    let det_positive = min_det > 0.0 && min_det.is_finite();
    let k_delta_sq = scheme.k_delta_sq();
    let mut warnings = Vec::new();
    if !det_positive {
        warnings.push(format!("min det A over probe grid is {min_det:e}, not positive"));
    }
    let k_delta_sq_warning = k_delta_sq >= 1.0;
    if k_delta_sq_warning {
        warnings.push(format!(
            "k_n * Delta_n^2 = {k_delta_sq} is not small; discretisation bias may dominate"
        ));
    }
    ValidationReport {
        min_det_a: min_det,
        det_positive,
        k_delta_sq,
        k_delta_sq_warning,
        t_n: scheme.t_n(),
        p_at_least_two: scheme.p >= 2,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scheme_examples() {
        let s = SamplingScheme::build(10_000, 0.01, 2.0).unwrap();
        assert_eq!((s.p, s.k), (10, 1000));
        assert!((s.delta - 0.1).abs() < 1e-15);
        let s = SamplingScheme::build(100, 0.25, 2.0).unwrap();
        assert_eq!((s.p, s.k), (2, 50));
        assert_eq!(s.delta, 0.5);
        assert!(matches!(
            SamplingScheme::build(10, 0.5, 1.0),
            Err(QlaError::Domain(_))
        ));
        assert!(matches!(
            SamplingScheme::build(10, 0.01, 2.0),
            Err(QlaError::InsufficientBlocks { k_n: 1 })
        ));
    }

    #[test]
    fn p_is_clamped_to_two() {
        let s = SamplingScheme::build(100, 0.9, 2.0).unwrap();
        assert_eq!(s.p, 2);
    }

    #[test]
    fn ou_model_examples() {
        let m = builtin_ou_model();
        assert_eq!(m.drift(&[1.0], &[2.0, 0.0]), vec![-2.0]);
        assert_eq!(m.diffusion(&[5.0], &[0.3]), vec![0.3]);
        let law = m.invariant_law(&[1.0], &[0.5, 0.0]).unwrap();
        assert_eq!(law.cov, vec![1.0]);
        assert_eq!((m.dim_alpha(), m.dim_beta()), (1, 2));
    }

    #[test]
    fn validation_examples() {
        let m = builtin_ou_model();
        let s = SamplingScheme::build(10_000, 0.01, 2.0).unwrap();
        let grid: Vec<Vec<f64>> = (-5..=5).map(|x| vec![x as f64]).collect();
        let r = validate_assumptions(&m, &s, &grid);
        assert!((r.min_det_a - 0.01).abs() < 1e-15);
        assert!(r.det_positive);
        assert!((r.k_delta_sq - 10.0).abs() < 1e-9);
        assert!(r.k_delta_sq_warning);
        assert!((r.t_n - 100.0).abs() < 1e-9);

        // oracle: p = round(1000^{1/2}) = 32, Δ = 0.032, k = 10^6 / 32 = 31250
        let s = SamplingScheme::build(1_000_000, 1e-3, 2.0).unwrap();
        let oracle_p = (1e-3f64).powf(-0.5).round();
        let oracle_k = (1_000_000.0 / oracle_p).floor();
        let oracle = oracle_k * (oracle_p * 1e-3) * (oracle_p * 1e-3);
        assert_eq!((s.p, s.k), (32, 31_250));
        let r = validate_assumptions(&m, &s, &grid);
        assert!((r.k_delta_sq - oracle).abs() < 1e-9 * oracle);
        assert!(r.k_delta_sq_warning);
    }

    #[test]
    fn noise_spec_validation() {
        assert!(NoiseSpec::new(2, vec![1.0, 0.5, 0.4, 1.0], NoiseFamily::Gaussian).is_err());
        assert!(NoiseSpec::new(2, vec![1.0, 2.0, 2.0, 1.0], NoiseFamily::Gaussian).is_err());
        assert!(NoiseSpec::scalar(0.0, NoiseFamily::Gaussian).is_ok());
        let n = NoiseSpec::scalar(0.1, NoiseFamily::UniformSymmetric).unwrap();
        assert!((n.excess_kurtosis_per_coord()[0] + 1.2).abs() < 1e-15);
    }

    #[test]
    fn box_rejects_degenerate_widths() {
        assert!(ParamBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(ParamBox::new(vec![0.0], vec![f64::INFINITY]).is_err());
        let b = ParamBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let c = b.shrunk_corners(0.1);
        assert_eq!(c.len(), 4);
        assert!((c[0][0] - 0.05).abs() < 1e-15 && (c[3][1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn perfect_square_step_gives_exact_block() {
        for m in 2..200usize {
            let h = 1.0 / (m * m) as f64;
            let s = SamplingScheme::build(3 * m * m, h, 2.0).unwrap();
            assert_eq!(s.p, m);
        }
    }

    proptest! {
        #[test]
        fn scheme_is_pure_and_blocks_fit(n in 6usize..2_000_000, h in 1e-5f64..0.5, tau in 1.01f64..=2.0) {
            if let Ok(s) = SamplingScheme::build(n, h, tau) {
                prop_assert!(s.k * s.p <= n);
                prop_assert!(s.p >= 2);
                prop_assert_eq!(s, SamplingScheme::build(n, h, tau).unwrap());
            }
        }
    }
}
