//! Adaptive ML-type and Bayes-type estimators.
//!
//! Both chains share the stage-0 noise estimate `Λ̂ₙ`. The ML chain maximises
//! `H₁` then `H₂(·; α̂)`; the Bayes chain takes posterior means under
//! `exp(H₁)π₁` then `exp(H₂(·; α̃))π₂`. Chains are never mixed.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::fd;
use crate::model::{DiffusionModel, ParamBox, SamplingScheme};
use crate::optimize::{maximize, OptimizerConfig, OptimumReport};
use crate::quadrature::{gauss_legendre, log_sum_exp};
use crate::quasilik::{self, Contrast, QuasiLikContext};
use crate::rng::{SimSeed, StreamId};
use crate::simulate::ObservationSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ml,
    Bayes,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Ml => "ml",
            EstimatorKind::Bayes => "bayes",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Prior density on a parameter box.
#[derive(Clone, Default)]
pub enum PriorSpec {
    #[default]
    Uniform,
    Density(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::Uniform => f.write_str("Uniform"),
            PriorSpec::Density(_) => f.write_str("Density(..)"),
        }
    }
}

impl PriorSpec {
    pub fn density<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        PriorSpec::Density(Arc::new(f))
    }

    /// Log density up to an additive constant.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        match self {
            PriorSpec::Uniform => Ok(0.0),
            PriorSpec::Density(f) => {
                let v = f(theta);
                if v.is_finite() && v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(QlaError::Domain(format!("prior density {v} at {theta:?} is not positive and finite")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BayesMethod {
    /// Quadrature for at most two parameters, Metropolis otherwise.
    #[default]
    Auto,
    GaussLegendre,
    Metropolis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesConfig {
    pub method: BayesMethod,
    pub nodes_per_dim: usize,
    /// Half-width of the integration window in Laplace standard deviations.
    pub window_sd: f64,
    /// Points per dimension of the coarse scan that checks for mass outside the window.
    pub guard_points: usize,
    /// Panels per dimension used when the scan finds mass outside the window.
    pub guard_panels: usize,
    /// Largest tolerated scanned mass outside the window, relative to the Laplace mass.
    pub guard_tolerance: f64,
    pub mcmc_draws: usize,
    pub burn_in: usize,
    /// Per-coordinate proposal standard deviations; default `width / rate`.
    pub proposal_scale: Option<Vec<f64>>,
    pub seed: SimSeed,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            method: BayesMethod::Auto,
            nodes_per_dim: 64,
            window_sd: 10.0,
            guard_points: 17,
            guard_panels: 16,
            guard_tolerance: 1e-6,
            mcmc_draws: 20_000,
            burn_in: 2_000,
            proposal_scale: None,
            seed: SimSeed::new(0, 0),
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_dim < 8 {
            return Err(QlaError::Config("nodes_per_dim must be at least 8".into()));
        }
        if self.mcmc_draws <= self.burn_in {
            return Err(QlaError::Config("mcmc_draws must exceed burn_in".into()));
        }
        if !(self.window_sd > 0.0 && self.guard_tolerance >= 0.0) || self.guard_points < 2 || self.guard_panels == 0 {
            return Err(QlaError::Config("invalid quadrature window settings".into()));
        }
        if let Some(s) = &self.proposal_scale {
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(QlaError::Config("proposal scales must be positive".into()));
            }
        }
        Ok(())
    }

    fn resolved_method(&self, dim: usize) -> BayesMethod {
        match self.method {
            BayesMethod::Auto if dim <= 2 => BayesMethod::GaussLegendre,
            BayesMethod::Auto => BayesMethod::Metropolis,
            m => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationDiagnostics {
    pub method: BayesMethod,
    pub evaluations: usize,
    /// Mode of the log posterior, where the window or chain is centred.
    pub mode: Vec<f64>,
    pub nodes_per_dim: Option<usize>,
    pub panels_per_dim: Option<usize>,
    pub window_lower: Option<Vec<f64>>,
    pub window_upper: Option<Vec<f64>>,
    pub acceptance_rate: Option<f64>,
    /// Batch-means standard error of the chain average.
    pub mc_standard_error: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub restarts_converged: usize,
    pub restarts_agreeing: usize,
    pub boundary: bool,
    pub gradient_norm: f64,
    pub integration: Option<IntegrationDiagnostics>,
}

impl StageDiagnostics {
    fn from_optimum(opt: &OptimumReport, gradient_norm: f64) -> Self {
        Self {
            iterations: opt.iterations,
            evaluations: opt.evaluations,
            restarts: opt.restarts,
            restarts_converged: opt.restarts_converged,
            restarts_agreeing: opt.restarts_agreeing,
            boundary: opt.boundary,
            gradient_norm,
            integration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    /// `H₁` at the returned `α`.
    pub h1: f64,
    /// `H₂` at the returned `β` with the same chain's `α` plugged in.
    pub h2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub alpha: StageDiagnostics,
    pub beta: StageDiagnostics,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub method: EstimatorKind,
    pub scheme: SamplingScheme,
    /// Row-major `d × d`.
    pub lambda_hat: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub objective: Objectives,
    pub diagnostics: Diagnostics,
}

impl EstimationReport {
    pub fn boundary(&self) -> bool {
        self.diagnostics.alpha.boundary || self.diagnostics.beta.boundary
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| QlaError::Config(e.to_string()))
    }

    pub fn csv_header(&self) -> String {
        let d = (self.lambda_hat.len() as f64).sqrt() as usize;
        let mut cols = vec!["method".to_string()];
        for i in 1..=d {
            for j in 1..=d {
                cols.push(format!("lambda_{i}{j}"));
            }
        }
        cols.extend((1..=self.alpha.len()).map(|i| format!("alpha_{i}")));
        cols.extend((1..=self.beta.len()).map(|i| format!("beta_{i}")));
        cols.extend(["h1", "h2", "boundary"].map(String::from));
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![self.method.as_str().to_string()];
        cols.extend(
            self.lambda_hat
                .iter()
                .chain(&self.alpha)
                .chain(&self.beta)
                .chain([&self.objective.h1, &self.objective.h2])
                .map(|v| format!("{v:e}")),
        );
        cols.push(self.boundary().to_string());
        cols.join(",")
    }
}

fn check_scheme(series: &ObservationSeries, model: &DiffusionModel, scheme: &SamplingScheme) -> Result<()> {
    if series.scheme() != scheme {
        return Err(QlaError::DimensionMismatch("series was built for a different sampling scheme".into()));
    }
    if series.dim() != model.dim_state() {
        return Err(QlaError::DimensionMismatch(format!(
            "series has dimension {} but the model state has dimension {}",
            series.dim(),
            model.dim_state()
        )));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Adaptive ML-type estimator `(Λ̂ₙ, α̂ₙ, β̂ₙ)`.
pub fn adaptive_ml(
    series: &ObservationSeries,
    model: &DiffusionModel,
    scheme: &SamplingScheme,
    opt: &OptimizerConfig,
) -> Result<EstimationReport> {
    check_scheme(series, model, scheme)?;
    let ctx = QuasiLikContext::from_series(series, model)?;
    adaptive_ml_with_context(&ctx, opt)
}

/// ML chain on a prepared context.
pub fn adaptive_ml_with_context(ctx: &QuasiLikContext, opt: &OptimizerConfig) -> Result<EstimationReport> {
    let model = ctx.model();
    let a = maximize(|p| ctx.h1(p), model.alpha_box(), opt)?;
    let g_a = quasilik::gradient(ctx, &Contrast::Diffusion, &a.point)?;

    let drift = Contrast::Drift { alpha: a.point.clone() };
    let dc = ctx.drift_contrast(&a.point)?;
    let b = maximize(|p| dc.value(p), model.beta_box(), opt)?;
    let g_b = quasilik::gradient(ctx, &drift, &b.point)?;

    let mut warnings = Vec::new();
    if a.boundary {
        warnings.push(format!("alpha estimate {:?} lies on the box boundary", a.point));
    }
    if b.boundary {
        warnings.push(format!("beta estimate {:?} lies on the box boundary", b.point));
    }
    Ok(EstimationReport {
        method: EstimatorKind::Ml,
        scheme: *ctx.scheme(),
        lambda_hat: ctx.lambda_hat().to_vec(),
        alpha: a.point.clone(),
        beta: b.point.clone(),
        objective: Objectives { h1: a.value, h2: b.value },
        diagnostics: Diagnostics {
            alpha: StageDiagnostics::from_optimum(&a, norm(&g_a)),
            beta: StageDiagnostics::from_optimum(&b, norm(&g_b)),
            warnings,
        },
    })
}

/// Adaptive Bayes-type estimator `(Λ̂ₙ, α̃ₙ, β̃ₙ)`.
pub fn adaptive_bayes(
    series: &ObservationSeries,
    model: &DiffusionModel,
    scheme: &SamplingScheme,
    priors: (&PriorSpec, &PriorSpec),
    bcfg: &BayesConfig,
    opt: &OptimizerConfig,
) -> Result<EstimationReport> {
    check_scheme(series, model, scheme)?;
    let ctx = QuasiLikContext::from_series(series, model)?;
    adaptive_bayes_with_context(&ctx, priors, bcfg, opt)
}

/// Bayes chain on a prepared context.
pub fn adaptive_bayes_with_context(
    ctx: &QuasiLikContext,
    priors: (&PriorSpec, &PriorSpec),
    bcfg: &BayesConfig,
    opt: &OptimizerConfig,
) -> Result<EstimationReport> {
    bcfg.validate()?;
    let model = ctx.model();
    let mut warnings = Vec::new();

    let k_rate = ctx.rate(&Contrast::Diffusion);
    let log_post_a = |p: &[f64]| Ok(ctx.h1(p)? + priors.0.log_density(p)?);
    let a = posterior_mean(log_post_a, model.alpha_box(), bcfg, opt, k_rate, StreamId::Metropolis as u64)?;
    warnings.extend(a.warnings.iter().map(|w| format!("alpha: {w}")));
    let h1 = ctx.h1(&a.mean)?;
    let g_a = quasilik::gradient(ctx, &Contrast::Diffusion, &a.mean)?;

    let drift = Contrast::Drift { alpha: a.mean.clone() };
    let t_rate = ctx.rate(&drift);
    let dc = ctx.drift_contrast(&a.mean)?;
    let log_post_b = |p: &[f64]| Ok(dc.value(p)? + priors.1.log_density(p)?);
    let b = posterior_mean(log_post_b, model.beta_box(), bcfg, opt, t_rate, 16 + StreamId::Metropolis as u64)?;
    warnings.extend(b.warnings.iter().map(|w| format!("beta: {w}")));
    let h2 = dc.value(&b.mean)?;
    let g_b = quasilik::gradient(ctx, &drift, &b.mean)?;

    Ok(EstimationReport {
        method: EstimatorKind::Bayes,
        scheme: *ctx.scheme(),
        lambda_hat: ctx.lambda_hat().to_vec(),
        alpha: a.mean.clone(),
        beta: b.mean.clone(),
        objective: Objectives { h1, h2 },
        diagnostics: Diagnostics {
            alpha: a.stage(model.alpha_box(), norm(&g_a)),
            beta: b.stage(model.beta_box(), norm(&g_b)),
            warnings,
        },
    })
}

/// Result of integrating one unnormalised log posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub mode: OptimumReport,
    pub integration: IntegrationDiagnostics,
    pub warnings: Vec<String>,
}

impl PosteriorSummary {
    fn stage(&self, bounds: &ParamBox, gradient_norm: f64) -> StageDiagnostics {
        StageDiagnostics {
            boundary: bounds.near_boundary(&self.mean, 1e-6),
            integration: Some(self.integration.clone()),
            ..StageDiagnostics::from_optimum(&self.mode, gradient_norm)
        }
    }
}

/// Posterior mean of `exp(log_post)` over `bounds`.
///
/// `rate` sets the default Metropolis proposal (`width / rate`); `stream`
/// selects the Metropolis random stream under `cfg.seed`.
pub fn posterior_mean<F>(
    mut log_post: F,
    bounds: &ParamBox,
    cfg: &BayesConfig,
    opt: &OptimizerConfig,
    rate: f64,
    stream: u64,
) -> Result<PosteriorSummary>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    let mode = maximize(&mut log_post, bounds, opt)?;
    match cfg.resolved_method(bounds.dim()) {
        BayesMethod::Metropolis => metropolis(log_post, bounds, cfg, mode, rate, stream),
        _ => quadrature_mean(log_post, bounds, cfg, mode),
    }
}

fn laplace_sd<F>(log_post: &mut F, bounds: &ParamBox, mode: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let m = bounds.dim();
    let hess = fd::hessian(&mut *log_post, mode, Some(bounds))?;
    Ok((0..m)
        .map(|i| {
            let c = -hess[i * m + i];
            if c.is_finite() && c > 0.0 {
                1.0 / c.sqrt()
            } else {
                bounds.width(i)
            }
        })
        .collect())
}

/// Visits every point of the tensor grid `axes[0] × axes[1] × …`.
fn for_each_tensor(axes: &[Vec<(f64, f64)>], mut body: impl FnMut(&[f64], f64) -> Result<()>) -> Result<()> {
    let m = axes.len();
    if axes.iter().any(|a| a.is_empty()) {
        return Ok(());
    }
    let mut idx = vec![0usize; m];
    let mut point = vec![0.0; m];
    loop {
        let mut log_w = 0.0;
        for i in 0..m {
            let (x, w) = axes[i][idx[i]];
            point[i] = x;
            log_w += w.ln();
        }
        body(&point, log_w)?;
        let mut i = m;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                break;
            }
            idx[i] = 0;
        }
    }
}

fn composite_axis(lo: f64, hi: f64, panels: usize, nodes: &[f64], weights: &[f64]) -> Vec<(f64, f64)> {
    let width = (hi - lo) / panels as f64;
    let mut axis = Vec::with_capacity(panels * nodes.len());
    for p in 0..panels {
        let a = lo + p as f64 * width;
        let half = 0.5 * width;
        for (t, w) in nodes.iter().zip(weights) {
            axis.push((a + half * (1.0 + t), half * w));
        }
    }
    axis
}

fn quadrature_mean<F>(
    mut log_post: F,
    bounds: &ParamBox,
    cfg: &BayesConfig,
    mode: OptimumReport,
) -> Result<PosteriorSummary>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let m = bounds.dim();
    let sd = laplace_sd(&mut log_post, bounds, &mode.point)?;
    let mut lower: Vec<f64> = (0..m)
        .map(|i| (mode.point[i] - cfg.window_sd * sd[i]).max(bounds.lower()[i]))
        .collect();
    let mut upper: Vec<f64> = (0..m)
        .map(|i| (mode.point[i] + cfg.window_sd * sd[i]).min(bounds.upper()[i]))
        .collect();
    let mut evaluations = 0usize;
    let mut warnings = Vec::new();

    // Coarse scan of the whole box. The mass it sees outside the window,
    // relative to the Laplace mass, decides whether a full-box rule is needed.
    let scan_axes: Vec<Vec<(f64, f64)>> = (0..m)
        .map(|i| {
            (0..cfg.guard_points)
                .map(|j| (bounds.lower()[i] + bounds.width(i) * j as f64 / (cfg.guard_points - 1) as f64, 1.0))
                .collect()
        })
        .collect();
    let cell: f64 = (0..m).map(|i| bounds.width(i) / (cfg.guard_points - 1) as f64).product();
    let laplace_mass: f64 = sd.iter().map(|s| (2.0 * std::f64::consts::PI).sqrt() * s).product();
    let mut outside_mass = 0.0;
    for_each_tensor(&scan_axes, |p, _| {
        let outside = p.iter().enumerate().any(|(i, &x)| x < lower[i] || x > upper[i]);
        if outside {
            evaluations += 1;
            let v = log_post(p)?;
            if v.is_finite() {
                outside_mass += (v - mode.value).exp() * cell;
            }
        }
        Ok(())
    })?;
    let escaped = !(outside_mass <= cfg.guard_tolerance * laplace_mass);
    let panels = if escaped {
        warnings.push("posterior mass found outside the Laplace window; integrating over the full box".into());
        lower = bounds.lower().to_vec();
        upper = bounds.upper().to_vec();
        cfg.guard_panels
    } else {
        1
    };

    let (t, w) = gauss_legendre(cfg.nodes_per_dim);
    let axes: Vec<Vec<(f64, f64)>> = (0..m).map(|i| composite_axis(lower[i], upper[i], panels, &t, &w)).collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut points = Vec::with_capacity(total * m);
    let mut log_terms = Vec::with_capacity(total);
    for_each_tensor(&axes, |p, log_w| {
        evaluations += 1;
        let v = log_post(p)?;
        points.extend_from_slice(p);
        log_terms.push(if v.is_nan() { f64::NEG_INFINITY } else { v + log_w });
        Ok(())
    })?;
    let log_z = log_sum_exp(&log_terms);
    if !log_z.is_finite() {
        return Err(QlaError::PosteriorUnderflow);
    }
    let mut mean = vec![0.0; m];
    let mut mass = 0.0;
    for (q, lt) in log_terms.iter().enumerate() {
        let wq = (lt - log_z).exp();
        mass += wq;
        for i in 0..m {
            mean[i] += wq * points[q * m + i];
        }
    }
    if mass == 0.0 {
        return Err(QlaError::PosteriorUnderflow);
    }
    for (i, v) in mean.iter_mut().enumerate() {
        *v = (*v / mass).clamp(bounds.lower()[i], bounds.upper()[i]);
    }
    Ok(PosteriorSummary {
        mean,
        integration: IntegrationDiagnostics {
            method: BayesMethod::GaussLegendre,
            evaluations,
            mode: mode.point.clone(),
            nodes_per_dim: Some(cfg.nodes_per_dim),
            panels_per_dim: Some(panels),
            window_lower: Some(lower),
            window_upper: Some(upper),
            acceptance_rate: None,
            mc_standard_error: None,
        },
        mode,
        warnings,
    })
}

fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    loop {
        if x < lo {
            x = lo + (lo - x);
        } else if x > hi {
            x = hi - (x - hi);
        } else {
            return x;
        }
        if !(x.is_finite()) || (x - lo).abs() > 1e6 * w {
            return lo + 0.5 * w;
        }
    }
}

fn metropolis<F>(
    mut log_post: F,
    bounds: &ParamBox,
    cfg: &BayesConfig,
    mode: OptimumReport,
    rate: f64,
    stream: u64,
) -> Result<PosteriorSummary>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let m = bounds.dim();
    let scale: Vec<f64> = match &cfg.proposal_scale {
        Some(s) if s.len() == m => s.clone(),
        Some(_) => return Err(QlaError::DimensionMismatch("proposal_scale length must match the parameter".into())),
        None => (0..m).map(|i| bounds.width(i) / rate).collect(),
    };
    let mut rng = cfg.seed.stream_raw(stream);
    let normal = rand_distr::StandardNormal;
    let mut current = mode.point.clone();
    let mut current_lp = log_post(&current)?;
    let mut proposal = vec![0.0; m];
    let mut accepted = 0usize;
    let kept = cfg.mcmc_draws - cfg.burn_in;
    let mut draws = Vec::with_capacity(kept * m);
    let mut evaluations = 1usize;
    for it in 0..cfg.mcmc_draws {
        for i in 0..m {
            let z: f64 = rng.sample(normal);
            proposal[i] = reflect(current[i] + scale[i] * z, bounds.lower()[i], bounds.upper()[i]);
        }
        let lp = log_post(&proposal)?;
        evaluations += 1;
        let u: f64 = rng.random();
        if lp.is_finite() && u.ln() < lp - current_lp {
            current.copy_from_slice(&proposal);
            current_lp = lp;
            accepted += 1;
        }
        if it >= cfg.burn_in {
            draws.extend_from_slice(&current);
        }
    }
    let rate_acc = accepted as f64 / cfg.mcmc_draws as f64;
    let mut warnings = Vec::new();
    if !(0.1..=0.6).contains(&rate_acc) {
        warnings.push(format!("Metropolis acceptance rate {rate_acc:.3} is outside [0.1, 0.6]"));
    }
    let mean: Vec<f64> = (0..m)
        .map(|i| (0..kept).map(|t| draws[t * m + i]).sum::<f64>() / kept as f64)
        .collect();
    let batches = 50.min(kept);
    let per = kept / batches;
    let mcse: Vec<f64> = (0..m)
        .map(|i| {
            let bm: Vec<f64> = (0..batches)
                .map(|b| (0..per).map(|t| draws[(b * per + t) * m + i]).sum::<f64>() / per as f64)
                .collect();
            if batches < 2 {
                return f64::NAN;
            }
            (crate::stats::sample_variance(&bm) / batches as f64).sqrt()
        })
        .collect();
    Ok(PosteriorSummary {
        mean,
        integration: IntegrationDiagnostics {
            method: BayesMethod::Metropolis,
            evaluations,
            mode: mode.point.clone(),
            nodes_per_dim: None,
            panels_per_dim: None,
            window_lower: None,
            window_upper: None,
            acceptance_rate: Some(rate_acc),
            mc_standard_error: Some(mcse),
        },
        mode,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_ou_model, InitialState, NoiseFamily, NoiseSpec, TrueParameters};
    use crate::simulate::{contaminate, simulate_path};

    fn ou_series(n: usize, h: f64, seed: u64) -> (ObservationSeries, DiffusionModel) {
        let model = builtin_ou_model();
        let scheme = SamplingScheme::build(n, h, 2.0).unwrap();
        let params = TrueParameters {
            alpha: vec![1.0],
            beta: vec![1.0, 0.0],
            noise: NoiseSpec::scalar(0.01, NoiseFamily::Gaussian).unwrap(),
            x0: InitialState::Fixed(vec![0.0]),
        };
        let s = SimSeed::new(seed, 0);
        let path = simulate_path(&model, &params, &scheme, 5, s).unwrap();
        (contaminate(&path, &params.noise, s).unwrap(), model)
    }

    #[test]
    fn ml_estimates_are_inside_boxes_and_deterministic() {
        let (series, model) = ou_series(20_000, 0.01, 3);
        let opt = OptimizerConfig { multistarts: 3, ..Default::default() };
        let r1 = adaptive_ml(&series, &model, series.scheme(), &opt).unwrap();
        let r2 = adaptive_ml(&series, &model, series.scheme(), &opt).unwrap();
        assert_eq!(r1, r2);
        assert!(model.alpha_box().contains_closed(&r1.alpha));
        assert!(model.beta_box().contains_closed(&r1.beta));
        assert!((r1.alpha[0] - 1.0).abs() < 0.1, "{:?}", r1.alpha);
        let ctx = QuasiLikContext::from_series(&series, &model).unwrap();
        assert_eq!(ctx.h2(&r1.beta, &r1.alpha).unwrap(), r1.objective.h2);
    }

    #[test]
    fn flat_posterior_mean_is_box_midpoint() {
        let bounds = ParamBox::from_intervals(&[[0.1, 3.0], [-2.0, 2.0]]).unwrap();
        let cfg = BayesConfig::default();
        let r = posterior_mean(|_| Ok(0.0), &bounds, &cfg, &OptimizerConfig::default(), 100.0, 4).unwrap();
        assert!((r.mean[0] - 1.55).abs() < 1e-12, "{:?}", r.mean);
        assert!(r.mean[1].abs() < 1e-12);
    }

    #[test]
    fn gaussian_posterior_quadrature() {
        let bounds = ParamBox::from_intervals(&[[0.0, 1.0]]).unwrap();
        let (mu, sd) = (0.37, 0.01);
        let lp = |p: &[f64]| Ok(-0.5 * ((p[0] - mu) / sd).powi(2));
        let r = posterior_mean(lp, &bounds, &BayesConfig::default(), &OptimizerConfig::default(), 1.0, 4).unwrap();
        assert!((r.mean[0] - mu).abs() < 1e-6);
        assert_eq!(r.integration.panels_per_dim, Some(1));
    }

    #[test]
    fn bimodal_posterior_triggers_full_box() {
        let bounds = ParamBox::from_intervals(&[[0.0, 1.0]]).unwrap();
        let lp = |p: &[f64]| {
            let a = -0.5 * ((p[0] - 0.2) / 0.01).powi(2);
            let b = -0.5 * ((p[0] - 0.8) / 0.01).powi(2);
            Ok(log_sum_exp(&[a, b]))
        };
        let r = posterior_mean(lp, &bounds, &BayesConfig::default(), &OptimizerConfig::default(), 1.0, 4).unwrap();
        assert_eq!(r.integration.panels_per_dim, Some(16));
        assert!((r.mean[0] - 0.5).abs() < 1e-6, "{:?}", r.mean);
    }

    #[test]
    fn metropolis_gaussian_within_mcse() {
        let bounds = ParamBox::from_intervals(&[[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        let mu = [0.3, 0.5, 0.6];
        let lp = |p: &[f64]| Ok((0..3).map(|i| -0.5 * ((p[i] - mu[i]) / 0.02).powi(2)).sum::<f64>());
        let cfg = BayesConfig { seed: SimSeed::new(11, 0), ..Default::default() };
        let r = posterior_mean(lp, &bounds, &cfg, &OptimizerConfig::default(), 25.0, 4).unwrap();
        let se = r.integration.mc_standard_error.clone().unwrap();
        for i in 0..3 {
            assert!((r.mean[i] - mu[i]).abs() < 3.0 * se[i].max(1e-4), "{i}: {:?} se {:?}", r.mean, se);
        }
        assert_eq!(r.integration.method, BayesMethod::Metropolis);
    }

    #[test]
    fn reflection_stays_in_box() {
        for x in [-5.3, -0.2, 0.5, 1.7, 12.9] {
            let y = reflect(x, 0.0, 1.0);
            assert!((0.0..=1.0).contains(&y));
        }
        assert!((reflect(1.25, 0.0, 1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn bayes_close_to_ml_on_ou() {
        let (series, model) = ou_series(20_000, 0.01, 5);
        let opt = OptimizerConfig { multistarts: 3, ..Default::default() };
        let ml = adaptive_ml(&series, &model, series.scheme(), &opt).unwrap();
        let cfg = BayesConfig { nodes_per_dim: 24, ..Default::default() };
        let prior = PriorSpec::Uniform;
        let b = adaptive_bayes(&series, &model, series.scheme(), (&prior, &prior), &cfg, &opt).unwrap();
        let k = series.scheme().k as f64;
        assert!(k.sqrt() * (b.alpha[0] - ml.alpha[0]).abs() < 0.5);
        assert_eq!(b.method, EstimatorKind::Bayes);
        assert!(b.diagnostics.alpha.integration.is_some());
    }

    #[test]
    fn csv_row_matches_header() {
        let (series, model) = ou_series(3_000, 0.01, 1);
        let opt = OptimizerConfig { multistarts: 1, ..Default::default() };
        let r = adaptive_ml(&series, &model, series.scheme(), &opt).unwrap();
        assert_eq!(r.csv_header().split(',').count(), r.to_csv_row().split(',').count());
        assert!(r.csv_header().starts_with("method,lambda_11,alpha_1,beta_1,beta_2"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let c = BayesConfig { nodes_per_dim: 4, ..Default::default() };
        assert!(c.validate().is_err());
        let c = BayesConfig { mcmc_draws: 10, burn_in: 10, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(PriorSpec::density(|_| 0.0).log_density(&[0.0]).is_err());
    }
}
