//! Monte Carlo replication engine: simulate, estimate, normalise the errors
//! at rates `(√n, √k_n, √T_n)` and compare with the sandwich covariance.

mod config;
mod report;
mod tail;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    ExperimentConfig, InvariantConfig, InvariantKind, ModelConfig, NoiseConfig, ResolvedExperiment, SchemeConfig,
    TailConfig, TruthConfig,
};
pub use report::{emit_report, write_errors_csv, write_tail_csv, RuntimeStats};
pub use tail::{default_directions, sup_log_field, Field, TailRow, TailTable};

use crate::asymptotics::{information_matrices, AsymptoticCovariance, InvariantMeasure, VechIndexer};
use crate::error::{QlaError, Result};
use crate::estimate::{adaptive_bayes_with_context, adaptive_ml_with_context, EstimationReport, EstimatorKind, PriorSpec};
use crate::model::SamplingScheme;
use crate::quasilik::{Contrast, QuasiLikContext};
use crate::rng::SimSeed;
use crate::simulate::{contaminate, simulate_path, ObservationSeries};
use crate::stats;

/// Normalised estimation errors of one estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedErrors {
    pub rep_index: usize,
    pub scheme_index: usize,
    pub method: EstimatorKind,
    /// `√n (vech Λ̂ − vech Λ⋆)`.
    pub noise: Vec<f64>,
    /// `√k_n (α − α⋆)`.
    pub alpha: Vec<f64>,
    /// `√T_n (β − β⋆)`.
    pub beta: Vec<f64>,
    pub boundary: bool,
}

impl NormalizedErrors {
    pub fn coordinates(&self) -> Vec<f64> {
        self.noise.iter().chain(&self.alpha).chain(&self.beta).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub rep_index: usize,
    pub scheme_index: usize,
    pub method: EstimatorKind,
    pub error: String,
}

/// Everything one replication index produced across schemes and estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub rep_index: usize,
    pub errors: Vec<NormalizedErrors>,
    pub failures: Vec<FailureRecord>,
    /// `(scheme_index, field, sup log Z per r)` when the tail table is enabled.
    pub tail_sups: Vec<(usize, Field, Vec<f64>)>,
}

/// Per-(scheme, estimator) aggregate of the normalised errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub scheme_index: usize,
    pub scheme: SamplingScheme,
    pub method: EstimatorKind,
    pub labels: Vec<String>,
    pub count: usize,
    pub mean: Vec<f64>,
    /// `None` when fewer than two replications succeeded.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub moment2: Vec<f64>,
    pub moment4: Vec<f64>,
    /// Diagonal of the theoretical sandwich.
    pub sandwich_diagonal: Vec<f64>,
    /// `mean / (sd / √count)`.
    pub mean_z_scores: Option<Vec<f64>>,
    /// `(empirical variance − sandwich) / sandwich` per coordinate.
    pub variance_relative_errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: ExperimentConfig,
    pub schemes: Vec<SamplingScheme>,
    pub asymptotics: Vec<AsymptoticCovariance>,
    pub groups: Vec<GroupSummary>,
    pub attempted: usize,
    pub failure_count: usize,
    pub failure_rate: f64,
    pub failures: Vec<FailureRecord>,
    pub errors: Vec<NormalizedErrors>,
    pub tail: Option<TailTable>,
    /// Wall-clock figures; kept out of `report.json` so that file is reproducible.
    #[serde(skip)]
    pub runtime: Option<RuntimeStats>,
}

impl McReport {
    pub fn group(&self, scheme_index: usize, method: EstimatorKind) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.scheme_index == scheme_index && g.method == method)
    }

    pub fn errors_for(&self, scheme_index: usize, method: EstimatorKind) -> impl Iterator<Item = &NormalizedErrors> {
        self.errors
            .iter()
            .filter(move |e| e.scheme_index == scheme_index && e.method == method)
    }
}

/// Seed of one (replication, scheme) pair; schemes use disjoint index ranges.
pub fn replication_seed(master_seed: u64, rep_index: usize, scheme_index: usize) -> SimSeed {
    SimSeed::new(master_seed, ((scheme_index as u64) << 40) | rep_index as u64)
}

/// Simulates the noisy series of one replication under one scheme.
pub fn simulate_series(exp: &ResolvedExperiment, rep_index: usize, scheme_index: usize) -> Result<ObservationSeries> {
    let seed = replication_seed(exp.config.master_seed, rep_index, scheme_index);
    let scheme = &exp.schemes[scheme_index];
    let path = simulate_path(&exp.model, &exp.truth, scheme, exp.config.substeps, seed)?;
    contaminate(&path, &exp.truth.noise, seed)
}

fn normalise(exp: &ResolvedExperiment, scheme: &SamplingScheme, r: &EstimationReport, rep: usize, si: usize) -> Result<NormalizedErrors> {
    let d = exp.model.dim_state();
    let vi = VechIndexer::new(d);
    let sn = (scheme.n as f64).sqrt();
    let sk = (scheme.k as f64).sqrt();
    let st = scheme.t_n().sqrt();
    let noise: Vec<f64> = vi
        .vech(&r.lambda_hat)
        .iter()
        .zip(vi.vech(exp.truth.noise.lambda()))
        .map(|(a, b)| sn * (a - b))
        .collect();
    let alpha: Vec<f64> = r.alpha.iter().zip(&exp.truth.alpha).map(|(a, b)| sk * (a - b)).collect();
    let beta: Vec<f64> = r.beta.iter().zip(&exp.truth.beta).map(|(a, b)| st * (a - b)).collect();
    let e = NormalizedErrors {
        rep_index: rep,
        scheme_index: si,
        method: r.method,
        noise,
        alpha,
        beta,
        boundary: r.boundary(),
    };
    if e.coordinates().iter().any(|v| !v.is_finite()) {
        return Err(QlaError::NonFiniteAverage);
    }
    Ok(e)
}

fn run_scheme(
    exp: &ResolvedExperiment,
    rep_index: usize,
    scheme_index: usize,
    methods: &[EstimatorKind],
    with_tail: bool,
    out: &mut ReplicationOutcome,
) {
    let cfg = &exp.config;
    let scheme = exp.schemes[scheme_index];
    let fail_all = |out: &mut ReplicationOutcome, e: &QlaError| {
        for &m in methods {
            out.failures.push(FailureRecord {
                rep_index,
                scheme_index,
                method: m,
                error: e.to_string(),
            });
        }
    };
    let ctx = match simulate_series(exp, rep_index, scheme_index).and_then(|s| QuasiLikContext::from_series(&s, &exp.model)) {
        Ok(c) => c,
        Err(e) => return fail_all(out, &e),
    };
    let prior = PriorSpec::Uniform;
    let mut ml_alpha = None;
    for &m in methods {
        let res = match m {
            EstimatorKind::Ml => adaptive_ml_with_context(&ctx, &cfg.optimizer),
            EstimatorKind::Bayes => {
                let mut b = cfg.bayes.clone();
                b.seed = replication_seed(cfg.master_seed, rep_index, scheme_index);
                adaptive_bayes_with_context(&ctx, (&prior, &prior), &b, &cfg.optimizer)
            }
        }
        .and_then(|r| normalise(exp, &scheme, &r, rep_index, scheme_index).map(|e| (r, e)));
        match res {
            Ok((r, e)) => {
                if m == EstimatorKind::Ml {
                    ml_alpha = Some(r.alpha.clone());
                }
                out.errors.push(e);
            }
            Err(e) => out.failures.push(FailureRecord {
                rep_index,
                scheme_index,
                method: m,
                error: e.to_string(),
            }),
        }
    }
    if with_tail {
        let alpha_hat = match ml_alpha {
            Some(a) => Some(a),
            None => adaptive_ml_with_context(&ctx, &cfg.optimizer).ok().map(|r| r.alpha),
        };
        let t = &cfg.tail;
        let adirs = tail::normalise(
            &t.alpha_directions.clone().unwrap_or_else(|| default_directions(exp.model.dim_alpha(), t.directions_per_pair)),
        );
        let bdirs = tail::normalise(
            &t.beta_directions.clone().unwrap_or_else(|| default_directions(exp.model.dim_beta(), t.directions_per_pair)),
        );
        if let Ok(s) = sup_log_field(&ctx, &Contrast::Diffusion, &exp.truth.alpha, &t.r_grid, &adirs, t.radii) {
            out.tail_sups.push((scheme_index, Field::Z1, s));
        }
        if let Some(a) = alpha_hat {
            let c = Contrast::Drift { alpha: a };
            if let Ok(s) = sup_log_field(&ctx, &c, &exp.truth.beta, &t.r_grid, &bdirs, t.radii) {
                out.tail_sups.push((scheme_index, Field::Z2, s));
            }
        }
    }
}

fn replicate(exp: &ResolvedExperiment, rep_index: usize, methods: &[EstimatorKind], with_tail: bool) -> ReplicationOutcome {
    let mut out = ReplicationOutcome {
        rep_index,
        errors: Vec::new(),
        failures: Vec::new(),
        tail_sups: Vec::new(),
    };
    for si in 0..exp.schemes.len() {
        run_scheme(exp, rep_index, si, methods, with_tail, &mut out);
    }
    out
}

/// One replication: every scheme, every configured estimator. Estimator
/// failures are recorded in the outcome rather than returned as errors.
pub fn run_replication(cfg: &ExperimentConfig, rep_index: usize) -> Result<ReplicationOutcome> {
    let exp = cfg.resolve()?;
    if rep_index >= cfg.replications {
        return Err(QlaError::Domain(format!(
            "replication index {rep_index} outside 0..{}",
            cfg.replications
        )));
    }
    Ok(replicate(&exp, rep_index, &cfg.estimators, false))
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| QlaError::Config(format!("thread pool: {e}")))
}

fn invariant_measure(exp: &ResolvedExperiment) -> Result<InvariantMeasure> {
    let closed = InvariantMeasure::closed_form(&exp.model, &exp.truth);
    match (exp.config.invariant.kind, closed) {
        (InvariantKind::Auto | InvariantKind::ClosedForm, Some(nu)) => Ok(nu),
        (InvariantKind::ClosedForm, None) => Err(QlaError::Config(format!(
            "model {} registers no closed-form invariant law",
            exp.model.name()
        ))),
        _ => InvariantMeasure::ergodic(
            &exp.model,
            &exp.truth,
            exp.config.invariant.ergodic,
            SimSeed::new(exp.config.master_seed, u64::MAX),
        ),
    }
}

/// Theoretical covariance for each scheme (one per distinct `τ`, repeated per scheme).
pub fn theoretical_covariances(exp: &ResolvedExperiment) -> Result<Vec<AsymptoticCovariance>> {
    let nu = invariant_measure(exp)?;
    exp.schemes
        .iter()
        .map(|s| information_matrices(&exp.model, &exp.truth, &exp.truth.noise, s.tau, &nu))
        .collect()
}

fn labels(exp: &ResolvedExperiment) -> Vec<String> {
    let d = exp.model.dim_state();
    let mut out = Vec::new();
    for i in 1..=d {
        for j in i..=d {
            out.push(format!("lambda_{i}{j}"));
        }
    }
    out.extend((1..=exp.model.dim_alpha()).map(|i| format!("alpha_{i}")));
    out.extend((1..=exp.model.dim_beta()).map(|i| format!("beta_{i}")));
    out
}

fn summarise(exp: &ResolvedExperiment, si: usize, method: EstimatorKind, errs: &[&NormalizedErrors], ac: &AsymptoticCovariance) -> GroupSummary {
    let rows: Vec<Vec<f64>> = errs.iter().map(|e| e.coordinates()).collect();
    let m = ac.size();
    let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
    let mean: Vec<f64> = (0..m).map(|i| if rows.is_empty() { f64::NAN } else { stats::mean(&col(i)) }).collect();
    let moment2: Vec<f64> = (0..m).map(|i| stats::raw_moment(&col(i), 2)).collect();
    let moment4: Vec<f64> = (0..m).map(|i| stats::raw_moment(&col(i), 4)).collect();
    let covariance = stats::covariance(&rows);
    let sandwich_diagonal = ac.sandwich_diagonal();
    let (mean_z_scores, variance_relative_errors) = match &covariance {
        Some(c) => (
            Some((0..m).map(|i| mean[i] / (c[i][i] / rows.len() as f64).sqrt()).collect()),
            Some((0..m).map(|i| (c[i][i] - sandwich_diagonal[i]) / sandwich_diagonal[i]).collect()),
        ),
        None => (None, None),
    };
    GroupSummary {
        scheme_index: si,
        scheme: exp.schemes[si],
        method,
        labels: labels(exp),
        count: rows.len(),
        mean,
        covariance,
        moment2,
        moment4,
        sandwich_diagonal,
        mean_z_scores,
        variance_relative_errors,
    }
}

fn tail_table(exp: &ResolvedExperiment, outcomes: &[ReplicationOutcome]) -> TailTable {
    let r_grid = &exp.config.tail.r_grid;
    let mut rows = Vec::new();
    for si in 0..exp.schemes.len() {
        for field in [Field::Z1, Field::Z2] {
            let sups: Vec<&Vec<f64>> = outcomes
                .iter()
                .flat_map(|o| o.tail_sups.iter())
                .filter(|(s, f, _)| *s == si && *f == field)
                .map(|(_, _, v)| v)
                .collect();
            let n = sups.len();
            for (k, &r) in r_grid.iter().enumerate() {
                let hits = sups.iter().filter(|v| v[k] >= -r).count();
                let exhausted = sups.iter().filter(|v| v[k] == f64::NEG_INFINITY).count();
                rows.push(TailRow {
                    scheme_index: si,
                    field,
                    r,
                    frequency: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
                    replications: n,
                    exhausted,
                });
            }
        }
    }
    TailTable { rows }
}

fn aggregate(exp: &ResolvedExperiment, outcomes: Vec<ReplicationOutcome>, methods: &[EstimatorKind], seconds: f64) -> Result<McReport> {
    if outcomes.iter().all(|o| o.errors.is_empty()) {
        return Err(QlaError::AllReplicationsFailed);
    }
    let asymptotics = theoretical_covariances(exp)?;
    let tail = exp.config.tail.enabled.then(|| tail_table(exp, &outcomes));
    let mut errors = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        errors.extend(o.errors);
        failures.extend(o.failures);
    }
    let attempted = exp.config.replications * exp.schemes.len() * methods.len();
    let mut groups = Vec::new();
    for si in 0..exp.schemes.len() {
        for &m in methods {
            let errs: Vec<&NormalizedErrors> = errors.iter().filter(|e| e.scheme_index == si && e.method == m).collect();
            groups.push(summarise(exp, si, m, &errs, &asymptotics[si]));
        }
    }
    Ok(McReport {
        config: exp.config.clone(),
        schemes: exp.schemes.clone(),
        asymptotics,
        groups,
        attempted,
        failure_count: failures.len(),
        failure_rate: failures.len() as f64 / attempted as f64,
        failures,
        errors,
        tail,
        runtime: Some(RuntimeStats {
            wall_seconds: seconds,
            threads: exp.config.threads.unwrap_or_else(rayon::current_num_threads),
            replications: exp.config.replications,
        }),
    })
}

fn run_all(exp: &ResolvedExperiment, methods: &[EstimatorKind], with_tail: bool) -> Result<(Vec<ReplicationOutcome>, f64)> {
    let pool = thread_pool(exp.config.threads)?;
    let start = Instant::now();
    let outcomes: Vec<ReplicationOutcome> = pool.install(|| {
        (0..exp.config.replications)
            .into_par_iter()
            .map(|rep| replicate(exp, rep, methods, with_tail))
            .collect()
    });
    Ok((outcomes, start.elapsed().as_secs_f64()))
}

/// Runs all replications and aggregates them against the sandwich covariance.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<McReport> {
    let exp = cfg.resolve()?;
    let (outcomes, secs) = run_all(&exp, &cfg.estimators, cfg.tail.enabled)?;
    aggregate(&exp, outcomes, &cfg.estimators, secs)
}

/// Tail frequencies only, with the given radius grid and directions (`None`
/// keeps the configured or default directions for that field).
pub fn pldi_tail_table(
    cfg: &ExperimentConfig,
    r_grid: &[f64],
    alpha_directions: Option<Vec<Vec<f64>>>,
    beta_directions: Option<Vec<Vec<f64>>>,
) -> Result<TailTable> {
    let mut c = cfg.clone();
    c.tail.enabled = true;
    c.tail.r_grid = r_grid.to_vec();
    if alpha_directions.is_some() {
        c.tail.alpha_directions = alpha_directions;
    }
    if beta_directions.is_some() {
        c.tail.beta_directions = beta_directions;
    }
    let exp = c.resolve()?;
    let (outcomes, _) = run_all(&exp, &[], true)?;
    Ok(tail_table(&exp, &outcomes))
}

/// `H₁` or `H₂(·; α)` on a tensor grid, for plotting.
pub fn contrast_surface(ctx: &QuasiLikContext, contrast: &Contrast, axes: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut out = Vec::new();
    if axes.iter().any(Vec::is_empty) {
        return Ok(out);
    }
    let m = axes.len();
    let mut idx = vec![0usize; m];
    ctx.with_objective(contrast, |f| {
        loop {
            let p: Vec<f64> = (0..m).map(|i| axes[i][idx[i]]).collect();
            let v = f(&p)?;
            out.push((p, v));
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
    })?;
    Ok(out)
}
