//! Derivative-free maximisation over a closed box: Nelder–Mead with every
//! trial point projected onto the box, run from a deterministic set of starts.

use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::model::ParamBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// Center, then the `2^m` corners shrunk 10% toward the center, then
    /// Halton points until `multistarts` starts exist.
    #[default]
    LatticeCornersPlusCenter,
    UserList(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub multistarts: usize,
    pub max_iterations: usize,
    /// Simplex diameter tolerance (sup norm, parameter units).
    pub tol_x: f64,
    /// Spread of objective values across the simplex, relative to `1 + |f|`.
    pub tol_f: f64,
    pub start_rule: StartRule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            multistarts: 8,
            max_iterations: 500,
            tol_x: 1e-8,
            tol_f: 1e-10,
            start_rule: StartRule::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.multistarts == 0 {
            return Err(QlaError::Config("multistarts must be at least 1".into()));
        }
        if !(self.tol_x > 0.0 && self.tol_f > 0.0) {
            return Err(QlaError::Config("optimizer tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub restarts_converged: usize,
    /// Converged starts whose optimum agrees with the returned point.
    pub restarts_agreeing: usize,
    /// The returned point lies on (or within `1e-6` of the width of) a face.
    pub boundary: bool,
}

/// Start points for a box, in the order they are tried.
pub fn start_points(bounds: &ParamBox, cfg: &OptimizerConfig) -> Vec<Vec<f64>> {
    let mut starts = match &cfg.start_rule {
        StartRule::UserList(list) => list.clone(),
        StartRule::LatticeCornersPlusCenter => {
            let mut s = vec![bounds.center()];
            s.extend(bounds.shrunk_corners(0.1));
            let mut idx = 1;
            while s.len() < cfg.multistarts {
                s.push(
                    (0..bounds.dim())
                        .map(|i| bounds.lower()[i] + halton(idx, PRIMES[i % PRIMES.len()]) * bounds.width(i))
                        .collect(),
                );
                idx += 1;
            }
            s
        }
    };
    starts.truncate(cfg.multistarts.max(1));
    for s in starts.iter_mut() {
        bounds.clamp(s);
    }
    starts
}

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

struct Run {
    point: Vec<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

/// Maximises `f` over the closed box. The best start wins; exact ties go
/// to the lexicographically smallest point.
pub fn maximize<F>(mut f: F, bounds: &ParamBox, cfg: &OptimizerConfig) -> Result<OptimumReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    let starts = start_points(bounds, cfg);
    let mut runs = Vec::with_capacity(starts.len());
    for s in &starts {
        runs.push(polished_run(&mut f, bounds, s, cfg)?);
    }
    let converged: Vec<&Run> = runs.iter().filter(|r| r.converged).collect();
    if converged.is_empty() {
        return Err(QlaError::OptimizerStalled {
            max_iterations: cfg.max_iterations,
        });
    }
    let best = converged
        .iter()
        .copied()
        .reduce(|a, b| if better(b, a) { b } else { a })
        .expect("nonempty");
    let agreeing = converged
        .iter()
        .filter(|r| {
            r.point
                .iter()
                .enumerate()
                .all(|(i, v)| (v - best.point[i]).abs() <= 1e-6 * bounds.width(i))
        })
        .count();
    Ok(OptimumReport {
        point: best.point.clone(),
        value: best.value,
        iterations: runs.iter().map(|r| r.iterations).sum(),
        evaluations: runs.iter().map(|r| r.evaluations).sum(),
        restarts: runs.len(),
        restarts_converged: converged.len(),
        restarts_agreeing: agreeing,
        boundary: bounds.near_boundary(&best.point, 1e-6),
    })
}

fn better(a: &Run, b: &Run) -> bool {
    if a.value != b.value {
        return a.value > b.value;
    }
    a.point
        .iter()
        .zip(&b.point)
        .find(|(x, y)| x != y)
        .map(|(x, y)| x < y)
        .unwrap_or(false)
}

/// Nelder–Mead, re-started from its own optimum until it stops improving
/// (guards against a simplex collapsed onto a face).
fn polished_run<F>(f: &mut F, bounds: &ParamBox, start: &[f64], cfg: &OptimizerConfig) -> Result<Run>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut run = nelder_mead(f, bounds, start, cfg)?;
    for _ in 0..3 {
        if !run.converged {
            break;
        }
        let again = nelder_mead(f, bounds, &run.point, cfg)?;
        let improved = again.value > run.value + cfg.tol_f * (1.0 + run.value.abs());
        let (iters, evals) = (run.iterations + again.iterations, run.evaluations + again.evaluations);
        if again.value > run.value || (again.value == run.value && again.converged) {
            run = again;
        }
        run.iterations = iters;
        run.evaluations = evals;
        if !improved {
            break;
        }
    }
    Ok(run)
}

fn nelder_mead<F>(f: &mut F, bounds: &ParamBox, start: &[f64], cfg: &OptimizerConfig) -> Result<Run>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let m = bounds.dim();
    let mut evaluations = 0usize;
    // minimise the negated objective; non-finite values rank last
    let mut cost = |x: &[f64]| -> Result<f64> {
        evaluations += 1;
        let v = f(x)?;
        Ok(if v.is_finite() { -v } else { f64::INFINITY })
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut x0 = start.to_vec();
    bounds.clamp(&mut x0);
    simplex.push(x0.clone());
    for i in 0..m {
        let mut v = x0.clone();
        let step = 0.1 * bounds.width(i);
        v[i] = if v[i] + step <= bounds.upper()[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values = Vec::with_capacity(m + 1);
    for v in &simplex {
        values.push(cost(v)?);
    }
    let project = |mut p: Vec<f64>| {
        bounds.clamp(&mut p);
        p
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        // sort ascending by cost; ties by lexicographic point order
        let mut order: Vec<usize> = (0..=m).collect();
        order.sort_by(|&a, &b| {
            values[a]
                .partial_cmp(&values[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| simplex[a].partial_cmp(&simplex[b]).unwrap_or(std::cmp::Ordering::Equal))
        });
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let spread = values[m] - values[0];
        if diameter <= cfg.tol_x && spread <= cfg.tol_f * (1.0 + values[0].abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..m)
            .map(|i| simplex[..m].iter().map(|v| v[i]).sum::<f64>() / m as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            project(
                centroid
                    .iter()
                    .zip(&simplex[m])
                    .map(|(c, w)| c + t * (c - w))
                    .collect(),
            )
        };
        let xr = along(1.0);
        let fr = cost(&xr)?;
        if fr < values[0] {
            let xe = along(2.0);
            let fe = cost(&xe)?;
            if fe < fr {
                simplex[m] = xe;
                values[m] = fe;
            } else {
                simplex[m] = xr;
                values[m] = fr;
            }
            continue;
        }
        if fr < values[m - 1] {
            simplex[m] = xr;
            values[m] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[m] {
            let xc = along(0.5);
            let fc = cost(&xc)?;
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = cost(&xc)?;
            (xc, fc)
        };
        if fc < values[m].min(fr) {
            simplex[m] = xc;
            values[m] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=m {
            let p: Vec<f64> = best
                .iter()
                .zip(&simplex[i])
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            simplex[i] = project(p);
            values[i] = cost(&simplex[i])?;
        }
    }
    let best = (0..=m)
        .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal))
        .expect("simplex nonempty");
    Ok(Run {
        point: simplex[best].clone(),
        value: -values[best],
        iterations,
        evaluations,
        converged,
    })
}
