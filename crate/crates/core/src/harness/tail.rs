use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ParamBox;
use crate::quasilik::{log_random_field, Contrast, QuasiLikContext};

/// Which random field a tail row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    /// `Z₁(u) = exp(H₁(α⋆ + u/√k) − H₁(α⋆))` with `Λ̂` plugged in.
    Z1,
    /// `Z₂(u) = exp(H₂(β⋆ + u/√T; α̂) − H₂(β⋆; α̂))`.
    Z2,
}

impl Field {
    pub fn as_str(&self) -> &'static str {
        match self {
            Field::Z1 => "z1",
            Field::Z2 => "z2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub scheme_index: usize,
    pub field: Field,
    pub r: f64,
    /// Fraction of replications with `sup log Z ≥ −r`.
    pub frequency: f64,
    pub replications: usize,
    /// Replications whose grid had no admissible point with `|u| ≥ r`.
    pub exhausted: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TailTable {
    pub rows: Vec<TailRow>,
}

impl TailTable {
    pub fn frequencies(&self, scheme_index: usize, field: Field) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.scheme_index == scheme_index && r.field == field)
            .map(|r| (r.r, r.frequency))
            .collect()
    }
}

/// Default unit directions: `±e₁` in one dimension, otherwise
/// `per_pair` equally spaced directions in every coordinate plane.
pub fn default_directions(m: usize, per_pair: usize) -> Vec<Vec<f64>> {
    if m == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    let per_pair = per_pair.max(1);
    for i in 0..m {
        for j in i + 1..m {
            for s in 0..per_pair {
                let theta = 2.0 * std::f64::consts::PI * s as f64 / per_pair as f64;
                let mut v = vec![0.0; m];
                v[i] = theta.cos();
                v[j] = theta.sin();
                for x in v.iter_mut() {
                    if x.abs() < 1e-15 {
                        *x = 0.0;
                    }
                }
                if !out.iter().any(|w| w.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12)) {
                    out.push(v);
                }
            }
        }
    }
    out
}

pub(crate) fn normalise(dirs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    dirs.iter()
        .filter_map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
        })
        .collect()
}

/// Largest `ρ` with `center + ρ v / rate` still strictly inside the box.
fn max_radius(bounds: &ParamBox, center: &[f64], v: &[f64], rate: f64) -> f64 {
    let mut rho = f64::INFINITY;
    for i in 0..center.len() {
        if v[i] > 0.0 {
            rho = rho.min((bounds.upper()[i] - center[i]) * rate / v[i]);
        } else if v[i] < 0.0 {
            rho = rho.min((bounds.lower()[i] - center[i]) * rate / v[i]);
        }
    }
    rho * (1.0 - 1e-9)
}

/// For each `r`, the supremum of `log Z(u)` over grid points with `|u| ≥ r`
/// (`−∞` when there are none). Every direction shares the radii
/// `r_grid ∪ {log-spaced radii}` so the sets are nested in `r`.
pub fn sup_log_field(
    ctx: &QuasiLikContext,
    contrast: &Contrast,
    center: &[f64],
    r_grid: &[f64],
    directions: &[Vec<f64>],
    radii: usize,
) -> Result<Vec<f64>> {
    let bounds = ctx.bounds(contrast).clone();
    let rate = ctx.rate(contrast);
    let mut sups = vec![f64::NEG_INFINITY; r_grid.len()];
    let r_lo = r_grid.iter().cloned().filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min);
    let r_lo = if r_lo.is_finite() { r_lo } else { 1.0 };
    let h_center = ctx.with_objective(contrast, |f| f(center))?;
    for v in directions {
        let rho_max = max_radius(&bounds, center, v, rate);
        let mut grid: Vec<f64> = r_grid.iter().cloned().filter(|r| *r <= rho_max).collect();
        if rho_max > r_lo && radii > 1 {
            let (a, b) = (r_lo.ln(), rho_max.ln());
            grid.extend((0..radii).map(|i| (a + (b - a) * i as f64 / (radii - 1) as f64).exp()));
        }
        grid.sort_by(|a, b| a.partial_cmp(b).expect("finite radii"));
        grid.dedup();
        let values: Vec<(f64, f64)> = ctx.with_objective(contrast, |f| {
            grid.iter()
                .map(|&rho| {
                    if rho == 0.0 {
                        return Ok((rho, 0.0));
                    }
                    let p: Vec<f64> = center.iter().zip(v).map(|(c, vi)| c + rho * vi / rate).collect();
                    Ok((rho, f(&p)? - h_center))
                })
                .collect()
        })?;
        for (k, &r) in r_grid.iter().enumerate() {
            for &(rho, lz) in &values {
                if rho >= r && lz > sups[k] {
                    sups[k] = lz;
                }
            }
        }
    }
    // u = 0 belongs to V(0).
    for (k, &r) in r_grid.iter().enumerate() {
        if r == 0.0 {
            sups[k] = sups[k].max(log_random_field(ctx, contrast, center, &vec![0.0; center.len()])?);
        }
    }
    Ok(sups)
}
