//! Euler–Maruyama simulation of the latent diffusion and noisy observation.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{QlaError, Result};
use crate::linalg;
use crate::model::{DiffusionModel, InitialState, NoiseSpec, SamplingScheme, TrueParameters};
use crate::rng::{SimSeed, StreamId};

pub const DEFAULT_SUBSTEPS: usize = 10;
pub const DEFAULT_EXPLOSION_BOUND: f64 = 1e12;

/// Latent states on the observation grid `{i h_n : i = 0..=n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    scheme: SamplingScheme,
    dim: usize,
    /// Row-major `(n+1) × d`.
    states: Vec<f64>,
}

impl LatentPath {
    pub fn from_states(scheme: SamplingScheme, dim: usize, states: Vec<f64>) -> Result<Self> {
        if states.len() != (scheme.n + 1) * dim {
            return Err(QlaError::DimensionMismatch(format!(
                "expected {} states, got {}",
                (scheme.n + 1) * dim,
                states.len()
            )));
        }
        Ok(Self { scheme, dim, states })
    }

    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }
    pub fn states(&self) -> &[f64] {
        &self.states
    }
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.scheme.h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_grid_csv(out, "x", self.dim, self.scheme.h, &self.states)
    }
}

/// Noisy samples `Y_{i h_n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    scheme: SamplingScheme,
    dim: usize,
    values: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(scheme: SamplingScheme, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != (scheme.n + 1) * dim {
            return Err(QlaError::DimensionMismatch(format!(
                "series needs {} values for n = {}, d = {dim}; got {}",
                (scheme.n + 1) * dim,
                scheme.n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QlaError::Domain("observation series contains non-finite values".into()));
        }
        Ok(Self { scheme, dim, values })
    }

    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_grid_csv(out, "y", self.dim, self.scheme.h, &self.values)
    }

    /// Reads a `t,y1..yd` CSV. `n` is taken from the row count; `h` and `τ`
    /// come from the caller.
    pub fn read_csv<R: BufRead>(input: R, h: f64, tau: f64) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| QlaError::Config("empty series file".into()))?
            .map_err(|e| QlaError::Config(e.to_string()))?;
        let dim = header.split(',').count().saturating_sub(1);
        if dim == 0 {
            return Err(QlaError::Config("series header must be t,y1..yd".into()));
        }
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| QlaError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(QlaError::Config(format!("row {} has {} fields", row + 1, fields.len())));
            }
            for f in &fields[1..] {
                values.push(f.trim().parse::<f64>().map_err(|e| {
                    QlaError::Config(format!("row {}: {e}", row + 1))
                })?);
            }
        }
        let rows = values.len() / dim;
        if rows < 2 {
            return Err(QlaError::InsufficientData { have: rows, need: 2 });
        }
        let scheme = SamplingScheme::build(rows - 1, h, tau)?;
        Self::new(scheme, dim, values)
    }
}

fn write_grid_csv<W: Write>(mut out: W, prefix: &str, dim: usize, h: f64, values: &[f64]) -> std::io::Result<()> {
    let mut header = String::from("t");
    for c in 1..=dim {
        header.push_str(&format!(",{prefix}{c}"));
    }
    writeln!(out, "{header}")?;
    for (i, row) in values.chunks(dim).enumerate() {
        write!(out, "{:.16e}", i as f64 * h)?;
        for v in row {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub substeps: usize,
    pub explosion_bound: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            substeps: DEFAULT_SUBSTEPS,
            explosion_bound: DEFAULT_EXPLOSION_BOUND,
        }
    }
}

pub fn simulate_path(
    model: &DiffusionModel,
    params: &TrueParameters,
    scheme: &SamplingScheme,
    substeps: usize,
    seed: SimSeed,
) -> Result<LatentPath> {
    simulate_path_with(
        model,
        params,
        scheme,
        SimulationOptions {
            substeps,
            ..SimulationOptions::default()
        },
        seed,
    )
}

/// Euler–Maruyama on step `h_n / substeps`, restricted to the observation grid.
pub fn simulate_path_with(
    model: &DiffusionModel,
    params: &TrueParameters,
    scheme: &SamplingScheme,
    opts: SimulationOptions,
    seed: SimSeed,
) -> Result<LatentPath> {
    if opts.substeps == 0 {
        return Err(QlaError::Domain("substeps must be at least 1".into()));
    }
    let d = model.dim_state();
    let r = model.dim_noise();
    let x0 = initial_state(&params.x0, d, seed)?;
    let mut states = Vec::with_capacity((scheme.n + 1) * d);
    states.extend_from_slice(&x0);
    let dt = scheme.h / opts.substeps as f64;
    let sqrt_dt = dt.sqrt();
    let mut rng = seed.stream(StreamId::PathIncrements);
    let mut x = x0;
    let mut b = vec![0.0; d];
    let mut a = vec![0.0; d * r];
    let mut z = vec![0.0; r];
    for i in 1..=scheme.n {
        for _ in 0..opts.substeps {
            model.drift_into(&x, &params.beta, &mut b);
            model.diffusion_into(&x, &params.alpha, &mut a);
            for zk in z.iter_mut() {
                *zk = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
            }
            for (row, xi) in x.iter_mut().enumerate() {
                let noise: f64 = (0..r).map(|k| a[row * r + k] * z[k]).sum();
                *xi += b[row] * dt + noise;
            }
        }
        let mag = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(mag <= opts.explosion_bound) {
            return Err(QlaError::PathExploded { index: i, magnitude: mag });
        }
        states.extend_from_slice(&x);
    }
    LatentPath::from_states(*scheme, d, states)
}

fn initial_state(spec: &InitialState, d: usize, seed: SimSeed) -> Result<Vec<f64>> {
    match spec {
        InitialState::Fixed(x) if x.len() == d => Ok(x.clone()),
        InitialState::Gaussian { mean, cov } if mean.len() == d && cov.len() == d * d => {
            let root = linalg::psd_sqrt(cov, d);
            let mut rng = seed.stream(StreamId::InitialState);
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            Ok((0..d)
                .map(|i| mean[i] + (0..d).map(|k| root[i * d + k] * z[k]).sum::<f64>())
                .collect())
        }
        _ => Err(QlaError::DimensionMismatch("initial state has wrong dimension".into())),
    }
}

/// `Y_i = X_i + Λ^{1/2} ε_i` with ε drawn from the noise family on its own stream.
pub fn contaminate(path: &LatentPath, noise: &NoiseSpec, seed: SimSeed) -> Result<ObservationSeries> {
    let mut rng = seed.stream(StreamId::ObservationNoise);
    let family = noise.family();
    contaminate_with(path, noise, |_, _| family.sample(&mut rng))
}

/// Contamination with caller-supplied innovations `ε_i^{(k)} = draw(i, k)`.
pub fn contaminate_with<F>(path: &LatentPath, noise: &NoiseSpec, mut draw: F) -> Result<ObservationSeries>
where
    F: FnMut(usize, usize) -> f64,
{
    let d = path.dim();
    if noise.dim() != d {
        return Err(QlaError::DimensionMismatch(format!(
            "noise dimension {} differs from path dimension {d}",
            noise.dim()
        )));
    }
    let root = linalg::psd_sqrt(noise.lambda(), d);
    let mut values = path.states().to_vec();
    let mut eps = vec![0.0; d];
    for (i, row) in values.chunks_mut(d).enumerate() {
        for (k, e) in eps.iter_mut().enumerate() {
            *e = draw(i, k);
        }
        for (l, y) in row.iter_mut().enumerate() {
            *y += (0..d).map(|k| root[l * d + k] * eps[k]).sum::<f64>();
        }
    }
    ObservationSeries::new(*path.scheme(), d, values)
}
