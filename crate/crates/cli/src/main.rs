use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qla_core::asymptotics::{AsymptoticCovariance, VechIndexer};
use qla_core::estimate::{adaptive_bayes_with_context, adaptive_ml_with_context, EstimationReport, PriorSpec};
use qla_core::harness::{
    contrast_surface, emit_report, pldi_tail_table, replication_seed, simulate_series, theoretical_covariances,
    write_tail_csv, ExperimentConfig, ResolvedExperiment,
};
use qla_core::quasilik::{Contrast, QuasiLikContext};
use qla_core::{simulate_path, ObservationSeries, QlaError};

#[derive(Parser)]
#[command(name = "qla", version, about = "Adaptive quasi-likelihood estimation for noisy diffusion data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the number of replications.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one replication and write the latent path and observations.
    Simulate {
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[arg(long, default_value_t = 0)]
        scheme: usize,
    },
    /// Estimate from an observation CSV, or from a simulated replication.
    Estimate {
        /// CSV with header `t,y1,..`; the step and tau come from the selected scheme.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Ml)]
        method: Method,
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[arg(long, default_value_t = 0)]
        scheme: usize,
    },
    /// Theoretical information matrices and sandwich covariance.
    Asymptotics,
    /// Evaluate a contrast on a grid over its parameter box.
    Surface {
        #[arg(long, value_enum, default_value_t = Which::H1)]
        contrast: Which,
        /// Grid points per coordinate.
        #[arg(long, default_value_t = 201)]
        points: usize,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[arg(long, default_value_t = 0)]
        scheme: usize,
    },
    /// Run the Monte Carlo experiment and write report.json, errors.csv, tail.csv.
    Mc,
    /// Tail frequencies of the random fields.
    Tail {
        /// Comma-separated radii.
        #[arg(long, value_delimiter = ',')]
        r_grid: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Ml,
    Bayes,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    H1,
    H2,
}

/// Marks errors that should map to the configuration exit code.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn load(common: &Common) -> Result<ResolvedExperiment> {
    let inner = || -> Result<ResolvedExperiment> {
        let path = common.config.as_ref().ok_or_else(|| anyhow!("--config is required"))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(s) = common.seed {
            cfg.master_seed = s;
        }
        if let Some(r) = common.reps {
            cfg.replications = r;
        }
        if let Some(o) = &common.out {
            cfg.output_dir = o.clone();
        }
        if let Some(t) = common.threads {
            cfg.threads = Some(t);
        }
        Ok(cfg.resolve()?)
    };
    inner().map_err(|e| ConfigError(e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn out_dir(exp: &ResolvedExperiment) -> Result<PathBuf> {
    let dir = exp.config.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn series_for(exp: &ResolvedExperiment, input: Option<&Path>, rep: usize, scheme: usize) -> Result<ObservationSeries> {
    let s = exp
        .schemes
        .get(scheme)
        .ok_or_else(|| ConfigError(anyhow!("scheme index {scheme} out of range")))?;
    match input {
        Some(path) => {
            let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Ok(ObservationSeries::read_csv(BufReader::new(f), s.h, s.tau)
                .with_context(|| format!("reading {}", path.display()))?)
        }
        None => Ok(simulate_series(exp, rep, scheme)?),
    }
}

fn estimate(ctx: &QuasiLikContext, exp: &ResolvedExperiment, method: Method, rep: usize, scheme: usize) -> Result<EstimationReport> {
    let cfg = &exp.config;
    Ok(match method {
        Method::Ml => adaptive_ml_with_context(ctx, &cfg.optimizer)?,
        Method::Bayes => {
            let mut b = cfg.bayes.clone();
            b.seed = replication_seed(cfg.master_seed, rep, scheme);
            let prior = PriorSpec::Uniform;
            adaptive_bayes_with_context(ctx, (&prior, &prior), &b, &cfg.optimizer)?
        }
    })
}

#[derive(Serialize)]
struct AnnotatedCovariance<'a> {
    scheme_index: usize,
    tau: f64,
    /// Coordinate label for each row and column.
    labels: Vec<String>,
    /// `[start, end)` of the noise, alpha and beta blocks.
    blocks: [(&'static str, usize, usize); 3],
    #[serde(flatten)]
    matrices: &'a AsymptoticCovariance,
}

fn coordinate_labels(exp: &ResolvedExperiment) -> Vec<String> {
    let d = exp.model.dim_state();
    let vi = VechIndexer::new(d);
    let mut out: Vec<String> = (1..=vi.len())
        .map(|s| {
            let (i, j) = vi.pair(s).expect("in range");
            format!("lambda_{i}{j}")
        })
        .collect();
    out.extend((1..=exp.model.dim_alpha()).map(|i| format!("alpha_{i}")));
    out.extend((1..=exp.model.dim_beta()).map(|i| format!("beta_{i}")));
    out
}

fn run(cli: Cli) -> Result<()> {
    let exp = load(&cli.common)?;
    match cli.command {
        Command::Simulate { rep, scheme } => {
            let s = exp
                .schemes
                .get(scheme)
                .ok_or_else(|| ConfigError(anyhow!("scheme index {scheme} out of range")))?;
            let seed = replication_seed(exp.config.master_seed, rep, scheme);
            let path = simulate_path(&exp.model, &exp.truth, s, exp.config.substeps, seed)?;
            let obs = qla_core::contaminate(&path, &exp.truth.noise, seed)?;
            let dir = out_dir(&exp)?;
            let lp = dir.join("latent.csv");
            path.write_csv(fs::File::create(&lp).with_context(|| format!("creating {}", lp.display()))?)?;
            let op = dir.join("observations.csv");
            obs.write_csv(fs::File::create(&op).with_context(|| format!("creating {}", op.display()))?)?;
            println!("wrote {} and {}", lp.display(), op.display());
        }
        Command::Estimate { input, method, rep, scheme } => {
            let series = series_for(&exp, input.as_deref(), rep, scheme)?;
            let ctx = QuasiLikContext::from_series(&series, &exp.model)?;
            let report = estimate(&ctx, &exp, method, rep, scheme)?;
            let path = out_dir(&exp)?.join("estimate.json");
            write_json(&path, &report)?;
            println!("{}", report.csv_header());
            println!("{}", report.to_csv_row());
            for w in &report.diagnostics.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Asymptotics => {
            let covs = theoretical_covariances(&exp)?;
            let labels = coordinate_labels(&exp);
            let annotated: Vec<AnnotatedCovariance> = covs
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let [a, b, c0] = c.block_offsets();
                    AnnotatedCovariance {
                        scheme_index: i,
                        tau: c.tau,
                        labels: labels.clone(),
                        blocks: [("noise", a, b), ("alpha", b, c0), ("beta", c0, c.size())],
                        matrices: c,
                    }
                })
                .collect();
            let path = out_dir(&exp)?.join("asymptotics.json");
            write_json(&path, &annotated)?;
            for (i, c) in covs.iter().enumerate() {
                let diag: Vec<String> = labels
                    .iter()
                    .zip(c.sandwich_diagonal())
                    .map(|(l, v)| format!("{l}={v:.6}"))
                    .collect();
                println!("scheme {i} (tau={}): sandwich diagonal {}", c.tau, diag.join(" "));
            }
        }
        Command::Surface { contrast, points, input, rep, scheme } => {
            if points < 2 {
                return Err(ConfigError(anyhow!("--points must be at least 2")).into());
            }
            let series = series_for(&exp, input.as_deref(), rep, scheme)?;
            let ctx = QuasiLikContext::from_series(&series, &exp.model)?;
            let which = match contrast {
                Which::H1 => Contrast::Diffusion,
                Which::H2 => {
                    let ml = adaptive_ml_with_context(&ctx, &exp.config.optimizer)?;
                    Contrast::Drift { alpha: ml.alpha }
                }
            };
            let bounds = ctx.bounds(&which).clone();
            let axes: Vec<Vec<f64>> = (0..bounds.dim())
                .map(|i| {
                    (0..points)
                        .map(|j| bounds.lower()[i] + bounds.width(i) * j as f64 / (points - 1) as f64)
                        .collect()
                })
                .collect();
            let grid = contrast_surface(&ctx, &which, &axes)?;
            let name = match contrast {
                Which::H1 => "surface_h1.csv",
                Which::H2 => "surface_h2.csv",
            };
            let path = out_dir(&exp)?.join(name);
            let mut text = String::new();
            let cols: Vec<String> = (1..=bounds.dim()).map(|i| format!("theta_{i}")).collect();
            text.push_str(&format!("{},value\n", cols.join(",")));
            for (p, v) in grid {
                let coords: Vec<String> = p.iter().map(|x| format!("{x:e}")).collect();
                text.push_str(&format!("{},{v:e}\n", coords.join(",")));
            }
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        Command::Mc => {
            let report = qla_core::harness::run_monte_carlo(&exp.config)?;
            let files = emit_report(&report, &exp.config.output_dir)?;
            for g in &report.groups {
                println!(
                    "scheme {} {}: {} replications, mean {:?}",
                    g.scheme_index, g.method, g.count, g.mean
                );
                if let Some(rel) = &g.variance_relative_errors {
                    println!("  variance relative error vs sandwich: {rel:?}");
                }
            }
            println!("failures: {} of {}", report.failure_count, report.attempted);
            if let Some(rt) = &report.runtime {
                eprintln!("wall time {:.2}s on {} threads", rt.wall_seconds, rt.threads);
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Tail { r_grid } => {
            let grid = r_grid.unwrap_or_else(|| exp.config.tail.r_grid.clone());
            if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] < 0.0 {
                return Err(ConfigError(anyhow!("--r-grid must be increasing and nonnegative")).into());
            }
            let table = pldi_tail_table(&exp.config, &grid, None, None)?;
            let dir = out_dir(&exp)?;
            let path = dir.join("tail.csv");
            let mut buf = Vec::new();
            write_tail_csv(&mut buf, &table)?;
            fs::write(&path, &buf).with_context(|| format!("writing {}", path.display()))?;
            write_json(&dir.join("tail.json"), &table)?;
            print!("{}", String::from_utf8(buf)?);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<QlaError>() {
        Some(QlaError::AllReplicationsFailed) => 3,
        Some(QlaError::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
