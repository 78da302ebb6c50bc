use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::ErgodicSettings;
use crate::error::{QlaError, Result};
use crate::estimate::{BayesConfig, EstimatorKind};
use crate::model::{DiffusionModel, InitialState, ModelRegistry, NoiseFamily, NoiseSpec, ParamBox, SamplingScheme, TrueParameters};
use crate::optimize::OptimizerConfig;
use crate::simulate::DEFAULT_SUBSTEPS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// Overrides the registered alpha box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_box: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Defaults to the registered invariant law, else the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<InitialState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Row-major `d × d` variance.
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub family: NoiseFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub n: usize,
    pub h: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantKind {
    /// Closed form when the model registers one, otherwise an ergodic path.
    #[default]
    Auto,
    ClosedForm,
    Ergodic,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvariantConfig {
    pub kind: InvariantKind,
    pub ergodic: ErgodicSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    pub enabled: bool,
    pub r_grid: Vec<f64>,
    /// Log-spaced radii per direction, up to the box boundary.
    pub radii: usize,
    pub directions_per_pair: usize,
    /// Explicit directions for `(alpha, beta)`; unit-normalised on use.
    pub alpha_directions: Option<Vec<Vec<f64>>>,
    pub beta_directions: Option<Vec<Vec<f64>>>,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            r_grid: vec![1.0, 2.0, 4.0, 8.0],
            radii: 16,
            directions_per_pair: 8,
            alpha_directions: None,
            beta_directions: None,
        }
    }
}

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Ml]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("qla-output")
}

/// Declarative description of one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub truth: TruthConfig,
    pub noise: NoiseConfig,
    pub schemes: Vec<SchemeConfig>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub bayes: BayesConfig,
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub tail: TailConfig,
    #[serde(default)]
    pub invariant: InvariantConfig,
}

/// A configuration with the model looked up and every scheme built.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub model: DiffusionModel,
    pub truth: TrueParameters,
    pub schemes: Vec<SamplingScheme>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| QlaError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QlaError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| QlaError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| QlaError::Config(e.to_string()))
    }

    /// Checks the configuration and resolves it against the built-in models.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        self.resolve_with(&ModelRegistry::with_builtins())
    }

    pub fn resolve_with(&self, registry: &ModelRegistry) -> Result<ResolvedExperiment> {
        if self.replications == 0 {
            return Err(QlaError::Config("replications must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(QlaError::Config("at least one scheme is required".into()));
        }
        if self.estimators.is_empty() {
            return Err(QlaError::Config("at least one estimator is required".into()));
        }
        if self.substeps == 0 {
            return Err(QlaError::Config("substeps must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(QlaError::Config("threads must be at least 1".into()));
        }
        self.optimizer.validate()?;
        if self.estimators.contains(&EstimatorKind::Bayes) {
            self.bayes.validate()?;
        }
        let t = &self.tail;
        if t.enabled && (t.r_grid.is_empty() || t.r_grid.windows(2).any(|w| w[0] >= w[1]) || t.r_grid[0] < 0.0) {
            return Err(QlaError::Config("tail r_grid must be increasing and nonnegative".into()));
        }
        let mut model = registry.get(&self.model.name)?;
        if self.model.alpha_box.is_some() || self.model.beta_box.is_some() {
            let a = match &self.model.alpha_box {
                Some(b) => ParamBox::from_intervals(b)?,
                None => model.alpha_box().clone(),
            };
            let b = match &self.model.beta_box {
                Some(b) => ParamBox::from_intervals(b)?,
                None => model.beta_box().clone(),
            };
            if a.dim() != model.dim_alpha() || b.dim() != model.dim_beta() {
                return Err(QlaError::Config("box dimensions differ from the model's parameter dimensions".into()));
            }
            model = model.with_boxes(a, b);
        }
        let d = model.dim_state();
        let noise = NoiseSpec::new(d, self.noise.lambda.clone(), self.noise.family)?;
        let x0 = match &self.truth.x0 {
            Some(x0) => x0.clone(),
            None => match model.invariant_law(&self.truth.alpha, &self.truth.beta) {
                Some(law) => InitialState::Gaussian { mean: law.mean, cov: law.cov },
                None => InitialState::Fixed(vec![0.0; d]),
            },
        };
        let truth = TrueParameters {
            alpha: self.truth.alpha.clone(),
            beta: self.truth.beta.clone(),
            noise,
            x0,
        };
        if truth.alpha.len() != model.dim_alpha() || truth.beta.len() != model.dim_beta() {
            return Err(QlaError::Config("true parameter dimensions differ from the model".into()));
        }
        truth.validate(&model)?;
        let schemes = self
            .schemes
            .iter()
            .map(|s| SamplingScheme::build(s.n, s.h, s.tau))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResolvedExperiment {
            config: self.clone(),
            model,
            truth,
            schemes,
        })
    }
}
