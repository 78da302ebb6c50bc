//! Adaptive quasi-likelihood estimation for ergodic diffusions observed at
//! high frequency with additive noise.
//!
//! The pipeline: simulate or load a noisy series, take block local means,
//! estimate `Λ` from raw increments, then maximise (or integrate) the
//! diffusion contrast for `α` and the drift contrast for `β`. The
//! [`asymptotics`] module computes the limiting sandwich covariance and
//! [`harness`] checks it by Monte Carlo.

pub mod asymptotics;
pub mod error;
pub mod estimate;
pub mod fd;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod preaverage;
pub mod quadrature;
pub mod quasilik;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{QlaError, Result};
pub use model::{
    builtin_ou_model, validate_assumptions, DiffusionModel, InitialState, ModelRegistry, NoiseFamily, NoiseSpec,
    ParamBox, SamplingScheme, TrueParameters, ValidationReport,
};
pub use preaverage::{block_increments, local_means, zeta_moment_constants, LocalMeanSeries, ZetaMoments};
pub use quasilik::{noise_variance_estimate, Contrast, QuasiLikContext};
pub use rng::SimSeed;
pub use simulate::{contaminate, simulate_path, LatentPath, ObservationSeries};
