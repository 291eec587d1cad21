//! Likelihood-free Bayesian inference by population Monte Carlo with
//! classifier-estimated importance weights.
//!
//! The crate provides:
//!
//! - particle primitives ([`particles`]): weights, resampling, weighted
//!   moments, Gaussian and mixture densities;
//! - simulators and priors ([`models`]), including the multivariate Gaussian
//!   benchmark with an exact likelihood;
//! - L1-penalized binary and multinomial logistic regression ([`classifier`]);
//! - weight estimators ([`weighting`]): multi-class, ratio estimation, and the
//!   exact oracle;
//! - samplers ([`samplers`]): PMC with a pluggable estimator and SMC ABC;
//! - evaluation metrics and replicate studies ([`evaluation`]).

pub mod classifier;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod particles;
pub mod rng;
pub mod samplers;
pub mod weighting;

pub use error::{Error, Result};
pub use evaluation::{kl_divergence, mse, paired_t_statistic, rmse, KlDirection, MetricRow, RunRecord};
pub use models::{BoxPrior, Dataset, GaussianModel, SimulatorModel, SummaryVector};
pub use particles::{normalize_weights, ParameterVector, ParticleGeneration, WeightVector};
pub use rng::{Purpose, SeedTree};
pub use samplers::{run_pmc, run_smc_abc, PmcConfig, Problem, SamplerTrace, SmcAbcConfig};
pub use weighting::{ExactEstimator, LfireEstimator, McPmcEstimator, WeightEstimator};
