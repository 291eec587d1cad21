use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{simulate_summaries, SummaryVector};
use crate::particles::{
    adaptive_kernel_covariance, resample_index, CholeskyFactor, KernelCovariance, ParameterVector,
    ParticleGeneration, WeightVector,
};
use crate::rng::{Purpose, SeedTree};
use crate::weighting::{EstimatorInput, WeightEstimator};

use super::{stopping_criterion, Aborted, Problem, RunResult, SamplerTrace, StopReason};

/// Population Monte Carlo settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PmcConfig {
    pub num_particles: usize,
    pub max_iterations: usize,
    /// Simulated datasets per particle per iteration (`M`).
    pub sims_per_particle: usize,
    pub stop_window: usize,
    /// Stopping threshold on the variance of recent weighted means;
    /// zero disables early stopping.
    pub stop_threshold: f64,
    /// Estimator for the kernel covariance `τ²/2`.
    pub kernel_covariance: KernelCovariance,
    pub seed: u64,
}

impl Default for PmcConfig {
    fn default() -> Self {
        Self {
            num_particles: 50,
            max_iterations: 10,
            sims_per_particle: 100,
            stop_window: 10,
            stop_threshold: 0.0,
            kernel_covariance: KernelCovariance::default(),
            seed: 0,
        }
    }
}

impl PmcConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_particles < 2 {
            problems.push("num_particles must be at least 2");
        }
        if self.max_iterations < 2 {
            problems.push("max_iterations must be at least 2");
        }
        if self.sims_per_particle < 1 {
            problems.push("sims_per_particle must be at least 1");
        }
        if self.stop_window < 2 {
            problems.push("stop_window must be at least 2");
        }
        if !(self.stop_threshold >= 0.0) {
            problems.push("stop_threshold must be >= 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

/// `2 · weighted covariance`, regularized until its Cholesky factor exists.
/// Falls back to `previous` when the weights carry no spread.
pub(crate) fn kernel_covariance(
    particles: &[ParameterVector],
    w: &WeightVector,
    estimator: KernelCovariance,
    previous: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    match (adaptive_kernel_covariance(particles, w, estimator)?, previous) {
        (Some(raw), _) => Ok(CholeskyFactor::new(&raw)?.covariance()),
        (None, Some(prev)) => Ok(prev.clone()),
        (None, None) => Err(Error::DegenerateWeights(
            "all weight on one particle and no earlier kernel to keep".into(),
        )),
    }
}

/// Runs PMC. Iteration 1 draws `N` particles from the prior with uniform
/// weights. Each later iteration resamples the previous generation by
/// weight, perturbs with `N(·, τ²)` where `τ² = 2·weighted covariance`,
/// simulates `M` datasets per particle, and asks `estimator` for weights.
pub fn run_pmc(problem: &Problem<'_>, estimator: &dyn WeightEstimator, cfg: &PmcConfig) -> RunResult {
    let mut trace = SamplerTrace::new(estimator.name(), cfg.seed);
    if let Err(error) = cfg.validate() {
        return Err(Aborted { error, trace });
    }
    match pmc_loop(problem, estimator, cfg, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => Err(Aborted { error, trace }),
    }
}

fn pmc_loop(
    problem: &Problem<'_>,
    estimator: &dyn WeightEstimator,
    cfg: &PmcConfig,
    trace: &mut SamplerTrace,
) -> Result<()> {
    let tree = SeedTree::new(cfg.seed);
    let n = cfg.num_particles;
    let m = cfg.sims_per_particle;
    let rows = problem.observed.n_rows();
    let observed_summary = problem.observed_summary();

    let start = Instant::now();
    let particles: Vec<ParameterVector> = (0..n)
        .into_par_iter()
        .map(|i| problem.prior.sample(&mut tree.stream(Purpose::InitialDraw, 1, i as u64)))
        .collect();
    let weights = WeightVector::uniform(n);
    let proposal_cov = kernel_covariance(&particles, &weights, cfg.kernel_covariance, None)?;
    let first = ParticleGeneration {
        iteration: 1,
        particles,
        weights,
        proposal_cov,
    };
    trace.records.push(problem.record(&first, 0, start.elapsed()));
    trace.generations.push(first);

    for t in 2..=cfg.max_iterations {
        let start = Instant::now();
        let previous = trace.last().expect("at least one generation");
        let proposal = previous.mixture_proposal()?;
        let previous_cov = previous.proposal_cov.clone();
        let needs_sims = estimator.needs_simulations();

        let proposed: Vec<(ParameterVector, Vec<SummaryVector>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let i = i as u64;
                let t = t as u64;
                let k = resample_index(&previous.weights, &mut tree.stream(Purpose::Resample, t, i))?;
                let theta = proposal.perturb(&previous.particles[k], &mut tree.stream(Purpose::Perturb, t, i));
                let sims = if needs_sims {
                    simulate_summaries(problem.model, &theta, m, rows, &mut tree.stream(Purpose::Simulate, t, i))
                } else {
                    Vec::new()
                };
                Ok((theta, sims))
            })
            .collect::<Result<_>>()?;
        let (particles, sims): (Vec<_>, Vec<_>) = proposed.into_iter().unzip();

        let marginal_count = estimator.marginal_sims(n, m);
        let marginal_sims: Vec<SummaryVector> = (0..marginal_count)
            .into_par_iter()
            .map(|j| {
                let (t, j) = (t as u64, j as u64);
                let theta = problem.prior.sample(&mut tree.stream(Purpose::MarginalPrior, t, j));
                let data = problem
                    .model
                    .simulate(&theta, rows, &mut tree.stream(Purpose::MarginalSimulate, t, j));
                problem.model.summarize(&data)
            })
            .collect();

        let input = EstimatorInput {
            particles: &particles,
            sims: if needs_sims { &sims } else { &[] },
            marginal_sims: &marginal_sims,
            observed: &problem.observed,
            observed_summary: &observed_summary,
            prior: &problem.prior,
            proposal: &proposal,
        };
        let estimate = estimator.estimate(&input)?;
        trace.total_simulator_calls += estimate.simulator_calls_used;

        let weights = estimate.normalized()?;
        let proposal_cov = kernel_covariance(&particles, &weights, cfg.kernel_covariance, Some(&previous_cov))?;
        let generation = ParticleGeneration {
            iteration: t,
            particles,
            weights,
            proposal_cov,
        };
        trace
            .records
            .push(problem.record(&generation, trace.total_simulator_calls, start.elapsed()));
        trace.generations.push(generation);

        if cfg.stop_threshold > 0.0 && stopping_criterion(&trace.weighted_means(), cfg.stop_window, cfg.stop_threshold) {
            trace.stopped_at = StopReason::Converged(t);
            break;
        }
    }
    Ok(())
}
