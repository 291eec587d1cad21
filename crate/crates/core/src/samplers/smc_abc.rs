use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::particles::{
    log_sum_exp, normalize_log_weights, resample_index, CholeskyFactor, KernelCovariance, ParameterVector,
    ParticleGeneration, WeightVector,
};
use crate::rng::{Purpose, SeedTree};

use super::pmc::kernel_covariance;
use super::{Aborted, Problem, RunResult, SamplerTrace};

/// Sequential Monte Carlo ABC settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SmcAbcConfig {
    pub num_particles: usize,
    /// Non-increasing tolerances, one per generation. `+inf` accepts everything.
    pub schedule: Vec<f64>,
    pub max_attempts_per_particle: u64,
    pub kernel_covariance: KernelCovariance,
    pub seed: u64,
}

impl Default for SmcAbcConfig {
    fn default() -> Self {
        Self {
            num_particles: 500,
            schedule: vec![8.0, 6.0, 5.0, 4.0, 3.5, 3.0, 2.75, 2.5, 2.25, 2.0],
            max_attempts_per_particle: 100_000,
            kernel_covariance: KernelCovariance::Plain,
            seed: 0,
        }
    }
}

impl SmcAbcConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_particles < 2 {
            problems.push("num_particles must be at least 2");
        }
        if self.schedule.is_empty() {
            problems.push("schedule must not be empty");
        }
        if self.schedule.iter().any(|e| !(*e > 0.0)) {
            problems.push("every tolerance must be > 0");
        }
        if self.schedule.windows(2).any(|w| w[1] > w[0]) {
            problems.push("schedule must be non-increasing");
        }
        if self.max_attempts_per_particle == 0 {
            problems.push("max_attempts_per_particle must be positive");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

/// Acceptance bookkeeping for one SMC ABC generation.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcGenerationStats {
    pub epsilon: f64,
    /// Discrepancy of each accepted particle.
    pub distances: Vec<f64>,
    /// Proposals made per particle, including rejections.
    pub attempts: Vec<u64>,
    /// Simulator calls made this generation.
    pub simulator_calls: u64,
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct Accepted {
    theta: ParameterVector,
    distance: f64,
    attempts: u64,
    sims: u64,
}

/// Runs SMC ABC over the configured tolerance schedule.
pub fn run_smc_abc(problem: &Problem<'_>, cfg: &SmcAbcConfig) -> RunResult {
    let mut trace = SamplerTrace::new("smc_abc", cfg.seed);
    if let Err(error) = cfg.validate() {
        return Err(Aborted { error, trace });
    }
    match abc_loop(problem, cfg, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => Err(Aborted { error, trace }),
    }
}

fn abc_loop(problem: &Problem<'_>, cfg: &SmcAbcConfig, trace: &mut SamplerTrace) -> Result<()> {
    let tree = SeedTree::new(cfg.seed);
    let n = cfg.num_particles;
    let rows = problem.observed.n_rows();
    let observed = problem.observed_summary();

    for (step, &epsilon) in cfg.schedule.iter().enumerate() {
        let t = step + 1;
        let start = Instant::now();
        let previous = trace.last();
        let kernel = previous.map(|g| CholeskyFactor::new(&g.proposal_cov)).transpose()?;

        let accepted: Vec<Accepted> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut rng = tree.stream(Purpose::AbcAttempt, t as u64, j as u64);
                let mut sims = 0;
                for attempt in 1..=cfg.max_attempts_per_particle {
                    let theta = match (previous, &kernel) {
                        (Some(prev), Some(kernel)) => {
                            let k = resample_index(&prev.weights, &mut rng)?;
                            kernel.sample(&prev.particles[k], &mut rng)
                        }
                        _ => problem.prior.sample(&mut rng),
                    };
                    if !problem.prior.contains(&theta) {
                        continue;
                    }
                    let data = problem.model.simulate(&theta, rows, &mut rng);
                    sims += 1;
                    let distance = euclidean_distance(&problem.model.summarize(&data), &observed);
                    if distance <= epsilon {
                        return Ok(Accepted {
                            theta,
                            distance,
                            attempts: attempt,
                            sims,
                        });
                    }
                }
                Err(Error::AttemptsExhausted {
                    particle: j,
                    attempts: cfg.max_attempts_per_particle,
                    epsilon,
                })
            })
            .collect::<Result<_>>()?;

        let simulator_calls: u64 = accepted.iter().map(|a| a.sims).sum();
        let particles: Vec<ParameterVector> = accepted.iter().map(|a| a.theta.clone()).collect();
        let weights = match (previous, &kernel) {
            (Some(prev), Some(kernel)) => {
                // w ∝ p(θ) / Σ_k w_k q(θ | θ_k)
                let log_w: Vec<f64> = particles
                    .par_iter()
                    .map(|theta| {
                        let terms: Vec<f64> = prev
                            .particles
                            .iter()
                            .zip(prev.weights.iter())
                            .filter(|(_, &w)| w > 0.0)
                            .map(|(p, &w)| w.ln() + kernel.logpdf(theta, p))
                            .collect();
                        problem.prior.logpdf(theta) - log_sum_exp(&terms)
                    })
                    .collect();
                normalize_log_weights(&log_w)?
            }
            _ => WeightVector::uniform(n),
        };
        let proposal_cov = kernel_covariance(
            &particles,
            &weights,
            cfg.kernel_covariance,
            previous.map(|g| &g.proposal_cov),
        )?;
        let generation = ParticleGeneration {
            iteration: t,
            particles,
            weights,
            proposal_cov,
        };
        trace.total_simulator_calls += simulator_calls;
        trace.abc_stats.push(AbcGenerationStats {
            epsilon,
            distances: accepted.iter().map(|a| a.distance).collect(),
            attempts: accepted.iter().map(|a| a.attempts).collect(),
            simulator_calls,
        });
        trace
            .records
            .push(problem.record(&generation, trace.total_simulator_calls, start.elapsed()));
        trace.generations.push(generation);
    }
    Ok(())
}
