//! Importance-weight estimators plugged into PMC.
//!
//! All three estimators produce the same quantity, an unnormalized weight
//! `p(θ_i | X₀) / q(θ_i)` up to a constant shared by every particle:
//!
//! - [`McPmcEstimator`] trains one multinomial classifier whose classes are
//!   the particles and reads `p(M_i | X₀)` off it;
//! - [`LfireEstimator`] trains one binary classifier per particle against
//!   prior-predictive simulations and estimates the likelihood ratio
//!   `p(X₀ | θ_i) / p(X₀)`;
//! - [`ExactEstimator`] uses the analytic likelihood and exists for
//!   evaluation only.
//!
//! Weights are carried in log space and exponentiated after subtracting the
//! largest finite log-weight, so only particles outside the prior support
//! end up with an exact zero.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::classifier::{fit_binary, fit_multinomial, ClassifierModel, FitOptions, LabeledFeatures};
use crate::error::{Error, Result};
use crate::models::{BoxPrior, Dataset, GaussianModel, LogDensity, SummaryVector};
use crate::particles::{normalize_log_weights, ParameterVector, WeightVector};

/// Default cap on the number of LFIRE marginal simulations.
pub const MARGINAL_SIMS_CAP: usize = 5000;

/// Per-particle breakdown of a log-weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTerms {
    /// `log p(M_i | X₀) − log p(M_i)` for MC PMC, `log r(X₀, θ_i)` for LFIRE,
    /// `log p(X₀ | θ_i)` for the oracle. NaN when not evaluated.
    pub data_term: f64,
    pub log_prior: f64,
    pub log_proposal: f64,
}

impl LogTerms {
    pub fn log_weight(&self) -> f64 {
        if self.log_prior == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.data_term + self.log_prior - self.log_proposal
        }
    }
}

/// Unnormalized particle weights and how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEstimate {
    /// `exp(log_w_i − max_j log_w_j)`; zero exactly for out-of-support particles.
    pub unnormalized: Vec<f64>,
    pub log_terms: Vec<LogTerms>,
    /// Simulator calls consumed to produce the inputs of this estimate.
    pub simulator_calls_used: u64,
    /// Wall time spent fitting classifiers, summed over fits.
    pub fit_time: Duration,
    /// Classifier fits that stopped at `max_iterations`.
    pub unconverged_fits: usize,
}

impl WeightEstimate {
    fn from_terms(log_terms: Vec<LogTerms>, simulator_calls_used: u64, fit_time: Duration, unconverged_fits: usize) -> Result<Self> {
        let log_w: Vec<f64> = log_terms.iter().map(LogTerms::log_weight).collect();
        if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidInput("log-weight is NaN or +inf".into()));
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights(format!(
                "all {} particles lie outside the prior support",
                log_w.len()
            )));
        }
        Ok(Self {
            unnormalized: log_w.iter().map(|v| (v - max).exp()).collect(),
            log_terms,
            simulator_calls_used,
            fit_time,
            unconverged_fits,
        })
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.log_terms.iter().map(LogTerms::log_weight).collect()
    }

    pub fn normalized(&self) -> Result<WeightVector> {
        normalize_log_weights(&self.log_weights())
    }
}

/// Everything an estimator may look at for one PMC iteration.
pub struct EstimatorInput<'a> {
    pub particles: &'a [ParameterVector],
    /// Summaries of the `M` simulated datasets of each particle.
    pub sims: &'a [Vec<SummaryVector>],
    /// Summaries of prior-predictive simulations (LFIRE only).
    pub marginal_sims: &'a [SummaryVector],
    pub observed: &'a Dataset,
    pub observed_summary: &'a SummaryVector,
    pub prior: &'a BoxPrior,
    /// The density the particles were drawn from.
    pub proposal: &'a dyn LogDensity,
}

impl EstimatorInput<'_> {
    fn particle_simulator_calls(&self) -> u64 {
        self.sims.iter().map(Vec::len).sum::<usize>() as u64
    }

    fn check(&self) -> Result<()> {
        if !self.sims.is_empty() && self.sims.len() != self.particles.len() {
            return Err(Error::LengthMismatch {
                expected: self.particles.len(),
                actual: self.sims.len(),
            });
        }
        Ok(())
    }
}

/// A pluggable weight estimator.
pub trait WeightEstimator: Sync {
    fn name(&self) -> &str;

    /// Whether the estimator consumes per-particle simulations.
    fn needs_simulations(&self) -> bool {
        true
    }

    /// Prior-predictive simulations required for `n` particles with `m`
    /// simulations each.
    fn marginal_sims(&self, _n: usize, _m: usize) -> usize {
        0
    }

    fn estimate(&self, input: &EstimatorInput<'_>) -> Result<WeightEstimate>;
}

/// Multi-class PMC weights (one multinomial classifier, one class per particle).
#[derive(Debug, Clone, Default)]
pub struct McPmcEstimator {
    pub fit: FitOptions,
}

impl WeightEstimator for McPmcEstimator {
    fn name(&self) -> &str {
        "mcpmc"
    }

    fn estimate(&self, input: &EstimatorInput<'_>) -> Result<WeightEstimate> {
        mcpmc_weights(input, &self.fit)
    }
}

/// Likelihood-free ratio estimation weights (one binary classifier per
/// particle against the prior predictive).
#[derive(Debug, Clone, Default)]
pub struct LfireEstimator {
    pub fit: FitOptions,
    /// Fixed marginal sample size; `None` uses `min(N·M/2, 5000)`.
    pub marginal_sims: Option<usize>,
}

impl WeightEstimator for LfireEstimator {
    fn name(&self) -> &str {
        "lfire"
    }

    fn marginal_sims(&self, n: usize, m: usize) -> usize {
        self.marginal_sims
            .unwrap_or_else(|| (n * m / 2).clamp(1, MARGINAL_SIMS_CAP))
    }

    fn estimate(&self, input: &EstimatorInput<'_>) -> Result<WeightEstimate> {
        lfire_weights(input, &self.fit)
    }
}

/// Weights from the analytic Gaussian likelihood.
#[derive(Debug, Clone)]
pub struct ExactEstimator {
    pub model: GaussianModel,
}

impl WeightEstimator for ExactEstimator {
    fn name(&self) -> &str {
        "exact"
    }

    fn needs_simulations(&self) -> bool {
        false
    }

    fn estimate(&self, input: &EstimatorInput<'_>) -> Result<WeightEstimate> {
        exact_weights(&self.model, input.particles, input.observed, input.prior, input.proposal)
    }
}

/// Builds the multinomial training set: class `i` holds particle `i`'s summaries.
pub fn multiclass_training_set(sims: &[Vec<SummaryVector>]) -> Result<LabeledFeatures> {
    let rows: Vec<&[f64]> = sims.iter().flat_map(|s| s.iter().map(|v| v.as_slice())).collect();
    let labels: Vec<usize> = sims
        .iter()
        .enumerate()
        .flat_map(|(i, s)| std::iter::repeat_n(i, s.len()))
        .collect();
    LabeledFeatures::new(&rows, labels, sims.len())
}

/// Multi-class weights given an already trained classifier:
/// `log w_i = log p(M_i|X₀) − log p(M_i) + log p(θ_i) − log q(θ_i)`.
pub fn mcpmc_log_terms(
    model: &ClassifierModel,
    particles: &[ParameterVector],
    observed_summary: &[f64],
    prior: &BoxPrior,
    proposal: &dyn LogDensity,
) -> Vec<LogTerms> {
    let log_probs = model.predict_log_proba(observed_summary);
    particles
        .iter()
        .enumerate()
        .map(|(i, theta)| {
            let log_prior = prior.logpdf(theta);
            if log_prior == f64::NEG_INFINITY {
                return LogTerms {
                    data_term: f64::NAN,
                    log_prior,
                    log_proposal: f64::NAN,
                };
            }
            LogTerms {
                data_term: log_probs[i] - model.log_class_prior(i),
                log_prior,
                log_proposal: proposal.log_density(theta),
            }
        })
        .collect()
}

/// Multi-class PMC weights.
pub fn mcpmc_weights(input: &EstimatorInput<'_>, opts: &FitOptions) -> Result<WeightEstimate> {
    input.check()?;
    if input.particles.len() < 2 {
        return Err(Error::InvalidInput("multi-class weights need at least two particles".into()));
    }
    let data = multiclass_training_set(input.sims)?;
    let start = Instant::now();
    let model = fit_multinomial(&data, opts)?;
    let fit_time = start.elapsed();
    let terms = mcpmc_log_terms(&model, input.particles, input.observed_summary, input.prior, input.proposal);
    WeightEstimate::from_terms(terms, input.particle_simulator_calls(), fit_time, usize::from(!model.converged()))
}

/// `log r = log[p(M¹|x)/p(M⁰|x)] + log[(1−π)/π]`, with `π` the class-1
/// training fraction.
pub fn ratio_from_classifier(log_p1: f64, log_p0: f64, class1_fraction: f64) -> f64 {
    log_p1 - log_p0 + ((1.0 - class1_fraction) / class1_fraction).ln()
}

/// Fits the LFIRE classifier for one particle and returns `log r(X₀, θ)`.
pub fn lfire_log_ratio(
    particle_sims: &[SummaryVector],
    marginal_sims: &[SummaryVector],
    observed_summary: &[f64],
    opts: &FitOptions,
) -> Result<(f64, ClassifierModel)> {
    let rows: Vec<&[f64]> = marginal_sims
        .iter()
        .chain(particle_sims)
        .map(|s| s.as_slice())
        .collect();
    let labels: Vec<usize> = std::iter::repeat_n(0, marginal_sims.len())
        .chain(std::iter::repeat_n(1, particle_sims.len()))
        .collect();
    let data = LabeledFeatures::new(&rows, labels, 2)?;
    let model = fit_binary(&data, opts)?;
    let lp = model.predict_log_proba(observed_summary);
    let pi = particle_sims.len() as f64 / rows.len() as f64;
    Ok((ratio_from_classifier(lp[1], lp[0], pi), model))
}

/// LFIRE weights: `log w_i = log r(X₀, θ_i) + log p(θ_i) − log q(θ_i)`.
pub fn lfire_weights(input: &EstimatorInput<'_>, opts: &FitOptions) -> Result<WeightEstimate> {
    input.check()?;
    if input.marginal_sims.is_empty() {
        return Err(Error::InvalidInput("LFIRE needs marginal simulations".into()));
    }
    let results: Vec<Result<(LogTerms, Duration, bool)>> = input
        .particles
        .par_iter()
        .zip(input.sims.par_iter())
        .map(|(theta, sims)| {
            let log_prior = input.prior.logpdf(theta);
            if log_prior == f64::NEG_INFINITY {
                let terms = LogTerms {
                    data_term: f64::NAN,
                    log_prior,
                    log_proposal: f64::NAN,
                };
                return Ok((terms, Duration::ZERO, true));
            }
            let start = Instant::now();
            let (log_r, model) = lfire_log_ratio(sims, input.marginal_sims, input.observed_summary, opts)?;
            let elapsed = start.elapsed();
            let terms = LogTerms {
                data_term: log_r,
                log_prior,
                log_proposal: input.proposal.log_density(theta),
            };
            Ok((terms, elapsed, model.converged()))
        })
        .collect();
    let mut terms = Vec::with_capacity(results.len());
    let mut fit_time = Duration::ZERO;
    let mut unconverged = 0;
    for r in results {
        let (t, d, converged) = r?;
        terms.push(t);
        fit_time += d;
        unconverged += usize::from(!converged);
    }
    let calls = input.particle_simulator_calls() + input.marginal_sims.len() as u64;
    WeightEstimate::from_terms(terms, calls, fit_time, unconverged)
}

/// Oracle weights `p(X₀|θ_i) p(θ_i) / q(θ_i)` from the analytic likelihood.
pub fn exact_weights(
    model: &GaussianModel,
    particles: &[ParameterVector],
    observed: &Dataset,
    prior: &BoxPrior,
    proposal: &dyn LogDensity,
) -> Result<WeightEstimate> {
    let terms = particles
        .iter()
        .map(|theta| {
            let log_prior = prior.logpdf(theta);
            if log_prior == f64::NEG_INFINITY {
                return LogTerms {
                    data_term: f64::NAN,
                    log_prior,
                    log_proposal: f64::NAN,
                };
            }
            LogTerms {
                data_term: model.exact_log_likelihood(theta, observed),
                log_prior,
                log_proposal: proposal.log_density(theta),
            }
        })
        .collect();
    WeightEstimate::from_terms(terms, 0, Duration::ZERO, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate_summaries, SimulatorModel};
    use crate::particles::normalize_weights;
    use crate::rng::{Purpose, SeedTree};
    use approx::assert_abs_diff_eq;

    fn setup(n: usize, m: usize, seed: u64) -> (Vec<ParameterVector>, Vec<Vec<SummaryVector>>, Dataset, BoxPrior) {
        let tree = SeedTree::new(seed);
        let model = GaussianModel::benchmark();
        let prior = BoxPrior::cube(5, -20.0, 20.0).unwrap();
        let box5 = BoxPrior::cube(5, -5.0, 5.0).unwrap();
        let particles: Vec<_> = (0..n).map(|i| box5.sample(&mut tree.stream(Purpose::ParticleSet, 0, i as u64))).collect();
        let sims = particles
            .iter()
            .enumerate()
            .map(|(i, p)| simulate_summaries(&model, p, m, 1, &mut tree.stream(Purpose::Simulate, 0, i as u64)))
            .collect();
        let observed = model.simulate(&ParameterVector::from([1.0, 2.0, 3.0, 4.0, 5.0]), 1, &mut tree.stream(Purpose::Observation, 0, 0));
        (particles, sims, observed, prior)
    }

    #[test]
    fn mcpmc_first_iteration_is_class_probability() {
        let (particles, sims, observed, prior) = setup(6, 40, 1);
        let obs = GaussianModel::benchmark().summarize(&observed);
        let input = EstimatorInput {
            particles: &particles,
            sims: &sims,
            marginal_sims: &[],
            observed: &observed,
            observed_summary: &obs,
            prior: &prior,
            proposal: &prior,
        };
        let est = mcpmc_weights(&input, &FitOptions::default()).unwrap();
        assert_eq!(est.simulator_calls_used, 240);
        let model = fit_multinomial(&multiclass_training_set(&sims).unwrap(), &FitOptions::default()).unwrap();
        let probs = normalize_weights(&model.predict_proba(&obs)).unwrap();
        for (a, b) in est.normalized().unwrap().iter().zip(probs.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn out_of_support_particles_get_zero() {
        let (mut particles, sims, observed, prior) = setup(4, 20, 2);
        particles[1] = ParameterVector::from([30.0, 0.0, 0.0, 0.0, 0.0]);
        let obs = GaussianModel::benchmark().summarize(&observed);
        let marginal: Vec<SummaryVector> = sims.iter().flatten().cloned().collect();
        let input = EstimatorInput {
            particles: &particles,
            sims: &sims,
            marginal_sims: &marginal,
            observed: &observed,
            observed_summary: &obs,
            prior: &prior,
            proposal: &prior,
        };
        for est in [
            mcpmc_weights(&input, &FitOptions::default()).unwrap(),
            lfire_weights(&input, &FitOptions::default()).unwrap(),
            exact_weights(&GaussianModel::benchmark(), &particles, &observed, &prior, &prior).unwrap(),
        ] {
            assert_eq!(est.unnormalized[1], 0.0);
            assert!(est.unnormalized.iter().enumerate().all(|(i, &w)| i == 1 || w > 0.0));
        }
    }

    #[test]
    fn all_outside_support_is_degenerate() {
        let prior = BoxPrior::cube(1, -1.0, 1.0).unwrap();
        let particles = vec![ParameterVector::from([5.0]), ParameterVector::from([-5.0])];
        let observed = Dataset::from_rows(&[vec![0.0]]).unwrap();
        assert!(matches!(
            exact_weights(&GaussianModel::new(1), &particles, &observed, &prior, &prior),
            Err(Error::DegenerateWeights(_))
        ));
    }

    #[test]
    fn ratio_arithmetic() {
        let half = 0.5f64.ln();
        assert_abs_diff_eq!(ratio_from_classifier(half, half, 0.5).exp(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ratio_from_classifier(half, half, 1.0 / 3.0).exp(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_weights_one_dimensional() {
        let prior = BoxPrior::cube(1, -20.0, 20.0).unwrap();
        let particles = vec![ParameterVector::from([0.0]), ParameterVector::from([1.0])];
        let observed = Dataset::from_rows(&[vec![0.0]]).unwrap();
        let est = exact_weights(&GaussianModel::new(1), &particles, &observed, &prior, &prior).unwrap();
        let w = est.normalized().unwrap();
        assert_abs_diff_eq!(w[0], 0.6225, epsilon = 1e-4);
        assert_abs_diff_eq!(w[1], 0.3775, epsilon = 1e-4);
        assert_eq!(est.simulator_calls_used, 0);
    }

    #[test]
    fn exact_weights_symmetry() {
        let prior = BoxPrior::cube(5, -20.0, 20.0).unwrap();
        let observed = Dataset::from_rows(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        let particles = vec![
            ParameterVector::from([2.0, 2.0, 3.0, 4.0, 5.0]),
            ParameterVector::from([1.0, 2.0, 3.0, 3.0, 5.0]),
        ];
        let w = exact_weights(&GaussianModel::benchmark(), &particles, &observed, &prior, &prior)
            .unwrap()
            .normalized()
            .unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn class_prior_cancels_under_count_rescaling() {
        let (particles, sims, observed, prior) = setup(5, 30, 3);
        let obs = GaussianModel::benchmark().summarize(&observed);
        let model = fit_multinomial(&multiclass_training_set(&sims).unwrap(), &FitOptions::default()).unwrap();
        let base = mcpmc_log_terms(&model, &particles, &obs, &prior, &prior);
        for k in [2usize, 7, 1000] {
            let scaled = ClassifierModel::from_coefficients(
                model.num_classes(),
                model.input_dim(),
                model.feature_map(),
                model.coefficients().to_vec(),
                model.class_counts().iter().map(|c| c * k).collect(),
            )
            .unwrap();
            let terms = mcpmc_log_terms(&scaled, &particles, &obs, &prior, &prior);
            let a = normalize_log_weights(&base.iter().map(LogTerms::log_weight).collect::<Vec<_>>()).unwrap();
            let b = normalize_log_weights(&terms.iter().map(LogTerms::log_weight).collect::<Vec<_>>()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lfire_accounting_and_defaults() {
        let est = LfireEstimator::default();
        assert_eq!(est.marginal_sims(50, 100), 2500);
        assert_eq!(est.marginal_sims(200, 100), MARGINAL_SIMS_CAP);
        let fixed = LfireEstimator {
            marginal_sims: Some(77),
            ..LfireEstimator::default()
        };
        assert_eq!(fixed.marginal_sims(50, 100), 77);

        let (particles, sims, observed, prior) = setup(3, 25, 4);
        let obs = GaussianModel::benchmark().summarize(&observed);
        let marginal: Vec<SummaryVector> = sims.iter().flatten().take(40).cloned().collect();
        let input = EstimatorInput {
            particles: &particles,
            sims: &sims,
            marginal_sims: &marginal,
            observed: &observed,
            observed_summary: &obs,
            prior: &prior,
            proposal: &prior,
        };
        assert_eq!(lfire_weights(&input, &FitOptions::default()).unwrap().simulator_calls_used, 3 * 25 + 40);
    }
}
