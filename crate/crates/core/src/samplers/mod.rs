//! Sampling drivers: population Monte Carlo with a pluggable weight
//! estimator, and sequential Monte Carlo ABC.

mod pmc;
mod smc_abc;

use std::io::Write;
use std::time::Duration;

pub use pmc::{run_pmc, PmcConfig};
pub use smc_abc::{euclidean_distance, run_smc_abc, AbcGenerationStats, SmcAbcConfig};

use crate::error::{Error, Result};
use crate::evaluation::{mse, RunRecord};
use crate::models::{BoxPrior, Dataset, SimulatorModel, SummaryVector};
use crate::particles::{ParameterVector, ParticleGeneration};

/// An inference problem: simulator, prior, observation and, when known,
/// the parameter that generated the observation.
pub struct Problem<'a> {
    pub model: &'a dyn SimulatorModel,
    pub prior: BoxPrior,
    pub observed: Dataset,
    pub truth: Option<ParameterVector>,
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a dyn SimulatorModel, prior: BoxPrior, observed: Dataset) -> Result<Self> {
        if prior.dim() != model.dim_theta() {
            return Err(Error::LengthMismatch {
                expected: model.dim_theta(),
                actual: prior.dim(),
            });
        }
        Ok(Self {
            model,
            prior,
            observed,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: ParameterVector) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn observed_summary(&self) -> SummaryVector {
        self.model.summarize(&self.observed)
    }

    /// Per-iteration metrics for one generation.
    pub(crate) fn record(&self, generation: &ParticleGeneration, cumulative_sim_calls: u64, wall: Duration) -> RunRecord {
        let mean = generation.weighted_mean();
        let obs = self.observed_summary();
        let mse_vs_observation = (obs.len() == mean.dim()).then(|| mse(&mean, &obs).expect("lengths checked"));
        let rmse_vs_truth = self
            .truth
            .as_ref()
            .filter(|t| t.dim() == mean.dim())
            .map(|t| mse(&mean, t).expect("lengths checked").sqrt());
        RunRecord {
            iteration: generation.iteration,
            weighted_mean: mean,
            mse_vs_observation,
            rmse_vs_truth,
            ess: generation.ess(),
            cumulative_sim_calls,
            wall_ms: wall.as_millis() as u64,
        }
    }
}

/// Where a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The stopping rule fired after this iteration.
    Converged(usize),
    MaxIterations,
}

/// Everything a sampler produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerTrace {
    pub method: String,
    pub seed: u64,
    pub generations: Vec<ParticleGeneration>,
    pub records: Vec<RunRecord>,
    pub stopped_at: StopReason,
    pub total_simulator_calls: u64,
    /// SMC ABC only: accepted distances and attempt counts per generation.
    pub abc_stats: Vec<AbcGenerationStats>,
}

impl SamplerTrace {
    pub(crate) fn new(method: &str, seed: u64) -> Self {
        Self {
            method: method.to_string(),
            seed,
            generations: Vec::new(),
            records: Vec::new(),
            stopped_at: StopReason::MaxIterations,
            total_simulator_calls: 0,
            abc_stats: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&ParticleGeneration> {
        self.generations.last()
    }

    pub fn weighted_means(&self) -> Vec<ParameterVector> {
        self.records.iter().map(|r| r.weighted_mean.clone()).collect()
    }

    /// Average of the last `window` weighted means (fewer if the run is shorter).
    pub fn pooled_recent_mean(&self, window: usize) -> Option<ParameterVector> {
        let means = self.weighted_means();
        let take = window.min(means.len());
        if take == 0 {
            return None;
        }
        let tail = &means[means.len() - take..];
        let dim = tail[0].dim();
        let mut acc = vec![0.0; dim];
        for m in tail {
            for (a, v) in acc.iter_mut().zip(m.iter()) {
                *a += v;
            }
        }
        Some(ParameterVector::new(acc.into_iter().map(|a| a / take as f64).collect()))
    }

    /// Writes `iteration,particle,theta_1..theta_d,weight`.
    pub fn write_generations_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.generations.first().and_then(|g| g.particles.first()).map_or(0, |p| p.dim());
        let mut header = vec!["iteration".to_string(), "particle".to_string()];
        header.extend((1..=dim).map(|j| format!("theta_{j}")));
        header.push("weight".into());
        writeln!(out, "{}", header.join(","))?;
        for g in &self.generations {
            for (i, (p, w)) in g.particles.iter().zip(g.weights.iter()).enumerate() {
                let mut fields = vec![g.iteration.to_string(), i.to_string()];
                fields.extend(p.iter().map(|v| format!("{v:?}")));
                fields.push(format!("{w:?}"));
                writeln!(out, "{}", fields.join(","))?;
            }
        }
        Ok(())
    }

    /// Writes one row per iteration. The wall-clock column is optional so
    /// that deterministic artifacts can leave it out.
    pub fn write_records_csv<W: Write>(&self, mut out: W, include_wall_time: bool) -> Result<()> {
        let dim = self.records.first().map_or(0, |r| r.weighted_mean.dim());
        let mut header = vec!["iteration".to_string()];
        header.extend((1..=dim).map(|j| format!("mean_{j}")));
        header.extend(["mse_vs_observation", "rmse_vs_truth", "ess", "cumulative_sim_calls"].map(String::from));
        if include_wall_time {
            header.push("wall_ms".into());
        }
        writeln!(out, "{}", header.join(","))?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.records {
            let mut fields = vec![r.iteration.to_string()];
            fields.extend(r.weighted_mean.iter().map(|v| format!("{v:?}")));
            fields.push(opt(r.mse_vs_observation));
            fields.push(opt(r.rmse_vs_truth));
            fields.push(format!("{:?}", r.ess));
            fields.push(r.cumulative_sim_calls.to_string());
            if include_wall_time {
                fields.push(r.wall_ms.to_string());
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// A run that hit an error, with everything produced before the failure.
#[derive(Debug, Clone)]
pub struct Aborted {
    pub error: Error,
    pub trace: SamplerTrace,
}

impl From<Aborted> for Error {
    fn from(a: Aborted) -> Self {
        a.error
    }
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} completed iterations)",
            self.error,
            self.trace.generations.len()
        )
    }
}

pub type RunResult = std::result::Result<SamplerTrace, Aborted>;

/// True once the mean over dimensions of the per-dimension sample variance
/// (n − 1 normalization) of the last `window` weighted means drops below
/// `threshold`. False while fewer than `window` means exist.
pub fn stopping_criterion(recent_means: &[ParameterVector], window: usize, threshold: f64) -> bool {
    if window < 2 || recent_means.len() < window {
        return false;
    }
    let tail = &recent_means[recent_means.len() - window..];
    let dim = tail[0].dim();
    let n = window as f64;
    let mut total_var = 0.0;
    for j in 0..dim {
        let mean = tail.iter().map(|m| m[j]).sum::<f64>() / n;
        total_var += tail.iter().map(|m| (m[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    }
    total_var / (dim as f64) < threshold
}

/// Pooled self-normalized estimate of `E[h(θ)]` over generations with
/// iteration ≥ `from_iteration`: the average over those generations of
/// `Σ_i w_i h(θ_i)`.
pub fn posterior_expectation<F: Fn(&ParameterVector) -> f64>(
    trace: &SamplerTrace,
    h: F,
    from_iteration: usize,
) -> Result<f64> {
    let pooled: Vec<&ParticleGeneration> = trace
        .generations
        .iter()
        .filter(|g| g.iteration >= from_iteration)
        .collect();
    if pooled.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no generations at or after iteration {from_iteration}"
        )));
    }
    let total: f64 = pooled
        .iter()
        .map(|g| g.particles.iter().zip(g.weights.iter()).map(|(p, w)| w * h(p)).sum::<f64>())
        .sum();
    Ok(total / pooled.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn means(values: &[f64]) -> Vec<ParameterVector> {
        values.iter().map(|&v| ParameterVector::from([v])).collect()
    }

    #[test]
    fn stopping_examples() {
        assert!(stopping_criterion(&vec![ParameterVector::from([1.0, 2.0]); 10], 10, 1e-300));
        assert!(!stopping_criterion(&means(&[1.0; 9]), 10, 1.0));
        let alternating = means(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(stopping_criterion(&alternating, 10, 0.2778));
        assert!(!stopping_criterion(&alternating, 10, 0.2777));
        assert!(!stopping_criterion(&alternating, 10, 5.0 / 18.0));
    }

    #[test]
    fn stopping_uses_only_the_window() {
        let mut values = vec![100.0, -100.0];
        values.extend([3.0; 4]);
        assert!(stopping_criterion(&means(&values), 4, 1e-12));
        assert!(!stopping_criterion(&means(&values), 5, 1.0));
    }

    #[test]
    fn stopping_averages_dimensions() {
        // Dimension 1 has sample variance 0.5, dimension 2 has 0.
        let m = vec![ParameterVector::from([0.0, 1.0]), ParameterVector::from([1.0, 1.0])];
        assert!(stopping_criterion(&m, 2, 0.2501));
        assert!(!stopping_criterion(&m, 2, 0.25));
    }

    #[test]
    fn pooled_recent_mean_averages_tail() {
        let mut trace = SamplerTrace::new("x", 0);
        for (i, v) in [10.0, 1.0, 2.0, 3.0].iter().enumerate() {
            trace.records.push(RunRecord {
                iteration: i + 1,
                weighted_mean: ParameterVector::from([*v]),
                mse_vs_observation: None,
                rmse_vs_truth: None,
                ess: 1.0,
                cumulative_sim_calls: 0,
                wall_ms: 0,
            });
        }
        assert_abs_diff_eq!(trace.pooled_recent_mean(3).unwrap()[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(trace.pooled_recent_mean(10).unwrap()[0], 4.0, epsilon = 1e-15);
        assert!(SamplerTrace::new("x", 0).pooled_recent_mean(3).is_none());
    }
}
