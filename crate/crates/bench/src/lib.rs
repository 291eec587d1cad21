//! Fixtures shared by the criterion benchmarks in `benches/`.

use lfpmc_core::evaluation::Benchmark;
use lfpmc_core::models::{simulate_summaries, BoxPrior, Dataset, SimulatorModel, SummaryVector};
use lfpmc_core::weighting::EstimatorInput;
use lfpmc_core::{GaussianModel, ParameterVector, Purpose, SeedTree};

/// One weighting problem on the Gaussian benchmark: `n` particles from
/// `U(−5, 5)⁵`, `m` simulations each and `marginal` prior-predictive draws.
pub struct Fixture {
    pub model: GaussianModel,
    pub prior: BoxPrior,
    pub particle_box: BoxPrior,
    pub particles: Vec<ParameterVector>,
    pub sims: Vec<Vec<SummaryVector>>,
    pub marginal: Vec<SummaryVector>,
    pub observed: Dataset,
    pub observed_summary: SummaryVector,
}

impl Fixture {
    pub fn new(n: usize, m: usize, marginal: usize, seed: u64) -> Self {
        let bench = Benchmark::standard();
        let model = bench.model();
        let tree = SeedTree::new(seed);
        let particle_box = BoxPrior::cube(5, -5.0, 5.0).expect("valid box");
        let particles: Vec<ParameterVector> =
            (0..n).map(|i| particle_box.sample(&mut tree.stream(Purpose::ParticleSet, 0, i as u64))).collect();
        let sims = particles
            .iter()
            .enumerate()
            .map(|(i, p)| simulate_summaries(&model, p, m, 1, &mut tree.stream(Purpose::Simulate, 0, i as u64)))
            .collect();
        let marginal = (0..marginal as u64)
            .map(|j| {
                let theta = bench.prior.sample(&mut tree.stream(Purpose::MarginalPrior, 0, j));
                model.summarize(&model.simulate(&theta, 1, &mut tree.stream(Purpose::MarginalSimulate, 0, j)))
            })
            .collect();
        let observed = bench.observe(&tree);
        Self {
            observed_summary: model.summarize(&observed),
            model,
            prior: bench.prior,
            particle_box,
            particles,
            sims,
            marginal,
            observed,
        }
    }

    pub fn input(&self) -> EstimatorInput<'_> {
        EstimatorInput {
            particles: &self.particles,
            sims: &self.sims,
            marginal_sims: &self.marginal,
            observed: &self.observed,
            observed_summary: &self.observed_summary,
            prior: &self.prior,
            proposal: &self.particle_box,
        }
    }
}
