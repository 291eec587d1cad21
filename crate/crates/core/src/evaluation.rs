//! Metrics and replicate studies: KL divergence between weight vectors,
//! MSE/RMSE of weighted means, the paired t statistic, and deterministic
//! multi-replicate orchestration.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Duration;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{simulate_summaries, BoxPrior, CountingSimulator, GaussianModel, SimulatorModel, SummaryVector};
use crate::particles::{ParameterVector, WeightVector};
use crate::rng::{Purpose, SeedTree};
use crate::samplers::{run_pmc, run_smc_abc, PmcConfig, Problem, SmcAbcConfig};
use crate::weighting::{exact_weights, EstimatorInput, WeightEstimator};

/// Default floor applied to the approximate side of a KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

/// Metrics for one sampler iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iteration: usize,
    pub weighted_mean: ParameterVector,
    /// MSE between the weighted mean and the observed summary.
    pub mse_vs_observation: Option<f64>,
    /// RMSE between the weighted mean and the data-generating parameter.
    pub rmse_vs_truth: Option<f64>,
    pub ess: f64,
    pub cumulative_sim_calls: u64,
    pub wall_ms: u64,
}

/// `Σ p_i ln(p_i / max(q_i, floor))`, with `0 · ln 0 = 0`.
pub fn kl_divergence(p: &WeightVector, q: &WeightVector, floor: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    if !(floor > 0.0) {
        return Err(Error::InvalidInput("KL floor must be positive".into()));
    }
    Ok(p.iter()
        .zip(q.iter())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(floor)).ln())
        .sum())
}

/// Which way round a weight KL divergence is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `KL(exact ‖ approximate)`.
    #[default]
    ExactToApprox,
    /// `KL(approximate ‖ exact)`.
    ApproxToExact,
}

impl KlDirection {
    pub fn divergence(&self, exact: &WeightVector, approx: &WeightVector) -> Result<f64> {
        match self {
            KlDirection::ExactToApprox => kl_divergence(exact, approx, KL_FLOOR),
            KlDirection::ApproxToExact => kl_divergence(approx, exact, KL_FLOOR),
        }
    }
}

/// `(1/d) Σ (e_j − t_j)²`.
pub fn mse(estimate: &[f64], target: &[f64]) -> Result<f64> {
    if estimate.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: estimate.len(),
        });
    }
    if estimate.is_empty() {
        return Err(Error::InvalidInput("mse of empty vectors".into()));
    }
    Ok(estimate.iter().zip(target).map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / estimate.len() as f64)
}

pub fn rmse(estimate: &[f64], target: &[f64]) -> Result<f64> {
    Ok(mse(estimate, target)?.sqrt())
}

/// Paired t statistic and its degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedT {
    pub t: f64,
    pub dof: usize,
}

impl PairedT {
    pub fn two_sided_p_value(&self) -> f64 {
        student_t_two_sided_p(self.t, self.dof as f64)
    }
}

/// `t = mean(a−b) / (sd(a−b)/√n)` with the sample standard deviation.
pub fn paired_t_statistic(a: &[f64], b: &[f64]) -> Result<PairedT> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("paired t needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().all(|d| *d == diffs[0]) {
        return Err(Error::ZeroVariance);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    Ok(PairedT {
        t: mean / (var.sqrt() / n.sqrt()),
        dof: diffs.len() - 1,
    })
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive_simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Two-sided p-value of a Student-t statistic, by quadrature of the
/// (unnormalized) t density. The normalizing constant is integrated too, so
/// no gamma function is needed. Tails are integrated after the substitution
/// `x = 1/s`.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    const TOL: f64 = 1e-8;
    let exponent = -(dof + 1.0) / 2.0;
    let density = move |x: f64| (1.0 + x * x / dof).powf(exponent);
    // ∫_1^∞ g(x) dx = ∫_0^1 g(1/s)/s² ds; the integrand is finite at s = 0.
    let tail_density = move |s: f64| {
        if s == 0.0 {
            if dof == 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            density(1.0 / s) / (s * s)
        }
    };
    let core = adaptive_simpson(&density, 0.0, 1.0, TOL);
    let outer = adaptive_simpson(&tail_density, 0.0, 1.0, TOL);
    let half = core + outer;
    let t = t.abs();
    let tail = if t <= 1.0 {
        adaptive_simpson(&density, t, 1.0, TOL) + outer
    } else {
        let upper = 1.0 / t;
        let guess = simpson(0.0, upper, tail_density(0.0), tail_density(0.5 * upper), tail_density(upper));
        adaptive_simpson(&tail_density, 0.0, upper, (TOL * guess.abs()).max(1e-300))
    };
    (tail / half).clamp(0.0, 1.0)
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// One cell of a long-format metric table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub replicate: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(replicate: usize, method: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        Self {
            replicate,
            method: method.into(),
            metric: metric.into(),
            value,
        }
    }
}

/// Median and quartiles of one `(method, metric)` column.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub metric: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Per-replicate metrics plus failures of a study.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    /// Wall-clock measurements, kept apart because they are not reproducible.
    pub timings: Vec<MetricRow>,
    /// Replicates that errored, with the error that stopped them.
    pub failures: Vec<(usize, Error)>,
    /// Calls counted by the simulator itself over the whole study.
    pub simulator_calls: u64,
    /// Simulator calls reported by the study itself (sampler traces, or
    /// the simulations it generated directly).
    pub trace_simulator_calls: u64,
}

impl MetricTable {
    /// Values of one `(method, metric)` column, in replicate order.
    pub fn column(&self, method: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .chain(&self.timings)
            .filter(|r| r.method == method && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// Methods and metrics in order of first appearance.
    pub fn keys(&self) -> Vec<(String, String)> {
        let mut seen = Vec::new();
        for r in self.rows.iter().chain(&self.timings) {
            let key = (r.method.clone(), r.metric.clone());
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        seen
    }

    pub fn aggregate(&self) -> Vec<AggregateRow> {
        aggregate_rows(self.rows.iter().chain(&self.timings))
    }

    pub fn write_csv<W: Write>(rows: &[MetricRow], mut out: W) -> Result<()> {
        writeln!(out, "replicate,method,metric,value")?;
        for r in rows {
            writeln!(out, "{},{},{},{:?}", r.replicate, r.method, r.metric, r.value)?;
        }
        Ok(())
    }

    pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], mut out: W) -> Result<()> {
        writeln!(out, "method,metric,median,q25,q75")?;
        for r in rows {
            writeln!(out, "{},{},{:?},{:?},{:?}", r.method, r.metric, r.median, r.q25, r.q75)?;
        }
        Ok(())
    }

    /// Parses the `replicate,method,metric,value` format.
    pub fn read_csv(text: &str) -> Result<Vec<MetricRow>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "replicate,method,metric,value" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header replicate,method,metric,value".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = |message: String| Error::Parse { line: i + 1, message };
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", fields.len())));
            }
            rows.push(MetricRow {
                replicate: fields[0].trim().parse().map_err(|e| bad(format!("replicate: {e}")))?,
                method: fields[1].trim().to_string(),
                metric: fields[2].trim().to_string(),
                value: fields[3].trim().parse().map_err(|e| bad(format!("value: {e}")))?,
            });
        }
        Ok(rows)
    }
}

/// Median and quartiles per `(method, metric)`, in first-appearance order.
pub fn aggregate_rows<'a>(rows: impl Iterator<Item = &'a MetricRow>) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.metric.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.value);
    }
    order
        .into_iter()
        .map(|key| {
            let mut v = groups.remove(&key).expect("key recorded");
            v.sort_by(f64::total_cmp);
            AggregateRow {
                median: quantile_sorted(&v, 0.5),
                q25: quantile_sorted(&v, 0.25),
                q75: quantile_sorted(&v, 0.75),
                method: key.0,
                metric: key.1,
            }
        })
        .collect()
}

/// What one replicate of a study produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicateOutput {
    pub rows: Vec<MetricRow>,
    pub timings: Vec<MetricRow>,
    /// Simulator calls reported by sampler traces in this replicate.
    pub trace_simulator_calls: u64,
}

/// Runs `body` for replicates `0..count` (concurrently, each with its own
/// seed tree) and folds the results in replicate order. A failing replicate
/// is recorded and the rest of the study continues. The replicate index of
/// every row is set here.
pub fn run_replicates<F>(count: usize, seed: u64, body: F) -> MetricTable
where
    F: Fn(usize, SeedTree) -> Result<ReplicateOutput> + Sync,
{
    let root = SeedTree::new(seed);
    let outcomes: Vec<Result<ReplicateOutput>> = (0..count)
        .into_par_iter()
        .map(|r| body(r, root.child(Purpose::Replicate, r as u64)))
        .collect();
    let mut table = MetricTable::default();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(out) => {
                let tag = |mut row: MetricRow| {
                    row.replicate = r;
                    row
                };
                table.rows.extend(out.rows.into_iter().map(tag));
                table.timings.extend(out.timings.into_iter().map(tag));
                table.trace_simulator_calls += out.trace_simulator_calls;
            }
            Err(e) => table.failures.push((r, e)),
        }
    }
    table
}

/// A labelled weight estimator under comparison.
pub struct StudyMethod {
    pub label: String,
    pub estimator: Box<dyn WeightEstimator + Send>,
}

impl StudyMethod {
    pub fn new(label: impl Into<String>, estimator: impl WeightEstimator + Send + 'static) -> Self {
        Self {
            label: label.into(),
            estimator: Box::new(estimator),
        }
    }
}

/// The Gaussian benchmark setup shared by the studies.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub true_mean: ParameterVector,
    pub prior: BoxPrior,
}

impl Benchmark {
    /// `N(μ, I)` with `μ = (1, …, 5)` under a `U(−20, 20)⁵` prior.
    pub fn standard() -> Self {
        Self {
            true_mean: ParameterVector::from(crate::models::BENCHMARK_MEAN),
            prior: BoxPrior::cube(crate::models::BENCHMARK_MEAN.len(), -20.0, 20.0).expect("valid box"),
        }
    }

    pub fn model(&self) -> GaussianModel {
        GaussianModel::new(self.true_mean.dim())
    }

    /// The replicate's observation: a single draw from the true model.
    pub fn observe(&self, tree: &SeedTree) -> crate::models::Dataset {
        self.model().simulate(&self.true_mean, 1, &mut tree.stream(Purpose::Observation, 0, 0))
    }
}

/// Weight-accuracy study: each replicate draws an observation and, per
/// particle count, a particle set from a box; every method then weights the
/// same particles using the same simulations.
pub struct ReplicateStudy {
    pub num_datasets: usize,
    pub seed: u64,
    pub benchmark: Benchmark,
    /// Box the particles are drawn from (also their proposal density).
    pub particle_box: BoxPrior,
    pub particle_counts: Vec<usize>,
    pub sims_per_particle: usize,
    pub methods: Vec<StudyMethod>,
    pub kl_direction: KlDirection,
}

/// Label used in metric tables for a method at a particle count.
pub fn method_label(method: &str, particles: usize) -> String {
    format!("{method}@N={particles}")
}

/// Runs a [`ReplicateStudy`]. Emits `kl` and `sim_calls` per method and
/// particle count; `fit_ms` goes to the timing table.
pub fn run_replicate_study(study: &ReplicateStudy) -> MetricTable {
    let model = CountingSimulator::new(study.benchmark.model());
    let mut table = run_replicates(study.num_datasets, study.seed, |_, tree| {
        let observed = study.benchmark.observe(&tree);
        let observed_summary = model.summarize(&observed);
        let mut out = ReplicateOutput::default();
        for &n in &study.particle_counts {
            let key = n as u64;
            let particles: Vec<ParameterVector> = (0..n)
                .map(|i| study.particle_box.sample(&mut tree.stream(Purpose::ParticleSet, key, i as u64)))
                .collect();
            let sims: Vec<Vec<SummaryVector>> = (0..n)
                .map(|i| {
                    simulate_summaries(
                        &model,
                        &particles[i],
                        study.sims_per_particle,
                        1,
                        &mut tree.stream(Purpose::Simulate, key, i as u64),
                    )
                })
                .collect();
            let marginal_count = study
                .methods
                .iter()
                .map(|m| m.estimator.marginal_sims(n, study.sims_per_particle))
                .max()
                .unwrap_or(0);
            let marginal: Vec<SummaryVector> = (0..marginal_count)
                .map(|j| {
                    let theta = study.benchmark.prior.sample(&mut tree.stream(Purpose::MarginalPrior, key, j as u64));
                    let data = model.simulate(&theta, 1, &mut tree.stream(Purpose::MarginalSimulate, key, j as u64));
                    model.summarize(&data)
                })
                .collect();
            out.trace_simulator_calls += (n * study.sims_per_particle + marginal_count) as u64;
            let exact = exact_weights(
                model.inner(),
                &particles,
                &observed,
                &study.benchmark.prior,
                &study.particle_box,
            )?
            .normalized()?;
            for method in &study.methods {
                let wanted = method.estimator.marginal_sims(n, study.sims_per_particle);
                let input = EstimatorInput {
                    particles: &particles,
                    sims: &sims,
                    marginal_sims: &marginal[..wanted],
                    observed: &observed,
                    observed_summary: &observed_summary,
                    prior: &study.benchmark.prior,
                    proposal: &study.particle_box,
                };
                let estimate = method.estimator.estimate(&input)?;
                let label = method_label(&method.label, n);
                let kl = study.kl_direction.divergence(&exact, &estimate.normalized()?)?;
                out.rows.push(MetricRow::new(0, &label, "kl", kl));
                out.rows.push(MetricRow::new(0, &label, "sim_calls", estimate.simulator_calls_used as f64));
                out.rows.push(MetricRow::new(0, &label, "unconverged_fits", estimate.unconverged_fits as f64));
                out.timings.push(MetricRow::new(0, &label, "fit_ms", duration_ms(estimate.fit_time)));
            }
        }
        Ok(out)
    });
    table.simulator_calls = model.calls();
    table
}

fn duration_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// PMC convergence study: every replicate draws one observation and runs
/// PMC with each estimator on it. Emits `mse_iter_<t>` for every iteration,
/// `final_mse`, `final_rmse_truth` and `sim_calls`.
pub fn pmc_convergence_study(
    num_datasets: usize,
    seed: u64,
    benchmark: &Benchmark,
    cfg: &PmcConfig,
    methods: &[StudyMethod],
) -> MetricTable {
    let model = CountingSimulator::new(benchmark.model());
    let mut table = run_replicates(num_datasets, seed, |_, tree| {
        let problem = Problem::new(&model, benchmark.prior.clone(), benchmark.observe(&tree))?
            .with_truth(benchmark.true_mean.clone());
        let run_seed = tree.child(Purpose::Replicate, 0).master();
        let mut out = ReplicateOutput::default();
        for method in methods {
            let cfg = PmcConfig { seed: run_seed, ..cfg.clone() };
            let trace = run_pmc(&problem, method.estimator.as_ref(), &cfg)?;
            out.trace_simulator_calls += trace.total_simulator_calls;
            for r in &trace.records {
                if let Some(m) = r.mse_vs_observation {
                    out.rows.push(MetricRow::new(0, &method.label, format!("mse_iter_{}", r.iteration), m));
                }
                out.timings.push(MetricRow::new(0, &method.label, format!("wall_ms_iter_{}", r.iteration), r.wall_ms as f64));
            }
            let last = trace.records.last().expect("at least one record");
            out.rows.push(MetricRow::new(0, &method.label, "final_mse", last.mse_vs_observation.unwrap_or(f64::NAN)));
            out.rows.push(MetricRow::new(0, &method.label, "final_rmse_truth", last.rmse_vs_truth.unwrap_or(f64::NAN)));
            out.rows.push(MetricRow::new(0, &method.label, "sim_calls", trace.total_simulator_calls as f64));
        }
        Ok(out)
    });
    table.simulator_calls = model.calls();
    table
}

/// Budget comparison between SMC ABC and a PMC estimator on shared
/// observations. PMC accuracy uses the pooled mean of its last
/// `pmc_cfg.stop_window` iterations. Emits `rmse_truth` and `total_sims` for
/// `smc_abc` and for the PMC method's label, plus the PMC iteration count.
pub fn budget_comparison_study(
    num_datasets: usize,
    seed: u64,
    benchmark: &Benchmark,
    pmc_cfg: &PmcConfig,
    pmc_method: &StudyMethod,
    abc_cfg: &SmcAbcConfig,
) -> MetricTable {
    let model = CountingSimulator::new(benchmark.model());
    let truth = &benchmark.true_mean;
    let mut table = run_replicates(num_datasets, seed, |_, tree| {
        let problem = Problem::new(&model, benchmark.prior.clone(), benchmark.observe(&tree))?.with_truth(truth.clone());
        let mut out = ReplicateOutput::default();

        let abc_cfg = SmcAbcConfig { seed: tree.child(Purpose::Replicate, 1).master(), ..abc_cfg.clone() };
        let abc = run_smc_abc(&problem, &abc_cfg)?;
        let abc_mean = abc.last().expect("nonempty schedule").weighted_mean();
        out.rows.push(MetricRow::new(0, SMC_ABC_LABEL, "rmse_truth", rmse(&abc_mean, truth)?));
        out.rows.push(MetricRow::new(0, SMC_ABC_LABEL, "total_sims", abc.total_simulator_calls as f64));
        out.trace_simulator_calls += abc.total_simulator_calls;

        let pmc_cfg = PmcConfig { seed: tree.child(Purpose::Replicate, 2).master(), ..pmc_cfg.clone() };
        let pmc = run_pmc(&problem, pmc_method.estimator.as_ref(), &pmc_cfg)?;
        let pooled = pmc.pooled_recent_mean(pmc_cfg.stop_window).expect("nonempty trace");
        out.rows.push(MetricRow::new(0, &pmc_method.label, "rmse_truth", rmse(&pooled, truth)?));
        out.rows.push(MetricRow::new(0, &pmc_method.label, "total_sims", pmc.total_simulator_calls as f64));
        out.rows.push(MetricRow::new(0, &pmc_method.label, "iterations", pmc.generations.len() as f64));
        out.trace_simulator_calls += pmc.total_simulator_calls;
        Ok(out)
    });
    table.simulator_calls = model.calls();
    table
}

/// Method label used for SMC ABC in study tables.
pub const SMC_ABC_LABEL: &str = "smc_abc";
