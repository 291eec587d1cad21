//! Simulator and prior abstractions, and the multivariate Gaussian benchmark
//! with its exact likelihood.

use std::io::{BufRead, Write};
use std::ops::Deref;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::particles::{GaussianMixtureProposal, ParameterVector};
use crate::rng::StreamRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `n` replicate draws of a `p`-dimensional observation, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    cols: usize,
    data: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("dataset needs at least one row and column".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset entries must be finite".into()));
        }
        Ok(Self { cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                expected: cols,
                actual: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for row in self.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.n_rows() as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Reads a headerless CSV, one replicate per line.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let row = trimmed
                .split(',')
                .map(|field| {
                    field.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        message: format!("bad number {field:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                let first: &Vec<f64> = first;
                if first.len() != row.len() {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("expected {} fields, found {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "no data rows".into(),
            });
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.rows() {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Summary statistics of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryVector(Vec<f64>);

impl SummaryVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for SummaryVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A stochastic simulator `p(· | θ)` together with its summary statistics.
pub trait SimulatorModel: Send + Sync {
    fn dim_theta(&self) -> usize;

    fn dim_summary(&self) -> usize;

    /// `n` i.i.d. replicate observations at `theta`.
    fn simulate(&self, theta: &ParameterVector, n: usize, rng: &mut StreamRng) -> Dataset;

    fn summarize(&self, data: &Dataset) -> SummaryVector;
}

impl<M: SimulatorModel + ?Sized> SimulatorModel for &M {
    fn dim_theta(&self) -> usize {
        (**self).dim_theta()
    }

    fn dim_summary(&self) -> usize {
        (**self).dim_summary()
    }

    fn simulate(&self, theta: &ParameterVector, n: usize, rng: &mut StreamRng) -> Dataset {
        (**self).simulate(theta, n, rng)
    }

    fn summarize(&self, data: &Dataset) -> SummaryVector {
        (**self).summarize(data)
    }
}

/// Simulates `replicates` datasets of `rows` rows each and returns their
/// summaries. Each dataset is one simulator call.
pub fn simulate_summaries<M: SimulatorModel + ?Sized>(
    model: &M,
    theta: &ParameterVector,
    replicates: usize,
    rows: usize,
    rng: &mut StreamRng,
) -> Vec<SummaryVector> {
    (0..replicates)
        .map(|_| model.summarize(&model.simulate(theta, rows, rng)))
        .collect()
}

/// A log-density over parameter space.
pub trait LogDensity: Sync {
    fn log_density(&self, theta: &[f64]) -> f64;
}

impl LogDensity for GaussianMixtureProposal {
    fn log_density(&self, theta: &[f64]) -> f64 {
        self.logpdf(theta)
    }
}

/// A closed box-uniform prior.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxPrior {
    lower: Vec<f64>,
    upper: Vec<f64>,
    log_density: f64,
}

impl BoxPrior {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::LengthMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidInput("prior needs at least one dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
            return Err(Error::InvalidInput("prior bounds must be finite with lower < upper".into()));
        }
        let log_density = -lower.iter().zip(&upper).map(|(l, u)| (u - l).ln()).sum::<f64>();
        Ok(Self {
            lower,
            upper,
            log_density,
        })
    }

    /// The same interval `[lower, upper]` in every one of `dim` coordinates.
    pub fn cube(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *l <= *t && *t <= *u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        ParameterVector::new(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
        )
    }

    /// `−Σ ln(upper − lower)` inside the box, `−∞` outside.
    pub fn logpdf(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            self.log_density
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl LogDensity for BoxPrior {
    fn log_density(&self, theta: &[f64]) -> f64 {
        self.logpdf(theta)
    }
}

pub fn prior_logpdf(prior: &BoxPrior, theta: &[f64]) -> f64 {
    prior.logpdf(theta)
}

/// Observations drawn from `N(θ, I)`; summaries are the sample means.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    dim: usize,
}

/// The benchmark's true mean.
pub const BENCHMARK_MEAN: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

impl GaussianModel {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self { dim }
    }

    /// The five-dimensional benchmark.
    pub fn benchmark() -> Self {
        Self::new(BENCHMARK_MEAN.len())
    }

    /// `Σ_rows log N(row | θ, I)`.
    pub fn exact_log_likelihood(&self, theta: &[f64], observed: &Dataset) -> f64 {
        let d = self.dim as f64;
        observed
            .rows()
            .map(|row| {
                let sq: f64 = row.iter().zip(theta).map(|(x, t)| (x - t) * (x - t)).sum();
                -0.5 * (d * LN_2PI + sq)
            })
            .sum()
    }
}

impl SimulatorModel for GaussianModel {
    fn dim_theta(&self) -> usize {
        self.dim
    }

    fn dim_summary(&self) -> usize {
        self.dim
    }

    fn simulate(&self, theta: &ParameterVector, n: usize, rng: &mut StreamRng) -> Dataset {
        assert_eq!(theta.dim(), self.dim, "parameter dimension mismatch");
        assert!(n >= 1, "need at least one replicate");
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            for t in theta.iter() {
                let z: f64 = rng.sample(StandardNormal);
                data.push(t + z);
            }
        }
        Dataset {
            cols: self.dim,
            data,
        }
    }

    fn summarize(&self, data: &Dataset) -> SummaryVector {
        SummaryVector(data.column_means())
    }
}

/// Wraps a simulator and counts every `simulate` call independently of the
/// samplers' own bookkeeping.
#[derive(Debug, Default)]
pub struct CountingSimulator<M> {
    inner: M,
    calls: AtomicU64,
}

impl<M: SimulatorModel> CountingSimulator<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: SimulatorModel> SimulatorModel for CountingSimulator<M> {
    fn dim_theta(&self) -> usize {
        self.inner.dim_theta()
    }

    fn dim_summary(&self) -> usize {
        self.inner.dim_summary()
    }

    fn simulate(&self, theta: &ParameterVector, n: usize, rng: &mut StreamRng) -> Dataset {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.simulate(theta, n, rng)
    }

    fn summarize(&self, data: &Dataset) -> SummaryVector {
        self.inner.summarize(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SeedTree};
    use approx::assert_abs_diff_eq;

    fn rng(i: u64) -> StreamRng {
        SeedTree::new(2024).stream(Purpose::Test, 0, i)
    }

    #[test]
    fn simulate_is_deterministic_and_centred() {
        let model = GaussianModel::benchmark();
        let theta = ParameterVector::from(BENCHMARK_MEAN);
        let a = model.simulate(&theta, 100_000, &mut rng(0));
        let b = model.simulate(&theta, 100_000, &mut rng(0));
        assert_eq!(a, b);
        for (m, t) in a.column_means().iter().zip(theta.iter()) {
            assert!((m - t).abs() < 0.02, "{m} vs {t}");
        }
    }

    #[test]
    fn single_row_summary_is_the_row() {
        let model = GaussianModel::benchmark();
        let x = model.simulate(&ParameterVector::zeros(5), 1, &mut rng(1));
        assert_eq!(x.n_rows(), 1);
        assert_eq!(model.summarize(&x).as_slice(), x.row(0));
    }

    #[test]
    fn summarize_examples() {
        let model = GaussianModel::benchmark();
        let one = Dataset::from_rows(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        assert_eq!(model.summarize(&one).as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let two = Dataset::from_rows(&[vec![0.0; 5], vec![2.0; 5]]).unwrap();
        assert_eq!(model.summarize(&two).as_slice(), &[1.0; 5]);
        let many = model.simulate(&ParameterVector::zeros(5), 10_000, &mut rng(2));
        assert!(model.summarize(&many).iter().all(|m| m.abs() < 0.04));
    }

    #[test]
    fn exact_log_likelihood_examples() {
        let model = GaussianModel::benchmark();
        let theta = [1.0, 2.0, 3.0, 4.0, 5.0];
        let at_theta = Dataset::from_rows(&[theta.to_vec()]).unwrap();
        assert_abs_diff_eq!(model.exact_log_likelihood(&theta, &at_theta), -4.594_692_666_023_363, epsilon = 1e-12);

        let shifted: Vec<f64> = theta.iter().map(|t| t + 3.7).collect();
        let x = Dataset::from_rows(&[vec![0.5, 1.5, 2.0, 7.0, 4.0]]).unwrap();
        let x_shift = Dataset::from_rows(&[x.row(0).iter().map(|v| v + 3.7).collect()]).unwrap();
        assert_abs_diff_eq!(
            model.exact_log_likelihood(&theta, &x),
            model.exact_log_likelihood(&shifted, &x_shift),
            epsilon = 1e-12
        );

        let ones = Dataset::from_rows(&[vec![1.0; 5]]).unwrap();
        assert_abs_diff_eq!(model.exact_log_likelihood(&[0.0; 5], &ones), -7.094_692_666_023_363, epsilon = 1e-12);
    }

    #[test]
    fn prior_examples() {
        let prior = BoxPrior::cube(5, -20.0, 20.0).unwrap();
        assert_abs_diff_eq!(prior_logpdf(&prior, &[0.0; 5]), -5.0 * 40f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(prior_logpdf(&prior, &[0.0; 5]), -18.4443, epsilon = 1e-4);
        assert_eq!(prior_logpdf(&prior, &[25.0, 0.0, 0.0, 0.0, 0.0]), f64::NEG_INFINITY);
        assert!(prior_logpdf(&prior, &[20.0, 0.0, 0.0, 0.0, 0.0]).is_finite());
        assert!(BoxPrior::new(vec![1.0], vec![1.0]).is_err());
        assert!(BoxPrior::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn prior_samples_stay_in_box() {
        let prior = BoxPrior::new(vec![-1.0, 10.0], vec![1.0, 11.0]).unwrap();
        let mut r = rng(3);
        for _ in 0..1000 {
            assert!(prior.contains(&prior.sample(&mut r)));
        }
    }

    #[test]
    fn counting_simulator_counts_calls() {
        let model = CountingSimulator::new(GaussianModel::new(2));
        let mut r = rng(4);
        let summaries = simulate_summaries(&model, &ParameterVector::zeros(2), 7, 3, &mut r);
        assert_eq!(summaries.len(), 7);
        assert_eq!(model.calls(), 7);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let x = Dataset::from_rows(&[vec![1.5, -2.0], vec![0.1, 1e-300]]).unwrap();
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), x);
        assert!(matches!(
            Dataset::read_csv("1,2\n3\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(Dataset::read_csv("1,x\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(Dataset::read_csv("".as_bytes()).is_err());
    }
}
