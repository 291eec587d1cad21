//! Particle-system primitives shared by every sampler: weight normalization,
//! resampling, weighted moments, Gaussian densities and the adaptive mixture
//! proposal.

use std::ops::{Deref, Index};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance on the sum of a normalized weight vector.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Smallest eigenvalue below which a covariance is flagged singular.
pub const SINGULAR_EIGENVALUE: f64 = 1e-10;

/// Relative ridge added to a covariance whose factorization fails.
pub const RIDGE_SCALE: f64 = 1e-8;

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl<const D: usize> From<[f64; D]> for ParameterVector {
    fn from(values: [f64; D]) -> Self {
        Self(values.to_vec())
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Wraps weights that are already normalized; fails otherwise.
    pub fn from_normalized(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE * values.len().max(1) as f64 {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Running sums, ending at exactly 1.
    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = self
            .0
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        cdf
    }
}

impl Index<usize> for WeightVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Rescales nonnegative weights to sum to one.
pub fn normalize_weights(raw: &[f64]) -> Result<WeightVector> {
    if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights(format!("all {} weights are zero", raw.len())));
    }
    Ok(WeightVector(raw.iter().map(|w| w / total).collect()))
}

/// Normalizes weights given as logarithms; `-inf` entries become exact zeros.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<WeightVector> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights(format!(
            "all {} weights are zero",
            log_weights.len()
        )));
    }
    if !max.is_finite() {
        return Err(Error::InvalidInput("log-weights must not be +inf or NaN".into()));
    }
    let shifted: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    normalize_weights(&shifted)
}

/// `log Σ exp(x_i)`, stable for large magnitudes. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `1 / Σ w_i²`; lies in `[1, N]` for normalized weights.
pub fn effective_sample_size(w: &WeightVector) -> f64 {
    1.0 / w.iter().map(|x| x * x).sum::<f64>()
}

fn check_lengths(particles: &[ParameterVector], w: &WeightVector) -> Result<usize> {
    if particles.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: particles.len(),
            actual: w.len(),
        });
    }
    let dim = particles.first().map(|p| p.dim()).ok_or_else(|| {
        Error::InvalidInput("particle set is empty".into())
    })?;
    if let Some(bad) = particles.iter().find(|p| p.dim() != dim) {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    Ok(dim)
}

/// `Σ_i w_i θ_i`, componentwise.
pub fn weighted_mean(particles: &[ParameterVector], w: &WeightVector) -> Result<ParameterVector> {
    let dim = check_lengths(particles, w)?;
    let mut mean = vec![0.0; dim];
    for (p, &wi) in particles.iter().zip(w.iter()) {
        if wi == 0.0 {
            continue;
        }
        for (m, v) in mean.iter_mut().zip(p.iter()) {
            *m += wi * v;
        }
    }
    Ok(ParameterVector(mean))
}

/// A weighted covariance plus a flag raised when it is numerically singular.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    /// Smallest eigenvalue fell below [`SINGULAR_EIGENVALUE`]; callers must
    /// regularize before factorizing.
    pub singular: bool,
}

/// `Σ_i w_i (θ_i − μ̄)(θ_i − μ̄)ᵀ` with `μ̄` the weighted mean. No bias correction.
pub fn weighted_covariance(
    particles: &[ParameterVector],
    w: &WeightVector,
) -> Result<CovarianceEstimate> {
    let dim = check_lengths(particles, w)?;
    if particles.len() < 2 {
        return Err(Error::InvalidInput("covariance needs at least two particles".into()));
    }
    let mean = weighted_mean(particles, w)?;
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for (p, &wi) in particles.iter().zip(w.iter()) {
        if wi == 0.0 {
            continue;
        }
        for (c, (v, m)) in centered.iter_mut().zip(p.iter().zip(mean.iter())) {
            *c = v - m;
        }
        for r in 0..dim {
            for c in 0..=r {
                cov[(r, c)] += wi * centered[r] * centered[c];
            }
        }
    }
    for r in 0..dim {
        for c in 0..r {
            cov[(c, r)] = cov[(r, c)];
        }
    }
    let min_eig = cov
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(CovarianceEstimate {
        matrix: cov,
        singular: min_eig < SINGULAR_EIGENVALUE,
    })
}

/// Draws one index from the categorical distribution with cumulative sums `cdf`.
fn draw_index<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let idx = cdf.partition_point(|&c| c <= u);
    // Zero-weight trailing entries share the final cumulative value; step back
    // to the last index that actually carries mass.
    let mut idx = idx.min(cdf.len() - 1);
    while idx > 0 && cdf[idx] == cdf[idx - 1] {
        idx -= 1;
    }
    idx
}

/// Draws `count` indices i.i.d. from the categorical distribution `w`.
pub fn resample_indices<R: Rng + ?Sized>(w: &WeightVector, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if w.is_empty() || w.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateWeights("cannot resample from zero weights".into()));
    }
    let cdf = w.cumulative();
    Ok((0..count).map(|_| draw_index(&cdf, rng)).collect())
}

/// Draws a single index from `w`.
pub fn resample_index<R: Rng + ?Sized>(w: &WeightVector, rng: &mut R) -> Result<usize> {
    Ok(resample_indices(w, 1, rng)?[0])
}

/// Multinomial resampling: `count` i.i.d. draws of particles with probabilities `w`.
pub fn multinomial_resample<R: Rng + ?Sized>(
    particles: &[ParameterVector],
    w: &WeightVector,
    count: usize,
    rng: &mut R,
) -> Result<Vec<ParameterVector>> {
    check_lengths(particles, w)?;
    if count == 0 {
        return Err(Error::InvalidInput("resample count must be at least 1".into()));
    }
    Ok(resample_indices(w, count, rng)?
        .into_iter()
        .map(|i| particles[i].clone())
        .collect())
}

/// Lower Cholesky factor of a covariance, ready for density evaluation and
/// sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    log_det: f64,
    /// Ridge that had to be added to the diagonal, zero if none.
    ridge: f64,
}

impl CholeskyFactor {
    /// Factorizes `cov`, adding a ridge of `1e-8 · trace/d` to the diagonal
    /// when the plain factorization fails. The ridge grows tenfold per retry;
    /// an all-zero matrix falls back to a unit scale.
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if dim == 0 || cov.ncols() != dim {
            return Err(Error::InvalidInput("covariance must be square and nonempty".into()));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        if let Some(factor) = Self::try_factor(cov, 0.0) {
            return Ok(factor);
        }
        let scale = cov.trace() / dim as f64;
        let mut ridge = RIDGE_SCALE * if scale > 0.0 { scale } else { 1.0 };
        for _ in 0..12 {
            if let Some(factor) = Self::try_factor(cov, ridge) {
                return Ok(factor);
            }
            ridge *= 10.0;
        }
        Err(Error::NotPositiveDefinite)
    }

    fn try_factor(cov: &DMatrix<f64>, ridge: f64) -> Option<Self> {
        let dim = cov.nrows();
        let mut l = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            let mut pivot = cov[(j, j)] + ridge;
            for k in 0..j {
                pivot -= l[(j, k)] * l[(j, k)];
            }
            if !(pivot > 0.0) || !pivot.is_finite() {
                return None;
            }
            let diag = pivot.sqrt();
            l[(j, j)] = diag;
            for i in (j + 1)..dim {
                let mut v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / diag;
            }
        }
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Some(Self {
            lower: l,
            log_det,
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// The factorized matrix, including any ridge.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Squared Mahalanobis distance `(x−m)ᵀ Σ⁻¹ (x−m)` by forward substitution.
    pub fn mahalanobis_sq(&self, x: &[f64], mean: &[f64]) -> f64 {
        let dim = self.dim();
        let mut z = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if dim <= z.len() {
            &mut z[..dim]
        } else {
            heap = vec![0.0; dim];
            &mut heap
        };
        let mut total = 0.0;
        for i in 0..dim {
            let mut v = x[i] - mean[i];
            for k in 0..i {
                v -= self.lower[(i, k)] * z[k];
            }
            let zi = v / self.lower[(i, i)];
            z[i] = zi;
            total += zi * zi;
        }
        total
    }

    /// `log N(x | mean, Σ)`.
    pub fn logpdf(&self, x: &[f64], mean: &[f64]) -> f64 {
        let dim = self.dim() as f64;
        -0.5 * (dim * (2.0 * std::f64::consts::PI).ln() + self.log_det + self.mahalanobis_sq(x, mean))
    }

    /// Draws from `N(mean, Σ)`.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> ParameterVector {
        let z: DVector<f64> = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample(StandardNormal)));
        let shifted = &self.lower * z;
        ParameterVector(mean.iter().zip(shifted.iter()).map(|(m, s)| m + s).collect())
    }
}

/// `log N(x | mean, cov)` via a Cholesky factorization of `cov`.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::LengthMismatch {
            expected: mean.len(),
            actual: x.len(),
        });
    }
    if cov.nrows() != x.len() {
        return Err(Error::LengthMismatch {
            expected: cov.nrows(),
            actual: x.len(),
        });
    }
    Ok(CholeskyFactor::new(cov)?.logpdf(x, mean))
}

/// Weighted Gaussian mixture `Σ_k w_k N(· | θ_k, Σ)` with a shared covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureProposal {
    means: Vec<ParameterVector>,
    mixture_weights: WeightVector,
    factor: CholeskyFactor,
}

impl GaussianMixtureProposal {
    pub fn new(
        means: Vec<ParameterVector>,
        mixture_weights: WeightVector,
        cov: &DMatrix<f64>,
    ) -> Result<Self> {
        let dim = check_lengths(&means, &mixture_weights)?;
        if cov.nrows() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: cov.nrows(),
            });
        }
        Ok(Self {
            means,
            mixture_weights,
            factor: CholeskyFactor::new(cov)?,
        })
    }

    pub fn means(&self) -> &[ParameterVector] {
        &self.means
    }

    pub fn mixture_weights(&self) -> &WeightVector {
        &self.mixture_weights
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// The covariance actually used, after any regularization.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.factor.covariance()
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .means
            .iter()
            .zip(self.mixture_weights.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(m, &w)| w.ln() + self.factor.logpdf(x, m))
            .collect();
        log_sum_exp(&terms)
    }

    /// Perturbs `center` with the mixture's shared Gaussian kernel.
    pub fn perturb<R: Rng + ?Sized>(&self, center: &[f64], rng: &mut R) -> ParameterVector {
        self.factor.sample(center, rng)
    }

    /// Draws a component by weight and perturbs its mean.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        let cdf = self.mixture_weights.cumulative();
        let k = draw_index(&cdf, rng);
        self.perturb(&self.means[k], rng)
    }
}

/// `log Σ_k w_k N(x | θ_k, Σ)`.
pub fn mixture_logpdf(proposal: &GaussianMixtureProposal, x: &[f64]) -> f64 {
    proposal.logpdf(x)
}

/// One iteration's particle population.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleGeneration {
    pub iteration: usize,
    pub particles: Vec<ParameterVector>,
    pub weights: WeightVector,
    /// The proposal covariance τ² derived from this generation
    /// (twice its weighted covariance, regularized).
    pub proposal_cov: DMatrix<f64>,
}

impl ParticleGeneration {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weighted_mean(&self) -> ParameterVector {
        weighted_mean(&self.particles, &self.weights).expect("generation invariants hold")
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    /// The mixture centred on this generation with kernel `proposal_cov`.
    pub fn mixture_proposal(&self) -> Result<GaussianMixtureProposal> {
        GaussianMixtureProposal::new(self.particles.clone(), self.weights.clone(), &self.proposal_cov)
    }
}

/// Weighted covariance estimator behind the adaptive kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelCovariance {
    /// `Σ w_i (θ_i − μ)(θ_i − μ)ᵀ`.
    Plain,
    /// The plain estimate divided by `1 − Σ w_i²` (unbiased for reliability
    /// weights). Keeps the spread of the particles when nearly all the mass
    /// sits on one of them.
    Reliability,
    /// Per-coordinate variances of [`KernelCovariance::Plain`].
    PlainDiagonal,
    /// Per-coordinate variances of [`KernelCovariance::Reliability`]. With a
    /// handful of effective particles the full estimate has rank far below
    /// the dimension and the kernel stops moving in the missing directions;
    /// the diagonal form stays full rank.
    #[default]
    ReliabilityDiagonal,
}

impl KernelCovariance {
    pub const ALL: [KernelCovariance; 4] = [
        KernelCovariance::Plain,
        KernelCovariance::Reliability,
        KernelCovariance::PlainDiagonal,
        KernelCovariance::ReliabilityDiagonal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            KernelCovariance::Plain => "plain",
            KernelCovariance::Reliability => "reliability",
            KernelCovariance::PlainDiagonal => "plain-diagonal",
            KernelCovariance::ReliabilityDiagonal => "reliability-diagonal",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// `1 − Σ w_i²`, evaluated as `Σ_i w_i Σ_{j≠i} w_j` so that it stays
/// accurate when one weight is close to 1.
pub fn weight_dispersion(w: &WeightVector) -> f64 {
    let n = w.len();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + w[i];
    }
    let mut prefix = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        total += w[i] * (prefix + suffix[i + 1]);
        prefix += w[i];
    }
    total
}

/// Twice the weighted covariance of a generation, as used for the next
/// proposal kernel. `None` for the reliability estimators when a single
/// particle holds all the weight, so no spread can be measured.
pub fn adaptive_kernel_covariance(
    particles: &[ParameterVector],
    w: &WeightVector,
    estimator: KernelCovariance,
) -> Result<Option<DMatrix<f64>>> {
    let mut plain = weighted_covariance(particles, w)?.matrix * 2.0;
    if matches!(estimator, KernelCovariance::PlainDiagonal | KernelCovariance::ReliabilityDiagonal) {
        plain = DMatrix::from_diagonal(&plain.diagonal());
    }
    match estimator {
        KernelCovariance::Plain | KernelCovariance::PlainDiagonal => Ok(Some(plain)),
        KernelCovariance::Reliability | KernelCovariance::ReliabilityDiagonal => {
            let dispersion = weight_dispersion(w);
            Ok((dispersion > 0.0).then(|| plain / dispersion))
        }
    }
}
