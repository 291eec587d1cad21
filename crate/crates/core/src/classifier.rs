//! L1-penalized binary and multinomial logistic regression.
//!
//! Training minimizes `(1/m)·NLL + λ·Σ|w|` over the non-intercept
//! coefficients with a monotone accelerated proximal-gradient method
//! (gradient step on the smooth part, soft-threshold for the penalty,
//! backtracking on the step size). Features are standardized internally and
//! the coefficients are mapped back to the raw feature scale on output.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::particles::log_sum_exp;

/// Rows per block in the data-parallel loss/gradient pass. Fixed so the
/// summation order never depends on the thread count.
const BLOCK_ROWS: usize = 512;

/// Consecutive small decreases required before declaring convergence.
const CONVERGED_STREAK: usize = 3;

/// Largest gradient-mapping entry `L·|z − y|` allowed at convergence.
const STATIONARITY_TOLERANCE: f64 = 1e-5;

/// Features and integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledFeatures {
    /// Builds a training set from feature rows; labels must cover every
    /// class in `0..num_classes` at least once.
    pub fn new<R: AsRef<[f64]>>(rows: &[R], labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        if num_classes < 2 {
            return Err(Error::InvalidInput("need at least two classes".into()));
        }
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidInput("need at least one feature row and column".into()));
        }
        let mut features = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("features must be finite".into()));
            }
            features.extend_from_slice(row);
        }
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::InvalidInput(format!("label {l} out of range for {num_classes} classes")));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!("class {missing} has no examples")));
        }
        Ok(Self {
            dim,
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The same features with classes `0` and `1` swapped (binary data only).
    pub fn with_swapped_binary_labels(&self) -> Self {
        assert_eq!(self.num_classes, 2);
        Self {
            labels: self.labels.iter().map(|l| 1 - l).collect(),
            ..self.clone()
        }
    }
}

/// How raw summary statistics become regression inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMap {
    #[default]
    Linear,
    /// Linear terms followed by all products `x_j x_k`, `j ≤ k`.
    Quadratic,
}

impl FeatureMap {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Linear => input_dim,
            FeatureMap::Quadratic => input_dim + input_dim * (input_dim + 1) / 2,
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(x);
        if let FeatureMap::Quadratic = self {
            for j in 0..x.len() {
                for k in j..x.len() {
                    out.push(x[j] * x[k]);
                }
            }
        }
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub l1_strength: f64,
    pub max_iterations: usize,
    /// Relative objective decrease below which the optimizer stops.
    pub tolerance: f64,
    /// Step-size shrink factor in the backtracking line search.
    pub backtrack: f64,
    pub feature_map: FeatureMap,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l1_strength: 0.0,
            max_iterations: 500,
            tolerance: 1e-8,
            backtrack: 0.5,
            feature_map: FeatureMap::Linear,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.l1_strength >= 0.0 && self.l1_strength.is_finite()) {
            problems.push("l1_strength must be finite and >= 0");
        }
        if self.max_iterations == 0 {
            problems.push("max_iterations must be positive");
        }
        if !(self.tolerance > 0.0) {
            problems.push("tolerance must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            problems.push("backtrack must lie in (0, 1)");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }
}

/// Optimizer diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    /// False when `max_iterations` was reached; the model is then the best
    /// iterate found.
    pub converged: bool,
    /// Penalized objective after each iteration, starting with the initial
    /// point. Non-increasing.
    pub objective_trace: Vec<f64>,
}

/// A fitted (multinomial) logistic regression on the raw feature scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    num_classes: usize,
    input_dim: usize,
    feature_map: FeatureMap,
    /// `num_classes × (features + 1)`, row-major, column 0 the intercept.
    coefficients: Vec<f64>,
    l1_strength: f64,
    class_counts: Vec<usize>,
    report: FitReport,
}

impl ClassifierModel {
    /// A model with explicit raw-scale coefficients.
    pub fn from_coefficients(
        num_classes: usize,
        input_dim: usize,
        feature_map: FeatureMap,
        coefficients: Vec<f64>,
        class_counts: Vec<usize>,
    ) -> Result<Self> {
        let width = feature_map.output_dim(input_dim) + 1;
        if coefficients.len() != num_classes * width {
            return Err(Error::LengthMismatch {
                expected: num_classes * width,
                actual: coefficients.len(),
            });
        }
        if class_counts.len() != num_classes {
            return Err(Error::LengthMismatch {
                expected: num_classes,
                actual: class_counts.len(),
            });
        }
        Ok(Self {
            num_classes,
            input_dim,
            feature_map,
            coefficients,
            l1_strength: 0.0,
            class_counts,
            report: FitReport {
                iterations: 0,
                converged: true,
                objective_trace: Vec::new(),
            },
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    pub fn width(&self) -> usize {
        self.coefficients.len() / self.num_classes
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn class_row(&self, c: usize) -> &[f64] {
        let w = self.width();
        &self.coefficients[c * w..(c + 1) * w]
    }

    pub fn l1_strength(&self) -> f64 {
        self.l1_strength
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn converged(&self) -> bool {
        self.report.converged
    }

    /// `ln(count_c / m)`: the training class prior.
    pub fn log_class_prior(&self, c: usize) -> f64 {
        let total: usize = self.class_counts.iter().sum();
        (self.class_counts[c] as f64 / total as f64).ln()
    }

    /// Class scores (logits) at `x`.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim, "feature dimension mismatch");
        let mut z = Vec::new();
        self.feature_map.apply_into(x, &mut z);
        (0..self.num_classes)
            .map(|c| {
                let row = self.class_row(c);
                row[0] + row[1..].iter().zip(&z).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Log class probabilities via a stabilized log-softmax.
    pub fn predict_log_proba(&self, x: &[f64]) -> Vec<f64> {
        let scores = self.scores(x);
        let lse = log_sum_exp(&scores);
        scores.iter().map(|s| s - lse).collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.predict_log_proba(x).into_iter().map(f64::exp).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let scores = self.scores(x);
        scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &s)| if s > best.1 { (c, s) } else { best })
            .0
    }
}

pub fn predict_proba(model: &ClassifierModel, x: &[f64]) -> Vec<f64> {
    model.predict_proba(x)
}

/// Expanded, standardized design matrix.
#[derive(Debug, Clone)]
pub struct StandardizedDesign {
    dim: usize,
    z: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Per block of rows: `[1, z]` as a `rows × (p + 1)` matrix and its transpose.
    augmented: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl StandardizedDesign {
    pub fn new(data: &LabeledFeatures, feature_map: FeatureMap) -> Self {
        let dim = feature_map.output_dim(data.dim());
        let m = data.len();
        let mut z = Vec::with_capacity(m * dim);
        let mut buf = Vec::with_capacity(dim);
        for i in 0..m {
            feature_map.apply_into(data.row(i), &mut buf);
            z.extend_from_slice(&buf);
        }
        let mut means = vec![0.0; dim];
        for row in z.chunks_exact(dim) {
            for (acc, v) in means.iter_mut().zip(row) {
                *acc += v;
            }
        }
        means.iter_mut().for_each(|v| *v /= m as f64);
        let mut vars = vec![0.0; dim];
        for row in z.chunks_exact(dim) {
            for ((acc, v), mu) in vars.iter_mut().zip(row).zip(&means) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let scales: Vec<f64> = vars
            .iter()
            .zip(&means)
            .map(|(v, mu)| {
                let sd = (v / m as f64).sqrt();
                if sd > 1e-12 * (1.0 + mu.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        for row in z.chunks_exact_mut(dim) {
            for ((v, mu), s) in row.iter_mut().zip(&means).zip(&scales) {
                *v = (*v - mu) / s;
            }
        }
        let augmented = z
            .chunks(BLOCK_ROWS * dim.max(1))
            .map(|block| {
                let rows = block.len() / dim.max(1);
                let a = DMatrix::from_fn(rows, dim + 1, |r, c| if c == 0 { 1.0 } else { block[r * dim + c - 1] });
                let at = a.transpose();
                (a, at)
            })
            .collect();
        Self {
            dim,
            z,
            labels: data.labels.clone(),
            num_classes: data.num_classes,
            means,
            scales,
            augmented,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn blocks(&self) -> impl IndexedParallelIterator<Item = (&(DMatrix<f64>, DMatrix<f64>), &[usize])> {
        self.augmented.par_iter().zip(self.labels.par_chunks(BLOCK_ROWS))
    }

    /// Maps standardized-scale coefficients back to the raw scale.
    fn to_raw_scale(&self, classes: usize, coefs: &[f64]) -> Vec<f64> {
        let width = self.dim + 1;
        let mut raw = vec![0.0; classes * width];
        for c in 0..classes {
            let row = &coefs[c * width..(c + 1) * width];
            let out = &mut raw[c * width..(c + 1) * width];
            let mut intercept = row[0];
            for j in 0..self.dim {
                out[j + 1] = row[j + 1] / self.scales[j];
                intercept -= row[j + 1] * self.means[j] / self.scales[j];
            }
            out[0] = intercept;
        }
        raw
    }
}

/// Lower clamp for softmax and logistic exponents; `exp(-700) ≈ 1e-304` is
/// indistinguishable from zero next to the row maximum's term of 1.
const SOFTMAX_FLOOR: f64 = -700.0;

/// `exp(x)` for `x ∈ [-700, 0]`, to within a few ulp. Branch-free so that
/// loops over score buffers vectorize.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // Adding 1.5·2^52 rounds to an integer held in the low mantissa bits.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = x - k * LN2_HI - k * LN2_LO;
    let scale = f64::from_bits(t.to_bits().wrapping_sub(SHIFT.to_bits()).wrapping_add(1023) << 52);
    // Taylor series to r¹²; |r| ≤ ln2/2 bounds the truncation below 2e-16.
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    p * scale
}

/// Per-iteration shrink of the Lipschitz estimate, so the step can grow back
/// after backtracking overshoots.
const LIPSCHITZ_RELAX: f64 = 0.9;

/// The smooth part of a training objective: mean negative log-likelihood.
pub trait SmoothLoss: Sync {
    fn num_params(&self) -> usize;

    /// Parameters excluded from the L1 penalty (intercepts).
    fn is_intercept(&self, index: usize) -> bool;

    fn value(&self, params: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the value.
    fn value_and_gradient(&self, params: &[f64], grad: &mut [f64]) -> f64;
}

/// Softmax regression loss over `C` classes; parameters are
/// `C × (p + 1)` row-major with the intercept first in each row.
pub struct MultinomialLoss<'a> {
    design: &'a StandardizedDesign,
}

impl<'a> MultinomialLoss<'a> {
    pub fn new(design: &'a StandardizedDesign) -> Self {
        Self { design }
    }

    /// Loss over one block; adds the gradient (as a `C × (p + 1)` matrix)
    /// into `grad` when given.
    fn block_pass(
        &self,
        weights: &DMatrix<f64>,
        block: &(DMatrix<f64>, DMatrix<f64>),
        labels: &[usize],
        grad: Option<&mut DMatrix<f64>>,
    ) -> f64 {
        let (a, at) = block;
        // One column of scores per row of the block.
        let mut scores = weights * at;
        let classes = scores.nrows();
        let mut loss = 0.0;
        for (col, &y) in scores.as_mut_slice().chunks_exact_mut(classes).zip(labels) {
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let shifted_y = col[y] - max;
            for s in col.iter_mut() {
                *s = exp_nonpositive((*s - max).max(SOFTMAX_FLOOR));
            }
            let total: f64 = col.iter().sum();
            loss += total.ln() - shifted_y;
            if grad.is_some() {
                let inv = 1.0 / total;
                col.iter_mut().for_each(|s| *s *= inv);
                col[y] -= 1.0;
            }
        }
        if let Some(g) = grad {
            g.gemm(1.0, &scores, a, 1.0);
        }
        loss
    }

    fn weights(&self, params: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.design.num_classes, self.design.dim + 1, params)
    }
}

impl SmoothLoss for MultinomialLoss<'_> {
    fn num_params(&self) -> usize {
        self.design.num_classes * (self.design.dim + 1)
    }

    fn is_intercept(&self, index: usize) -> bool {
        index % (self.design.dim + 1) == 0
    }

    fn value(&self, params: &[f64]) -> f64 {
        let w = self.weights(params);
        let parts: Vec<f64> = self
            .design
            .blocks()
            .map(|(block, labels)| self.block_pass(&w, block, labels, None))
            .collect();
        parts.iter().sum::<f64>() / self.design.len() as f64
    }

    fn value_and_gradient(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let w = self.weights(params);
        let (classes, width) = (self.design.num_classes, self.design.dim + 1);
        let parts: Vec<(f64, DMatrix<f64>)> = self
            .design
            .blocks()
            .map(|(block, labels)| {
                let mut g = DMatrix::zeros(classes, width);
                let loss = self.block_pass(&w, block, labels, Some(&mut g));
                (loss, g)
            })
            .collect();
        let m = self.design.len() as f64;
        let mut total = DMatrix::zeros(classes, width);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            total += g;
        }
        for c in 0..classes {
            for j in 0..width {
                grad[c * width + j] = total[(c, j)] / m;
            }
        }
        loss / m
    }
}

/// Logistic loss for two classes with a single coefficient vector; class 1
/// has score `β·[1, z]`, class 0 has score 0.
pub struct BinaryLoss<'a> {
    design: &'a StandardizedDesign,
}

impl<'a> BinaryLoss<'a> {
    pub fn new(design: &'a StandardizedDesign) -> Self {
        assert_eq!(design.num_classes, 2, "binary loss needs two classes");
        Self { design }
    }

    fn block_pass(
        &self,
        beta: &DVector<f64>,
        block: &(DMatrix<f64>, DMatrix<f64>),
        labels: &[usize],
        grad: Option<&mut DVector<f64>>,
    ) -> f64 {
        let (a, _) = block;
        let mut scores = a * beta;
        let mut loss = 0.0;
        for (s, &y) in scores.iter_mut().zip(labels) {
            let yf = y as f64;
            // softplus(s) − y·s and σ(s) − y from a single exponential.
            let e = exp_nonpositive((-s.abs()).max(SOFTMAX_FLOOR));
            loss += s.max(0.0) + e.ln_1p() - yf * *s;
            let p = if *s >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            *s = p - yf;
        }
        if let Some(g) = grad {
            g.gemv_tr(1.0, a, &scores, 1.0);
        }
        loss
    }
}

impl SmoothLoss for BinaryLoss<'_> {
    fn num_params(&self) -> usize {
        self.design.dim + 1
    }

    fn is_intercept(&self, index: usize) -> bool {
        index == 0
    }

    fn value(&self, params: &[f64]) -> f64 {
        let beta = DVector::from_column_slice(params);
        let parts: Vec<f64> = self
            .design
            .blocks()
            .map(|(block, labels)| self.block_pass(&beta, block, labels, None))
            .collect();
        parts.iter().sum::<f64>() / self.design.len() as f64
    }

    fn value_and_gradient(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let beta = DVector::from_column_slice(params);
        let n = self.num_params();
        let parts: Vec<(f64, DVector<f64>)> = self
            .design
            .blocks()
            .map(|(block, labels)| {
                let mut g = DVector::zeros(n);
                let loss = self.block_pass(&beta, block, labels, Some(&mut g));
                (loss, g)
            })
            .collect();
        let m = self.design.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(g.iter()) {
                *acc += v;
            }
        }
        grad.iter_mut().for_each(|g| *g /= m);
        loss / m
    }
}

fn l1_norm<L: SmoothLoss + ?Sized>(loss: &L, params: &[f64]) -> f64 {
    params
        .iter()
        .enumerate()
        .filter(|(i, _)| !loss.is_intercept(*i))
        .map(|(_, v)| v.abs())
        .sum()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Monotone accelerated proximal gradient with backtracking and
/// function-value restarts. Starts from zero.
pub fn minimize_l1<L: SmoothLoss + ?Sized>(loss: &L, opts: &FitOptions) -> (Vec<f64>, FitReport) {
    let n = loss.num_params();
    let lambda = opts.l1_strength;
    let penalized = |p: &[f64], smooth: f64| smooth + lambda * l1_norm(loss, p);

    let mut x = vec![0.0; n];
    let mut f_x = penalized(&x, loss.value(&x));
    let mut y = x.clone();
    let mut z = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut t = 1.0f64;
    let mut lipschitz = 1.0f64;
    let mut trace = vec![f_x];
    let mut streak = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        lipschitz *= LIPSCHITZ_RELAX;
        let f_y = loss.value_and_gradient(&y, &mut grad);
        let mut step_inf: f64;
        let f_z_smooth = loop {
            let step = 1.0 / lipschitz;
            for i in 0..n {
                let v = y[i] - step * grad[i];
                z[i] = if loss.is_intercept(i) { v } else { soft_threshold(v, step * lambda) };
            }
            let f_z = loss.value(&z);
            let mut linear = 0.0;
            let mut quad = 0.0;
            step_inf = 0.0;
            for i in 0..n {
                let d = z[i] - y[i];
                linear += grad[i] * d;
                quad += d * d;
                step_inf = step_inf.max(d.abs());
            }
            if f_z <= f_y + linear + 0.5 * lipschitz * quad + 1e-12 * f_y.abs().max(1e-300)
                || quad == 0.0
                || !lipschitz.is_finite()
            {
                break f_z;
            }
            lipschitz /= opts.backtrack;
        };
        let f_z = penalized(&z, f_z_smooth);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if f_z <= f_x {
            let decrease = f_x - f_z;
            let mut x_prev = std::mem::replace(&mut x, z.clone());
            for i in 0..n {
                let momentum = (t - 1.0) / t_next * (x[i] - x_prev[i]);
                x_prev[i] = x[i] + momentum;
            }
            y = x_prev;
            t = t_next;
            f_x = f_z;
            trace.push(f_x);
            let stationary = lipschitz * step_inf <= STATIONARITY_TOLERANCE;
            if decrease <= opts.tolerance * f_x.abs().max(1.0) && stationary {
                streak += 1;
                if streak >= CONVERGED_STREAK {
                    converged = true;
                    break;
                }
            } else {
                streak = 0;
            }
        } else {
            // Momentum overshot: restart from the current best iterate.
            y.copy_from_slice(&x);
            t = 1.0;
            trace.push(f_x);
        }
    }
    (
        x,
        FitReport {
            iterations,
            converged,
            objective_trace: trace,
        },
    )
}

/// Smallest L1 strength at which the intercept-only model is optimal:
/// the largest absolute feature score of the null model on standardized
/// features.
pub fn critical_l1_strength(data: &LabeledFeatures, feature_map: FeatureMap) -> f64 {
    let design = StandardizedDesign::new(data, feature_map);
    let counts = data.class_counts();
    let m = data.len() as f64;
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
    let dim = design.dim;
    let mut best = 0.0f64;
    for c in 0..data.num_classes {
        for j in 0..dim {
            let mut g = 0.0;
            for (row, &y) in design.z.chunks_exact(dim).zip(&design.labels) {
                let r = freqs[c] - if y == c { 1.0 } else { 0.0 };
                g += r * row[j];
            }
            best = best.max((g / m).abs());
        }
    }
    best
}

/// Fits a softmax regression over all classes of `data`.
pub fn fit_multinomial(data: &LabeledFeatures, opts: &FitOptions) -> Result<ClassifierModel> {
    opts.validate()?;
    let design = StandardizedDesign::new(data, opts.feature_map);
    let loss = MultinomialLoss::new(&design);
    let (params, report) = minimize_l1(&loss, opts);
    let coefficients = design.to_raw_scale(data.num_classes, &params);
    finish(data, opts, coefficients, report)
}

/// Fits a two-class logistic regression. Equivalent to [`fit_multinomial`]
/// with two classes; class 0's coefficient row is fixed at zero.
pub fn fit_binary(data: &LabeledFeatures, opts: &FitOptions) -> Result<ClassifierModel> {
    opts.validate()?;
    if data.num_classes != 2 {
        return Err(Error::InvalidInput(format!(
            "binary fit needs two classes, got {}",
            data.num_classes
        )));
    }
    let design = StandardizedDesign::new(data, opts.feature_map);
    let loss = BinaryLoss::new(&design);
    let (params, report) = minimize_l1(&loss, opts);
    let beta = design.to_raw_scale(1, &params);
    let mut coefficients = vec![0.0; beta.len()];
    coefficients.extend(beta);
    finish(data, opts, coefficients, report)
}

fn finish(data: &LabeledFeatures, opts: &FitOptions, coefficients: Vec<f64>, report: FitReport) -> Result<ClassifierModel> {
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("optimizer produced non-finite coefficients".into()));
    }
    Ok(ClassifierModel {
        num_classes: data.num_classes,
        input_dim: data.dim,
        feature_map: opts.feature_map,
        coefficients,
        l1_strength: opts.l1_strength,
        class_counts: data.class_counts(),
        report,
    })
}
