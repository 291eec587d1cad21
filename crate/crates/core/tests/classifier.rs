use lfpmc_core::classifier::{
    fit_binary, fit_multinomial, BinaryLoss, FeatureMap, FitOptions, LabeledFeatures, MultinomialLoss, SmoothLoss,
    StandardizedDesign,
};
use lfpmc_core::{Purpose, SeedTree};
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_classes(means: &[f64], per_class: usize, dim: usize, seed: u64) -> LabeledFeatures {
    let tree = SeedTree::new(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, &m) in means.iter().enumerate() {
        let mut rng = tree.stream(Purpose::Test, c as u64, 0);
        for _ in 0..per_class {
            rows.push((0..dim).map(|j| m * (j + 1) as f64 + rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
            labels.push(c);
        }
    }
    LabeledFeatures::new(&rows, labels, means.len()).unwrap()
}

/// Central differences with step `1e-5`, compared per component with a
/// relative tolerance of `1e-4` (floored at `1e-3` in absolute scale so
/// that vanishing components do not divide by zero).
fn check_gradient(loss: &dyn SmoothLoss, seed: u64) {
    let mut rng = SeedTree::new(seed).stream(Purpose::Test, 99, 0);
    let n = loss.num_params();
    for point in 0..5 {
        let params: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut grad = vec![0.0; n];
        let value = loss.value_and_gradient(&params, &mut grad);
        assert!((value - loss.value(&params)).abs() <= 1e-12 * value.abs().max(1.0));
        for k in 0..n {
            let h = 1e-5;
            let mut up = params.clone();
            let mut down = params.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (loss.value(&up) - loss.value(&down)) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-3);
            assert!(rel < 1e-4, "point {point} param {k}: analytic {} vs numeric {fd}", grad[k]);
        }
    }
}

#[test]
fn multinomial_gradient_matches_finite_differences() {
    let data = gaussian_classes(&[-1.0, 0.0, 0.5, 2.0], 40, 3, 1);
    for map in [FeatureMap::Linear, FeatureMap::Quadratic] {
        let design = StandardizedDesign::new(&data, map);
        check_gradient(&MultinomialLoss::new(&design), 2);
    }
}

#[test]
fn binary_gradient_matches_finite_differences() {
    let data = gaussian_classes(&[-0.5, 1.0], 60, 2, 3);
    let design = StandardizedDesign::new(&data, FeatureMap::Linear);
    check_gradient(&BinaryLoss::new(&design), 4);
}

#[test]
fn recovers_the_bayes_posterior_of_two_gaussians() {
    // N(0, 1) against N(2, 1) with equal counts: P(class 1 | x) = σ(2x − 2).
    let data = gaussian_classes(&[0.0, 2.0], 10_000, 1, 5);
    let model = fit_binary(&data, &FitOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..=60 {
        let x = -2.0 + 0.1 * i as f64;
        let exact = 1.0 / (1.0 + (-(2.0 * x - 2.0)).exp());
        worst = worst.max((model.predict_proba(&[x])[1] - exact).abs());
    }
    assert!(worst < 0.05, "largest deviation {worst}");
}

#[test]
fn internal_standardization_matches_external() {
    let data = gaussian_classes(&[-1.0, 0.3, 1.5], 80, 3, 6);
    let dim = data.dim();
    let n = data.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| (0..data.len()).map(|i| data.row(i)[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..dim)
        .map(|j| ((0..data.len()).map(|i| (data.row(i)[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let standardize = |x: &[f64]| x.iter().enumerate().map(|(j, v)| (v - mean[j]) / sd[j]).collect::<Vec<f64>>();
    let rows: Vec<Vec<f64>> = (0..data.len()).map(|i| standardize(data.row(i))).collect();
    let external = LabeledFeatures::new(&rows, data.labels().to_vec(), 3).unwrap();

    let opts = FitOptions {
        l1_strength: 0.01,
        max_iterations: 5000,
        tolerance: 1e-14,
        ..FitOptions::default()
    };
    let raw_model = fit_multinomial(&data, &opts).unwrap();
    let std_model = fit_multinomial(&external, &opts).unwrap();
    let mut rng = SeedTree::new(7).stream(Purpose::Test, 0, 0);
    for _ in 0..50 {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect();
        let a = raw_model.predict_proba(&x);
        let b = std_model.predict_proba(&standardize(&x));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }
}
