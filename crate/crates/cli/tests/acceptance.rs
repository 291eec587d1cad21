//! The acceptance suite: one test per criterion, each printing a single
//! `PASS`/`FAIL` line. Run it with
//! `cargo test -p lfpmc-cli --test acceptance -- --test-threads=1`.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use lfpmc_cli::manifest::{manifest_value, parse_manifest};
use lfpmc_core::classifier::{
    fit_binary, BinaryLoss, FeatureMap, FitOptions, LabeledFeatures, MultinomialLoss, SmoothLoss, StandardizedDesign,
};
use lfpmc_core::evaluation::{
    budget_comparison_study, median, method_label, paired_t_statistic, pmc_convergence_study, run_replicate_study,
    Benchmark, KlDirection, MetricTable, ReplicateStudy, StudyMethod, SMC_ABC_LABEL,
};
use lfpmc_core::models::{simulate_summaries, BoxPrior, GaussianModel, SimulatorModel, SummaryVector};
use lfpmc_core::samplers::{PmcConfig, SmcAbcConfig};
use lfpmc_core::weighting::{exact_weights, ratio_from_classifier, EstimatorInput, LfireEstimator, McPmcEstimator, WeightEstimator};
use lfpmc_core::{ExactEstimator, ParameterVector, Purpose, SeedTree};

#[path = "../../core/tests/properties.rs"]
mod properties;

/// Criteria run one at a time so that the timing criterion measures an
/// otherwise idle process.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the criterion's line outside the test harness's capture, then
/// fails the test if the criterion failed.
fn report(number: u32, name: &str, pass: bool, details: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {number} [{name}]: {verdict} ({details})");
    let _ = out.flush();
    assert!(pass, "criterion {number} failed: {details}");
}

fn accounting_ok(table: &MetricTable) -> bool {
    table.failures.is_empty() && table.trace_simulator_calls == table.simulator_calls
}

#[test]
fn criterion_1_weight_accuracy_ordering() {
    let _guard = serial();
    let study = ReplicateStudy {
        num_datasets: 20,
        seed: 101,
        benchmark: Benchmark::standard(),
        particle_box: BoxPrior::cube(5, -5.0, 5.0).unwrap(),
        particle_counts: vec![10, 25],
        sims_per_particle: 100,
        methods: vec![
            StudyMethod::new("mcpmc", McPmcEstimator::default()),
            StudyMethod::new("lfire", LfireEstimator::default()),
        ],
        kl_direction: KlDirection::ExactToApprox,
    };
    let table = run_replicate_study(&study);
    let mut pass = accounting_ok(&table);
    let mut details = Vec::new();
    for n in [10, 25] {
        let a = table.column(&method_label("mcpmc", n), "kl");
        let b = table.column(&method_label("lfire", n), "kl");
        let t = paired_t_statistic(&a, &b).unwrap();
        let p = t.two_sided_p_value();
        let (ma, mb) = (median(&a), median(&b));
        pass &= a.len() == 20 && ma < mb && t.t < 0.0 && p < 0.05;
        details.push(format!("N={n}: median KL {ma:.4} vs {mb:.4}, t={:.2}, p={p:.2e}", t.t));
    }
    report(1, "MC PMC weights closer to exact than LFIRE", pass, &details.join("; "));
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn criterion_2_classifier_cost_scaling() {
    let _guard = serial();
    let model = GaussianModel::benchmark();
    let bench = Benchmark::standard();
    let particle_box = BoxPrior::cube(5, -5.0, 5.0).unwrap();
    let observed = bench.observe(&SeedTree::new(202));
    let observed_summary = model.summarize(&observed);
    let m = 50;
    // A fixed marginal sample keeps each LFIRE fit the same size as N grows.
    let lfire = LfireEstimator {
        marginal_sims: Some(500),
        ..LfireEstimator::default()
    };
    let counts = [10usize, 20, 40, 80];
    let (mut mc_ms, mut lf_ms) = (Vec::new(), Vec::new());
    for &n in &counts {
        let tree = SeedTree::new(203).child(Purpose::Replicate, n as u64);
        let particles: Vec<ParameterVector> =
            (0..n).map(|i| particle_box.sample(&mut tree.stream(Purpose::ParticleSet, 0, i as u64))).collect();
        let sims: Vec<Vec<SummaryVector>> = particles
            .iter()
            .enumerate()
            .map(|(i, p)| simulate_summaries(&model, p, m, 1, &mut tree.stream(Purpose::Simulate, 0, i as u64)))
            .collect();
        let marginal: Vec<SummaryVector> = (0..500)
            .map(|j| {
                let theta = bench.prior.sample(&mut tree.stream(Purpose::MarginalPrior, 0, j));
                model.summarize(&model.simulate(&theta, 1, &mut tree.stream(Purpose::MarginalSimulate, 0, j)))
            })
            .collect();
        let input = EstimatorInput {
            particles: &particles,
            sims: &sims,
            marginal_sims: &marginal,
            observed: &observed,
            observed_summary: &observed_summary,
            prior: &bench.prior,
            proposal: &particle_box,
        };
        // Fastest of three repetitions, the least disturbed measurement.
        let fastest = |e: &dyn WeightEstimator| {
            (0..3)
                .map(|_| e.estimate(&input).unwrap().fit_time.as_secs_f64() * 1e3)
                .fold(f64::INFINITY, f64::min)
        };
        mc_ms.push(fastest(&McPmcEstimator::default()));
        lf_ms.push(fastest(&lfire));
    }
    let xs: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    let (mc, lf) = (loglog_slope(&xs, &mc_ms), loglog_slope(&xs, &lf_ms));
    let details = format!(
        "MC PMC slope {mc:.2} (ms {:?}), LFIRE slope {lf:.2} (ms {:?})",
        mc_ms.iter().map(|v| v.round()).collect::<Vec<_>>(),
        lf_ms.iter().map(|v| v.round()).collect::<Vec<_>>()
    );
    report(2, "fit cost: MC PMC superlinear, LFIRE near linear", mc >= 1.5 && lf <= 1.3, &details);
}

#[test]
fn criterion_3_pmc_convergence() {
    let _guard = serial();
    let cfg = PmcConfig {
        num_particles: 50,
        sims_per_particle: 200,
        max_iterations: 10,
        ..PmcConfig::default()
    };
    let methods = vec![
        StudyMethod::new("exact", ExactEstimator { model: GaussianModel::benchmark() }),
        StudyMethod::new("mcpmc", McPmcEstimator::default()),
        StudyMethod::new("lfire", LfireEstimator::default()),
    ];
    let table = pmc_convergence_study(10, 303, &Benchmark::standard(), &cfg, &methods);
    let exact_first = table.column("exact", "mse_iter_1");
    let exact_final = table.column("exact", "final_mse");
    let improved = exact_first.iter().zip(&exact_final).filter(|(a, b)| b < a).count();
    let (e, mc, lf) = (median(&exact_final), median(&table.column("mcpmc", "final_mse")), median(&table.column("lfire", "final_mse")));
    let a = exact_final.len() == 10 && improved >= 9;
    let b = mc <= lf;
    let c = mc <= 2.0 * e;
    let details = format!(
        "(a) oracle improved in {improved}/10: {}; (b) median final MSE MC PMC {mc:.3} vs LFIRE {lf:.3}: {}; (c) vs 2x oracle {:.3}: {}",
        verdict(a),
        verdict(b),
        2.0 * e,
        verdict(c)
    );
    report(3, "PMC convergence", a && b && c && accounting_ok(&table), &details);
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "not met"
    }
}

#[test]
fn criterion_4_budget_matched_comparison() {
    let _guard = serial();
    // MC PMC needs 20-25 iterations to leave the prior region at this
    // budget; its estimate pools the last ten weighted means.
    let pmc = PmcConfig {
        num_particles: 50,
        sims_per_particle: 100,
        max_iterations: 40,
        stop_window: 10,
        stop_threshold: 0.02,
        ..PmcConfig::default()
    };
    let method = StudyMethod::new("mcpmc", McPmcEstimator::default());
    let table = budget_comparison_study(10, 404, &Benchmark::standard(), &pmc, &method, &SmcAbcConfig::default());
    let sims_mc = median(&table.column("mcpmc", "total_sims"));
    let sims_abc = median(&table.column(SMC_ABC_LABEL, "total_sims"));
    let rmse_mc = median(&table.column("mcpmc", "rmse_truth"));
    let rmse_abc = median(&table.column(SMC_ABC_LABEL, "rmse_truth"));
    let budget_ok = sims_mc <= sims_abc;
    let pass = accounting_ok(&table) && table.column("mcpmc", "rmse_truth").len() == 10 && (!budget_ok || rmse_mc <= 1.1 * rmse_abc);
    let details = format!(
        "median sims MC PMC {sims_mc} vs SMC ABC {sims_abc}; median RMSE {rmse_mc:.3} vs 1.1 x {rmse_abc:.3} = {:.3}",
        1.1 * rmse_abc
    );
    report(4, "budget-matched accuracy", pass, &details);
}

/// `N(0, 1)` rows labelled 0 and `N(2, 1)` rows labelled 1.
fn two_gaussians(per_class: usize, seed: u64) -> LabeledFeatures {
    let model = GaussianModel::new(1);
    let tree = SeedTree::new(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, mean) in [0.0, 2.0].into_iter().enumerate() {
        let data = model.simulate(&ParameterVector::from([mean]), per_class, &mut tree.stream(Purpose::Test, c as u64, 0));
        rows.extend(data.rows().map(|r| r.to_vec()));
        labels.extend(std::iter::repeat_n(c, per_class));
    }
    LabeledFeatures::new(&rows, labels, 2).unwrap()
}

/// Largest relative gap between the analytic gradient and central
/// differences (step 1e-5, relative to max(|fd|, 1e-3)).
fn gradient_gap(loss: &dyn SmoothLoss, seed: u64) -> f64 {
    let tree = SeedTree::new(seed);
    let n = loss.num_params();
    let cube = BoxPrior::cube(n, -1.5, 1.5).unwrap();
    let mut worst: f64 = 0.0;
    for point in 0..5 {
        let params = cube.sample(&mut tree.stream(Purpose::Test, point, 0)).into_inner();
        let mut grad = vec![0.0; n];
        loss.value_and_gradient(&params, &mut grad);
        for k in 0..n {
            let (mut up, mut down) = (params.clone(), params.clone());
            up[k] += 1e-5;
            down[k] -= 1e-5;
            let fd = (loss.value(&up) - loss.value(&down)) / 2e-5;
            worst = worst.max((grad[k] - fd).abs() / fd.abs().max(1e-3));
        }
    }
    worst
}

#[test]
fn criterion_5_oracle_identities() {
    let _guard = serial();
    let start = Instant::now();
    let model = GaussianModel::benchmark();

    // Exact weights against the flat-prior posterior over the particles.
    let mut posterior_gap: f64 = 0.0;
    for seed in 0..5 {
        let observed = Benchmark::standard().observe(&SeedTree::new(500 + seed));
        let x0 = observed.row(0).to_vec();
        let particle_box = BoxPrior::cube(5, -5.0, 5.0).unwrap();
        let tree = SeedTree::new(510 + seed);
        let particles: Vec<ParameterVector> =
            (0..40).map(|i| particle_box.sample(&mut tree.stream(Purpose::ParticleSet, 0, i))).collect();
        let w = exact_weights(&model, &particles, &observed, &Benchmark::standard().prior, &particle_box)
            .unwrap()
            .normalized()
            .unwrap();
        let q: Vec<f64> = particles
            .iter()
            .map(|p| (-0.5 * p.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).exp())
            .collect();
        let total: f64 = q.iter().sum();
        for (wi, qi) in w.iter().zip(&q) {
            posterior_gap = posterior_gap.max((wi - qi / total).abs());
        }
    }

    let half = 0.5f64.ln();
    let ratio_gap = (ratio_from_classifier(half, half, 0.5).exp() - 1.0)
        .abs()
        .max((ratio_from_classifier(half, half, 1.0 / 3.0).exp() - 2.0).abs());

    let data = two_gaussians(60, 520);
    let linear = StandardizedDesign::new(&data, FeatureMap::Linear);
    let quadratic = StandardizedDesign::new(&data, FeatureMap::Quadratic);
    let grad_gap = gradient_gap(&MultinomialLoss::new(&linear), 521)
        .max(gradient_gap(&MultinomialLoss::new(&quadratic), 522))
        .max(gradient_gap(&BinaryLoss::new(&linear), 523));

    let fitted = fit_binary(&two_gaussians(10_000, 524), &FitOptions::default()).unwrap();
    let bayes_gap = (0..=60)
        .map(|i| {
            let x = -2.0 + 0.1 * i as f64;
            (fitted.predict_proba(&[x])[1] - 1.0 / (1.0 + (2.0 - 2.0 * x).exp())).abs()
        })
        .fold(0.0, f64::max);

    let elapsed = start.elapsed().as_secs_f64();
    let pass = posterior_gap < 1e-10 && ratio_gap < 1e-12 && grad_gap < 1e-4 && bayes_gap < 0.05 && elapsed < 60.0;
    let details = format!(
        "posterior {posterior_gap:.1e} < 1e-10, ratio {ratio_gap:.1e} < 1e-12, gradient {grad_gap:.1e} < 1e-4, Bayes {bayes_gap:.3} < 0.05, {elapsed:.1}s"
    );
    report(5, "oracle identities", pass, &details);
}

const SINGLE_RUN: &str = "\
[experiment]
kind = single-run
seed = 6

[methods]
list = mcpmc, lfire, exact, smc_abc

[pmc]
particles = 40
sims_per_particle = 10
iterations = 4

[smc_abc]
particles = 60
schedule = 12, 9, 7
";

const STUDY: &str = "\
[experiment]
kind = weight-comparison
seed = 7
replicates = 3

[methods]
list = mcpmc, lfire

[pmc]
sims_per_particle = 20

[weights]
particle_counts = 5, 8
";

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_6_determinism_and_accounting() {
    let _guard = serial();
    let tmp = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut balanced = true;
    let mut compared = 0;
    for (name, text) in [("single", SINGLE_RUN), ("study", STUDY)] {
        let config = tmp.path().join(format!("{name}.conf"));
        fs::write(&config, text).unwrap();
        let mut runs = Vec::new();
        for threads in ["1", "2", "4"] {
            let out = tmp.path().join(format!("{name}-{threads}"));
            let status = Command::new(env!("CARGO_BIN_EXE_lfpmc"))
                .args(["run", config.to_str().unwrap(), "--threads", threads, "--out-dir", out.to_str().unwrap()])
                .output()
                .unwrap()
                .status;
            assert!(status.success(), "{name} at {threads} threads");
            let pairs = parse_manifest(&fs::read_to_string(out.join("manifest.txt")).unwrap());
            balanced &= manifest_value(&pairs, "total_simulator_calls") == manifest_value(&pairs, "simulator_counter");
            runs.push(csv_files(&out));
        }
        compared += runs[0].len();
        identical &= !runs[0].is_empty() && runs.iter().all(|r| r == &runs[0]);
    }
    let details = format!("{compared} CSV files identical at 1, 2 and 4 threads: {identical}; manifest totals match counter: {balanced}");
    report(6, "determinism and accounting", identical && balanced, &details);
}

#[test]
fn criterion_7_property_suites() {
    let _guard = serial();
    let suites = properties::suites();
    let mut failed = Vec::new();
    for (name, run) in &suites {
        if std::panic::catch_unwind(run).is_err() {
            failed.push(*name);
        }
    }
    let details = if failed.is_empty() {
        format!("{} suites x 10^4 cases, fixed seed", suites.len())
    } else {
        format!("failed: {failed:?}")
    };
    report(7, "property suites", failed.is_empty(), &details);
}
