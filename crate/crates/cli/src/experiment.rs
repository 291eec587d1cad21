//! Runs a validated [`ExperimentConfig`] and writes its artifacts.
//!
//! CSV outputs are a pure function of the configuration and seed. Wall-clock
//! measurements go to `timings.txt`, and the manifest carries the only
//! timestamp.

use std::fs;
use std::path::{Path, PathBuf};

use lfpmc_core::evaluation::{
    aggregate_rows, budget_comparison_study, median, method_label, paired_t_statistic, pmc_convergence_study,
    run_replicate_study, Benchmark, MetricRow, MetricTable, ReplicateStudy, StudyMethod, SMC_ABC_LABEL,
};
use lfpmc_core::models::{BoxPrior, CountingSimulator};
use lfpmc_core::samplers::{run_pmc, run_smc_abc, Aborted, PmcConfig, Problem, SamplerTrace, SmcAbcConfig};
use lfpmc_core::weighting::{ExactEstimator, LfireEstimator, McPmcEstimator};
use lfpmc_core::{ParameterVector, Purpose, SeedTree};

use crate::config::{ExperimentConfig, ExperimentKind, MethodKind};
use crate::error::CliError;
use crate::manifest::Manifest;
use crate::svg;

/// What a finished experiment left behind.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

/// Builds the estimator for a PMC method.
pub fn study_method(cfg: &ExperimentConfig, benchmark: &Benchmark, method: MethodKind) -> Option<StudyMethod> {
    let label = method.name();
    match method {
        MethodKind::Mcpmc => Some(StudyMethod::new(label, McPmcEstimator { fit: cfg.fit.clone() })),
        MethodKind::Lfire => Some(StudyMethod::new(
            label,
            LfireEstimator {
                fit: cfg.fit.clone(),
                marginal_sims: cfg.lfire_marginal_sims,
            },
        )),
        MethodKind::Exact => Some(StudyMethod::new(label, ExactEstimator { model: benchmark.model() })),
        MethodKind::SmcAbc => None,
    }
}

pub fn benchmark(cfg: &ExperimentConfig) -> Result<Benchmark, CliError> {
    let d = cfg.true_mean.len();
    let prior = BoxPrior::cube(d, cfg.prior_lower, cfg.prior_upper).map_err(|e| CliError::runtime("prior", e))?;
    Ok(Benchmark {
        true_mean: ParameterVector::new(cfg.true_mean.clone()),
        prior,
    })
}

/// Runs the experiment into `out_dir`, creating it if needed.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary, CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(format!("creating {}", out_dir.display()), e))?;
    let mut writer = Writer {
        dir: out_dir.to_path_buf(),
        manifest: Manifest::new(cfg),
    };
    match cfg.kind {
        ExperimentKind::SingleRun => single_run(cfg, &mut writer)?,
        ExperimentKind::WeightComparison => weight_comparison(cfg, &mut writer)?,
        ExperimentKind::PmcConvergence => pmc_convergence(cfg, &mut writer)?,
        ExperimentKind::SmcVsMcpmc => smc_vs_mcpmc(cfg, &mut writer)?,
    }
    let manifest = writer.manifest.clone();
    writer.write_text("manifest.txt", &manifest.render())?;
    if manifest.total_simulator_calls != manifest.simulator_counter {
        return Err(CliError::Accounting {
            reported: manifest.total_simulator_calls,
            counted: manifest.simulator_counter,
        });
    }
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        manifest,
    })
}

struct Writer {
    dir: PathBuf,
    manifest: Manifest,
}

impl Writer {
    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        if name != "manifest.txt" {
            self.manifest.files.push(name.to_string());
        }
        Ok(())
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write_bytes(name, text.as_bytes())
    }

    fn write_with(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> lfpmc_core::error::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| CliError::runtime(format!("serializing {name}"), e))?;
        self.write_bytes(name, &buf)
    }

    /// Metric, aggregate and timing files of a study, plus its accounting.
    fn write_table(&mut self, experiment: &str, table: &MetricTable) -> Result<(), CliError> {
        if table.rows.is_empty() {
            if let Some((r, e)) = table.failures.first() {
                return Err(CliError::runtime(format!("{experiment}, replicate {r}"), e.clone()));
            }
        }
        self.write_with("metrics.csv", |b| MetricTable::write_csv(&table.rows, b))?;
        // Timing rows stay out of the CSVs so that those are reproducible.
        let aggregate = aggregate_rows(table.rows.iter());
        self.write_with("aggregate.csv", |b| MetricTable::write_aggregate_csv(&aggregate, b))?;
        let mut timings = String::from("replicate\tmethod\tmetric\tvalue\n");
        for row in &table.timings {
            timings.push_str(&format!("{}\t{}\t{}\t{:.3}\n", row.replicate, row.method, row.metric, row.value));
        }
        timings.push_str("\nmethod\tmetric\tmedian\tq25\tq75\n");
        for a in aggregate_rows(table.timings.iter()) {
            timings.push_str(&format!("{}\t{}\t{:.3}\t{:.3}\t{:.3}\n", a.method, a.metric, a.median, a.q25, a.q75));
        }
        self.write_text("timings.txt", &timings)?;
        if !table.failures.is_empty() {
            let mut text = String::from("replicate,error\n");
            for (r, e) in &table.failures {
                text.push_str(&format!("{r},\"{}\"\n", e.to_string().replace('"', "'")));
            }
            self.write_text("failures.csv", &text)?;
        }
        self.manifest.total_simulator_calls += table.trace_simulator_calls;
        self.manifest.simulator_counter += table.simulator_calls;
        self.manifest.failed_replicates = table.failures.iter().map(|(r, _)| *r).collect();
        Ok(())
    }
}

fn single_run(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let bench = benchmark(cfg)?;
    let tree = SeedTree::new(cfg.seed);
    let observed = bench.observe(&tree.child(Purpose::Replicate, 0));
    let model = CountingSimulator::new(bench.model());
    let problem = Problem::new(&model, bench.prior.clone(), observed)
        .map_err(|e| CliError::runtime("single-run", e))?
        .with_truth(bench.true_mean.clone());
    let mut lines = Vec::new();
    let mut timings = String::from("method\titeration\twall_ms\n");
    for &method in &cfg.methods {
        let outcome = match study_method(cfg, &bench, method) {
            Some(m) => run_pmc(&problem, m.estimator.as_ref(), &PmcConfig { seed: cfg.seed, ..cfg.pmc.clone() }),
            None => run_smc_abc(&problem, &SmcAbcConfig { seed: cfg.seed, ..cfg.smc_abc.clone() }),
        };
        let (trace, failure) = match outcome {
            Ok(trace) => (trace, None),
            Err(Aborted { error, trace }) => (trace, Some(error)),
        };
        let name = method.name();
        write_trace(w, name, &trace)?;
        for r in &trace.records {
            timings.push_str(&format!("{name}\t{}\t{}\n", r.iteration, r.wall_ms));
        }
        w.manifest.total_simulator_calls += trace.total_simulator_calls;
        if let Some(error) = failure {
            w.manifest.simulator_counter = model.calls();
            let context = format!("single-run, method {name}, iteration {}", trace.generations.len() + 1);
            return Err(CliError::runtime(context, error));
        }
        let points = trace
            .records
            .iter()
            .filter_map(|r| r.mse_vs_observation.map(|m| (r.iteration as f64, m)))
            .collect();
        lines.push((name.to_string(), points));
    }
    w.write_text("timings.txt", &timings)?;
    w.manifest.simulator_counter = model.calls();
    let chart = svg::line_chart(&lines, "Weighted-mean MSE against the observation", "iteration", "MSE", true)?;
    w.write_text("mse.svg", &chart)
}

fn write_trace(w: &mut Writer, name: &str, trace: &SamplerTrace) -> Result<(), CliError> {
    w.write_with(&format!("{name}_generations.csv"), |b| trace.write_generations_csv(b))?;
    w.write_with(&format!("{name}_records.csv"), |b| trace.write_records_csv(b, false))
}

fn pmc_methods(cfg: &ExperimentConfig, bench: &Benchmark) -> Vec<StudyMethod> {
    cfg.methods.iter().filter_map(|&m| study_method(cfg, bench, m)).collect()
}

/// Series of one metric per method, in the given method order.
fn series(rows: &[MetricRow], methods: &[String], metric: &str) -> Vec<svg::Series> {
    methods
        .iter()
        .map(|m| {
            let values = rows.iter().filter(|r| &r.method == m && r.metric == metric).map(|r| r.value).collect();
            (m.clone(), values)
        })
        .filter(|(_, v): &svg::Series| !v.is_empty())
        .collect()
}

fn weight_comparison(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let bench = benchmark(cfg)?;
    let d = bench.true_mean.dim();
    let study = ReplicateStudy {
        num_datasets: cfg.replicates,
        seed: cfg.seed,
        particle_box: BoxPrior::cube(d, cfg.particle_box.0, cfg.particle_box.1)
            .map_err(|e| CliError::runtime("particle box", e))?,
        benchmark: bench.clone(),
        particle_counts: cfg.particle_counts.clone(),
        sims_per_particle: cfg.pmc.sims_per_particle,
        methods: pmc_methods(cfg, &bench),
        kl_direction: cfg.kl_direction,
    };
    let table = run_replicate_study(&study);
    w.write_table("weight-comparison", &table)?;

    let labels: Vec<String> = cfg
        .particle_counts
        .iter()
        .flat_map(|&n| study.methods.iter().map(move |m| method_label(&m.label, n)))
        .collect();
    if study.methods.len() == 2 {
        w.write_text("significance.csv", &significance(&table, &study, &cfg.particle_counts))?;
    }
    let kl = series(&table.rows, &labels, "kl");
    if !kl.is_empty() {
        w.write_text("kl.svg", &svg::boxplot(&kl, "KL divergence from the exact weights", "KL", true)?)?;
    }
    let fit = series(&table.timings, &labels, "fit_ms");
    if !fit.is_empty() {
        w.write_text("fit_ms.svg", &svg::boxplot(&fit, "Classifier fit time", "milliseconds", true)?)?;
    }
    Ok(())
}

/// Paired t test of per-replicate KL between the two methods at each
/// particle count (first method minus second).
fn significance(table: &MetricTable, study: &ReplicateStudy, counts: &[usize]) -> String {
    let mut out = String::from("particles,method_a,method_b,median_kl_a,median_kl_b,t,dof,p_value\n");
    let (a, b) = (&study.methods[0].label, &study.methods[1].label);
    for &n in counts {
        let ka = table.column(&method_label(a, n), "kl");
        let kb = table.column(&method_label(b, n), "kl");
        let (t, dof, p) = match paired_t_statistic(&ka, &kb) {
            Ok(pt) => (format!("{:?}", pt.t), pt.dof.to_string(), format!("{:?}", pt.two_sided_p_value())),
            Err(_) => ("NaN".into(), String::new(), "NaN".into()),
        };
        out.push_str(&format!("{n},{a},{b},{:?},{:?},{t},{dof},{p}\n", median(&ka), median(&kb)));
    }
    out
}

fn pmc_convergence(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let bench = benchmark(cfg)?;
    let methods = pmc_methods(cfg, &bench);
    let table = pmc_convergence_study(cfg.replicates, cfg.seed, &bench, &cfg.pmc, &methods);
    w.write_table("pmc-convergence", &table)?;

    let aggregate = aggregate_rows(table.rows.iter());
    let lines: Vec<(String, Vec<(f64, f64)>)> = methods
        .iter()
        .map(|m| {
            let mut points: Vec<(f64, f64)> = aggregate
                .iter()
                .filter(|a| a.method == m.label)
                .filter_map(|a| Some((a.metric.strip_prefix("mse_iter_")?.parse::<f64>().ok()?, a.median)))
                .collect();
            points.sort_by(|x, y| x.0.total_cmp(&y.0));
            (m.label.clone(), points)
        })
        .filter(|(_, p)| !p.is_empty())
        .collect();
    if !lines.is_empty() {
        let chart = svg::line_chart(&lines, "Median MSE against the observation", "iteration", "MSE", true)?;
        w.write_text("convergence.svg", &chart)?;
    }
    let labels: Vec<String> = methods.iter().map(|m| m.label.clone()).collect();
    let finals = series(&table.rows, &labels, "final_mse");
    if !finals.is_empty() {
        w.write_text("final_mse.svg", &svg::boxplot(&finals, "Final-iteration MSE", "MSE", true)?)?;
    }
    Ok(())
}

fn smc_vs_mcpmc(cfg: &ExperimentConfig, w: &mut Writer) -> Result<(), CliError> {
    let bench = benchmark(cfg)?;
    let method = study_method(cfg, &bench, MethodKind::Mcpmc).expect("mcpmc is a PMC method");
    let table = budget_comparison_study(cfg.replicates, cfg.seed, &bench, &cfg.pmc, &method, &cfg.smc_abc);
    w.write_table("smc-vs-mcpmc", &table)?;

    let labels = vec![SMC_ABC_LABEL.to_string(), method.label.clone()];
    let rmse = series(&table.rows, &labels, "rmse_truth");
    if !rmse.is_empty() {
        w.write_text("rmse_density.svg", &svg::density_plot(&rmse, "RMSE against the true mean", "RMSE")?)?;
    }
    let sims = series(&table.rows, &labels, "total_sims");
    if !sims.is_empty() {
        let chart = svg::density_plot(&sims, "Total simulator calls", "simulations")?;
        w.write_text("total_sims_density.svg", &chart)?;
    }
    Ok(())
}

/// Renders one boxplot per metric in a metrics CSV, plus a convergence chart
/// when per-iteration MSE rows are present. Returns the files written.
pub fn plot_metrics(csv: &str, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rows = MetricTable::read_csv(csv).map_err(|e| CliError::runtime("reading metrics", e))?;
    let table = MetricTable {
        rows,
        ..Default::default()
    };
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(format!("creating {}", out_dir.display()), e))?;
    let keys = table.keys();
    let mut methods: Vec<String> = Vec::new();
    let mut metrics: Vec<String> = Vec::new();
    for (m, k) in &keys {
        if !methods.contains(m) {
            methods.push(m.clone());
        }
        if !k.starts_with("mse_iter_") && !metrics.contains(k) {
            metrics.push(k.clone());
        }
    }
    let mut written = Vec::new();
    let mut save = |name: String, body: String| -> Result<(), CliError> {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        written.push(path);
        Ok(())
    };
    for metric in &metrics {
        let s = series(&table.rows, &methods, metric);
        if s.is_empty() {
            continue;
        }
        let log = s.iter().flat_map(|(_, v)| v).all(|v| *v > 0.0);
        save(format!("{metric}.svg"), svg::boxplot(&s, metric, metric, log)?)?;
    }
    let aggregate = table.aggregate();
    let lines: Vec<(String, Vec<(f64, f64)>)> = methods
        .iter()
        .map(|m| {
            let mut pts: Vec<(f64, f64)> = aggregate
                .iter()
                .filter(|a| &a.method == m)
                .filter_map(|a| Some((a.metric.strip_prefix("mse_iter_")?.parse::<f64>().ok()?, a.median)))
                .collect();
            pts.sort_by(|x, y| x.0.total_cmp(&y.0));
            (m.clone(), pts)
        })
        .filter(|(_, p)| !p.is_empty())
        .collect();
    if !lines.is_empty() {
        save(
            "convergence.svg".into(),
            svg::line_chart(&lines, "Median MSE against the observation", "iteration", "MSE", true)?,
        )?;
    }
    if written.is_empty() {
        return Err(svg::PlotError::EmptySeries("metrics file has no rows".into()).into());
    }
    Ok(written)
}
