//! Experiment configuration: a sectioned `key = value` text format.
//!
//! ```text
//! [experiment]
//! kind = pmc-convergence
//! seed = 7
//! replicates = 10
//!
//! [pmc]
//! particles = 50
//! sims_per_particle = 200
//! ```
//!
//! Every key has a default, so a document naming only the kind and seed is
//! complete. Unknown sections or keys, duplicate keys and invalid values are
//! all reported together.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use lfpmc_core::classifier::{FeatureMap, FitOptions};
use lfpmc_core::evaluation::KlDirection;
use lfpmc_core::particles::KernelCovariance;
use lfpmc_core::samplers::{PmcConfig, SmcAbcConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    WeightComparison,
    PmcConvergence,
    SmcVsMcpmc,
    SingleRun,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::WeightComparison,
        ExperimentKind::PmcConvergence,
        ExperimentKind::SmcVsMcpmc,
        ExperimentKind::SingleRun,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::WeightComparison => "weight-comparison",
            ExperimentKind::PmcConvergence => "pmc-convergence",
            ExperimentKind::SmcVsMcpmc => "smc-vs-mcpmc",
            ExperimentKind::SingleRun => "single-run",
        }
    }
}

/// Inference methods selectable in `[methods] list`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MethodKind {
    Mcpmc,
    Lfire,
    Exact,
    SmcAbc,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [MethodKind::Mcpmc, MethodKind::Lfire, MethodKind::Exact, MethodKind::SmcAbc];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Mcpmc => "mcpmc",
            MethodKind::Lfire => "lfire",
            MethodKind::Exact => "exact",
            MethodKind::SmcAbc => "smc_abc",
        }
    }
}

fn kl_direction_name(d: KlDirection) -> &'static str {
    match d {
        KlDirection::ExactToApprox => "exact-to-approx",
        KlDirection::ApproxToExact => "approx-to-exact",
    }
}

fn feature_map_name(f: FeatureMap) -> &'static str {
    match f {
        FeatureMap::Linear => "linear",
        FeatureMap::Quadratic => "quadratic",
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replicates: usize,
    pub out_dir: Option<PathBuf>,
    pub true_mean: Vec<f64>,
    pub prior_lower: f64,
    pub prior_upper: f64,
    pub methods: Vec<MethodKind>,
    pub pmc: PmcConfig,
    pub fit: FitOptions,
    /// `None` selects `min(N·M/2, 5000)`.
    pub lfire_marginal_sims: Option<usize>,
    pub smc_abc: SmcAbcConfig,
    pub particle_counts: Vec<usize>,
    pub particle_box: (f64, f64),
    pub kl_direction: KlDirection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::SingleRun,
            seed: 0,
            replicates: 10,
            out_dir: None,
            true_mean: lfpmc_core::models::BENCHMARK_MEAN.to_vec(),
            prior_lower: -20.0,
            prior_upper: 20.0,
            methods: vec![MethodKind::Mcpmc],
            pmc: PmcConfig::default(),
            fit: FitOptions::default(),
            lfire_marginal_sims: None,
            smc_abc: SmcAbcConfig::default(),
            particle_counts: vec![10, 25, 50],
            particle_box: (-5.0, 5.0),
            kl_direction: KlDirection::default(),
        }
    }
}

/// One problem found while reading a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    /// 1-based line, when the problem is tied to one.
    pub line: Option<usize>,
    /// `section.key`, or empty for syntax problems.
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if !self.field.is_empty() {
            write!(f, "{}: ", self.field)?;
        }
        write!(f, "{}", self.message)
    }
}

/// Every problem found in a configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", lines.join("\n"))
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn mentions(&self, field: &str) -> bool {
        self.issues.iter().any(|i| i.field == field)
    }
}

/// Recognized `(section, key)` pairs.
const KEYS: &[(&str, &str)] = &[
    ("experiment", "kind"),
    ("experiment", "seed"),
    ("experiment", "replicates"),
    ("experiment", "out_dir"),
    ("model", "true_mean"),
    ("model", "prior_lower"),
    ("model", "prior_upper"),
    ("methods", "list"),
    ("pmc", "particles"),
    ("pmc", "sims_per_particle"),
    ("pmc", "iterations"),
    ("pmc", "stop_window"),
    ("pmc", "stop_threshold"),
    ("pmc", "kernel_covariance"),
    ("classifier", "l1_strength"),
    ("classifier", "max_iterations"),
    ("classifier", "tolerance"),
    ("classifier", "backtrack"),
    ("classifier", "features"),
    ("lfire", "marginal_sims"),
    ("smc_abc", "particles"),
    ("smc_abc", "schedule"),
    ("smc_abc", "max_attempts"),
    ("smc_abc", "kernel_covariance"),
    ("weights", "particle_counts"),
    ("weights", "particle_box"),
    ("weights", "kl_direction"),
];

struct Entry {
    line: usize,
    value: String,
}

/// Collects typed values and the problems found while converting them.
struct Reader {
    entries: BTreeMap<String, Entry>,
    issues: Vec<ConfigIssue>,
}

impl Reader {
    fn take(&mut self, field: &str) -> Option<(usize, String)> {
        self.entries.remove(field).map(|e| (e.line, e.value))
    }

    fn invalid(&mut self, line: usize, field: &str, message: String) {
        self.issues.push(ConfigIssue {
            line: Some(line),
            field: field.into(),
            message,
        });
    }

    fn parsed<T: std::str::FromStr>(&mut self, field: &str, what: &str, target: &mut T) {
        if let Some((line, raw)) = self.take(field) {
            match raw.parse() {
                Ok(v) => *target = v,
                Err(_) => self.invalid(line, field, format!("expected {what}, found `{raw}`")),
            }
        }
    }

    fn float(&mut self, field: &str, target: &mut f64) {
        self.parsed(field, "a number", target);
    }

    fn count(&mut self, field: &str, target: &mut usize) {
        self.parsed(field, "a non-negative integer", target);
    }

    fn list<T: std::str::FromStr>(&mut self, field: &str, what: &str, target: &mut Vec<T>) {
        if let Some((line, raw)) = self.take(field) {
            let mut out = Vec::new();
            for item in raw.split(',') {
                match item.trim().parse() {
                    Ok(v) => out.push(v),
                    Err(_) => {
                        self.invalid(line, field, format!("expected a comma-separated list of {what}, found `{raw}`"));
                        return;
                    }
                }
            }
            *target = out;
        }
    }

    fn named<T: Copy>(&mut self, field: &str, options: &[(T, &str)], target: &mut T) {
        if let Some((line, raw)) = self.take(field) {
            match options.iter().find(|(_, name)| *name == raw) {
                Some((v, _)) => *target = *v,
                None => {
                    let names: Vec<&str> = options.iter().map(|(_, n)| *n).collect();
                    self.invalid(line, field, format!("expected one of {}, found `{raw}`", names.join(", ")));
                }
            }
        }
    }
}

fn kernel_options() -> Vec<(KernelCovariance, &'static str)> {
    KernelCovariance::ALL.iter().map(|k| (*k, k.name())).collect()
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut issues = Vec::new();
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let mut section: Option<String> = None;
    for (index, raw_line) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut syntax = |message: String| {
            issues.push(ConfigIssue {
                line: Some(line),
                field: String::new(),
                message,
            })
        };
        if let Some(name) = content.strip_prefix('[') {
            match name.strip_suffix(']') {
                Some(name) if KEYS.iter().any(|(s, _)| *s == name.trim()) => section = Some(name.trim().to_string()),
                Some(name) => {
                    syntax(format!("unknown section `[{}]`", name.trim()));
                    section = None;
                }
                None => syntax(format!("malformed section header `{content}`")),
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            syntax(format!("expected `key = value`, found `{content}`"));
            continue;
        };
        let Some(sec) = section.as_deref() else {
            syntax(format!("key `{}` appears before any section header", key.trim()));
            continue;
        };
        let key = key.trim();
        let field = format!("{sec}.{key}");
        if !KEYS.contains(&(sec, key)) {
            issues.push(ConfigIssue {
                line: Some(line),
                field,
                message: "unknown key".into(),
            });
            continue;
        }
        if let Some(first) = entries.get(&field) {
            issues.push(ConfigIssue {
                line: Some(line),
                field,
                message: format!("duplicate key (first set on line {})", first.line),
            });
            continue;
        }
        entries.insert(
            field,
            Entry {
                line,
                value: value.trim().to_string(),
            },
        );
    }

    let mut r = Reader { entries, issues };
    let mut cfg = ExperimentConfig::default();
    let kinds: Vec<(ExperimentKind, &str)> = ExperimentKind::ALL.iter().map(|k| (*k, k.name())).collect();
    if r.entries.contains_key("experiment.kind") {
        r.named("experiment.kind", &kinds, &mut cfg.kind);
    } else {
        r.issues.push(ConfigIssue {
            line: None,
            field: "experiment.kind".into(),
            message: "required key is missing".into(),
        });
    }
    r.parsed("experiment.seed", "an unsigned 64-bit integer", &mut cfg.seed);
    r.count("experiment.replicates", &mut cfg.replicates);
    if let Some((_, dir)) = r.take("experiment.out_dir") {
        cfg.out_dir = Some(PathBuf::from(dir));
    }
    r.list("model.true_mean", "numbers", &mut cfg.true_mean);
    r.float("model.prior_lower", &mut cfg.prior_lower);
    r.float("model.prior_upper", &mut cfg.prior_upper);
    if let Some((line, raw)) = r.take("methods.list") {
        let mut methods = Vec::new();
        for name in raw.split(',').map(str::trim) {
            match MethodKind::ALL.iter().find(|m| m.name() == name) {
                Some(m) => methods.push(*m),
                None => r.invalid(line, "methods.list", format!("unknown method `{name}`")),
            }
        }
        cfg.methods = methods;
    }
    r.count("pmc.particles", &mut cfg.pmc.num_particles);
    r.count("pmc.sims_per_particle", &mut cfg.pmc.sims_per_particle);
    r.count("pmc.iterations", &mut cfg.pmc.max_iterations);
    r.count("pmc.stop_window", &mut cfg.pmc.stop_window);
    r.float("pmc.stop_threshold", &mut cfg.pmc.stop_threshold);
    r.named("pmc.kernel_covariance", &kernel_options(), &mut cfg.pmc.kernel_covariance);
    r.float("classifier.l1_strength", &mut cfg.fit.l1_strength);
    r.count("classifier.max_iterations", &mut cfg.fit.max_iterations);
    r.float("classifier.tolerance", &mut cfg.fit.tolerance);
    r.float("classifier.backtrack", &mut cfg.fit.backtrack);
    r.named(
        "classifier.features",
        &[(FeatureMap::Linear, "linear"), (FeatureMap::Quadratic, "quadratic")],
        &mut cfg.fit.feature_map,
    );
    if let Some((line, raw)) = r.take("lfire.marginal_sims") {
        if raw == "auto" {
            cfg.lfire_marginal_sims = None;
        } else {
            match raw.parse() {
                Ok(v) => cfg.lfire_marginal_sims = Some(v),
                Err(_) => r.invalid(line, "lfire.marginal_sims", format!("expected `auto` or an integer, found `{raw}`")),
            }
        }
    }
    r.count("smc_abc.particles", &mut cfg.smc_abc.num_particles);
    r.list("smc_abc.schedule", "numbers", &mut cfg.smc_abc.schedule);
    r.parsed("smc_abc.max_attempts", "a positive integer", &mut cfg.smc_abc.max_attempts_per_particle);
    r.named("smc_abc.kernel_covariance", &kernel_options(), &mut cfg.smc_abc.kernel_covariance);
    r.list("weights.particle_counts", "integers", &mut cfg.particle_counts);
    let mut bounds = vec![cfg.particle_box.0, cfg.particle_box.1];
    r.list("weights.particle_box", "numbers", &mut bounds);
    r.named(
        "weights.kl_direction",
        &[
            (KlDirection::ExactToApprox, "exact-to-approx"),
            (KlDirection::ApproxToExact, "approx-to-exact"),
        ],
        &mut cfg.kl_direction,
    );
    if bounds.len() == 2 {
        cfg.particle_box = (bounds[0], bounds[1]);
    } else {
        r.issues.push(ConfigIssue {
            line: None,
            field: "weights.particle_box".into(),
            message: format!("expected two numbers `lower, upper`, found {}", bounds.len()),
        });
    }

    let mut issues = r.issues;
    issues.extend(validate(&cfg));
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { issues })
    }
}

/// Checks cross-field constraints and ranges.
pub fn validate(cfg: &ExperimentConfig) -> Vec<ConfigIssue> {
    let mut issues = Vec::new();
    let mut check = |ok: bool, field: &str, message: &str| {
        if !ok {
            issues.push(ConfigIssue {
                line: None,
                field: field.into(),
                message: message.into(),
            });
        }
    };
    check(cfg.replicates >= 1, "experiment.replicates", "must be at least 1");
    check(!cfg.true_mean.is_empty(), "model.true_mean", "must not be empty");
    check(cfg.true_mean.iter().all(|v| v.is_finite()), "model.true_mean", "entries must be finite");
    check(
        cfg.prior_lower.is_finite() && cfg.prior_upper.is_finite() && cfg.prior_lower < cfg.prior_upper,
        "model.prior_lower",
        "prior bounds must be finite with lower < upper",
    );
    check(
        cfg.true_mean.iter().all(|v| *v >= cfg.prior_lower && *v <= cfg.prior_upper),
        "model.true_mean",
        "must lie inside the prior box",
    );
    check(!cfg.methods.is_empty(), "methods.list", "must name at least one method");
    let mut sorted = cfg.methods.clone();
    sorted.sort();
    sorted.dedup();
    check(sorted.len() == cfg.methods.len(), "methods.list", "must not repeat a method");
    check(cfg.pmc.num_particles >= 2, "pmc.particles", "must be at least 2");
    check(cfg.pmc.sims_per_particle >= 1, "pmc.sims_per_particle", "must be at least 1");
    check(cfg.pmc.max_iterations >= 2, "pmc.iterations", "must be at least 2");
    check(cfg.pmc.stop_window >= 2, "pmc.stop_window", "must be at least 2");
    check(cfg.pmc.stop_threshold >= 0.0, "pmc.stop_threshold", "must be >= 0");
    check(
        cfg.fit.l1_strength >= 0.0 && cfg.fit.l1_strength.is_finite(),
        "classifier.l1_strength",
        "must be finite and >= 0",
    );
    check(cfg.fit.max_iterations >= 1, "classifier.max_iterations", "must be at least 1");
    check(cfg.fit.tolerance > 0.0, "classifier.tolerance", "must be > 0");
    check(
        cfg.fit.backtrack > 0.0 && cfg.fit.backtrack < 1.0,
        "classifier.backtrack",
        "must lie strictly between 0 and 1",
    );
    check(cfg.lfire_marginal_sims != Some(0), "lfire.marginal_sims", "must be at least 1");
    check(cfg.smc_abc.num_particles >= 2, "smc_abc.particles", "must be at least 2");
    check(!cfg.smc_abc.schedule.is_empty(), "smc_abc.schedule", "must not be empty");
    check(
        cfg.smc_abc.schedule.iter().all(|e| *e > 0.0),
        "smc_abc.schedule",
        "tolerances must be > 0",
    );
    check(
        cfg.smc_abc.schedule.windows(2).all(|w| w[1] <= w[0]),
        "smc_abc.schedule",
        "must be non-increasing",
    );
    check(cfg.smc_abc.max_attempts_per_particle >= 1, "smc_abc.max_attempts", "must be at least 1");
    check(!cfg.particle_counts.is_empty(), "weights.particle_counts", "must not be empty");
    check(cfg.particle_counts.iter().all(|n| *n >= 2), "weights.particle_counts", "each count must be at least 2");
    check(
        cfg.particle_box.0.is_finite() && cfg.particle_box.1.is_finite() && cfg.particle_box.0 < cfg.particle_box.1,
        "weights.particle_box",
        "must be finite with lower < upper",
    );
    check(
        cfg.particle_box.0 >= cfg.prior_lower && cfg.particle_box.1 <= cfg.prior_upper,
        "weights.particle_box",
        "must lie inside the prior box",
    );
    match cfg.kind {
        ExperimentKind::WeightComparison => check(
            cfg.methods.iter().all(|m| matches!(m, MethodKind::Mcpmc | MethodKind::Lfire)),
            "methods.list",
            "weight-comparison compares mcpmc and lfire against the exact weights",
        ),
        ExperimentKind::PmcConvergence => check(
            !cfg.methods.contains(&MethodKind::SmcAbc),
            "methods.list",
            "pmc-convergence runs PMC estimators only",
        ),
        ExperimentKind::SmcVsMcpmc => check(
            cfg.methods.len() == 2 && cfg.methods.contains(&MethodKind::SmcAbc) && cfg.methods.contains(&MethodKind::Mcpmc),
            "methods.list",
            "smc-vs-mcpmc needs exactly `smc_abc, mcpmc`",
        ),
        ExperimentKind::SingleRun => {}
    }
    issues
}

fn join<T: fmt::Debug>(values: &[T]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}

/// Writes `cfg` as a document that [`parse_config`] reads back unchanged.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut section = |name: &str, pairs: Vec<(&str, String)>| {
        out.push_str(&format!("[{name}]\n"));
        for (k, v) in pairs {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push('\n');
    };
    let mut experiment = vec![
        ("kind", cfg.kind.name().to_string()),
        ("seed", cfg.seed.to_string()),
        ("replicates", cfg.replicates.to_string()),
    ];
    if let Some(dir) = &cfg.out_dir {
        experiment.push(("out_dir", dir.display().to_string()));
    }
    section("experiment", experiment);
    section(
        "model",
        vec![
            ("true_mean", join(&cfg.true_mean)),
            ("prior_lower", format!("{:?}", cfg.prior_lower)),
            ("prior_upper", format!("{:?}", cfg.prior_upper)),
        ],
    );
    let names: Vec<&str> = cfg.methods.iter().map(|m| m.name()).collect();
    section("methods", vec![("list", names.join(", "))]);
    section(
        "pmc",
        vec![
            ("particles", cfg.pmc.num_particles.to_string()),
            ("sims_per_particle", cfg.pmc.sims_per_particle.to_string()),
            ("iterations", cfg.pmc.max_iterations.to_string()),
            ("stop_window", cfg.pmc.stop_window.to_string()),
            ("stop_threshold", format!("{:?}", cfg.pmc.stop_threshold)),
            ("kernel_covariance", cfg.pmc.kernel_covariance.name().to_string()),
        ],
    );
    section(
        "classifier",
        vec![
            ("l1_strength", format!("{:?}", cfg.fit.l1_strength)),
            ("max_iterations", cfg.fit.max_iterations.to_string()),
            ("tolerance", format!("{:?}", cfg.fit.tolerance)),
            ("backtrack", format!("{:?}", cfg.fit.backtrack)),
            ("features", feature_map_name(cfg.fit.feature_map).to_string()),
        ],
    );
    section(
        "lfire",
        vec![(
            "marginal_sims",
            cfg.lfire_marginal_sims.map_or("auto".to_string(), |m| m.to_string()),
        )],
    );
    section(
        "smc_abc",
        vec![
            ("particles", cfg.smc_abc.num_particles.to_string()),
            ("schedule", join(&cfg.smc_abc.schedule)),
            ("max_attempts", cfg.smc_abc.max_attempts_per_particle.to_string()),
            ("kernel_covariance", cfg.smc_abc.kernel_covariance.name().to_string()),
        ],
    );
    section(
        "weights",
        vec![
            ("particle_counts", join(&cfg.particle_counts)),
            ("particle_box", join(&[cfg.particle_box.0, cfg.particle_box.1])),
            ("kl_direction", kl_direction_name(cfg.kl_direction).to_string()),
        ],
    );
    out
}

/// `section.key = value` lines for the run manifest.
pub fn flatten_config(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let mut section = String::new();
    let mut out = Vec::new();
    for line in serialize_config(cfg).lines() {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.to_string();
        } else if let Some((k, v)) = line.split_once(" = ") {
            out.push((format!("config.{section}.{k}"), v.to_string()));
        }
    }
    out
}
