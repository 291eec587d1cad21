use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lfpmc_cli::manifest::{manifest_value, parse_manifest};

fn lfpmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfpmc")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SINGLE_RUN: &str = "\
[experiment]
kind = single-run
seed = 5

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

/// CSV and SVG outputs of a run directory, minus the fit-time chart,
/// which plots wall-clock measurements.
fn deterministic_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "svg")))
        .filter(|p| !p.ends_with("fit_ms.svg"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "run.conf", SINGLE_RUN);
    let mut runs = Vec::new();
    for threads in ["1", "2", "4"] {
        let out = tmp.path().join(format!("t{threads}"));
        let result = lfpmc(&["run", &config, "--threads", threads, "--out-dir", out.to_str().unwrap()]);
        assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
        runs.push(deterministic_files(&out));
    }
    assert_eq!(runs[0].len(), 9, "{:?}", runs[0].iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn manifest_total_matches_the_simulator_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "run.conf", SINGLE_RUN);
    let out = tmp.path().join("out");
    assert!(lfpmc(&["run", &config, "--out-dir", out.to_str().unwrap()]).status.success());
    let pairs = parse_manifest(&fs::read_to_string(out.join("manifest.txt")).unwrap());
    let total: u64 = manifest_value(&pairs, "total_simulator_calls").unwrap().parse().unwrap();
    let counter: u64 = manifest_value(&pairs, "simulator_counter").unwrap().parse().unwrap();
    assert_eq!(total, counter);
    // Three PMC iterations after the prior draw for two simulating
    // estimators (LFIRE adds N·M/2 marginal draws), plus SMC ABC.
    assert!(total > 3 * 40 * 10 + 3 * (40 * 10 + 200));
    assert_eq!(manifest_value(&pairs, "config.pmc.particles"), Some("40"));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "bad.conf", "[experiment]\nkind = single-run\nseeed = 3\n[pmc]\nparticles = 1\n");
    let out = lfpmc(&["validate", &config]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("seeed"), "{stderr}");
    assert!(stderr.contains("particles"), "{stderr}");
    assert_eq!(lfpmc(&["run", &config]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_code_three_and_leave_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "abc.conf",
        "[experiment]\nkind = single-run\n[methods]\nlist = smc_abc\n[smc_abc]\nparticles = 10\nschedule = 0.001\nmax_attempts = 3\n",
    );
    let out_dir = tmp.path().join("out");
    let out = lfpmc(&["run", &config, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let record = fs::read_to_string(out_dir.join("error.txt")).unwrap();
    assert!(record.contains("kind=runtime"), "{record}");
    assert!(record.contains("exit_code=3"), "{record}");

    let missing = tmp.path().join("absent.conf");
    assert_eq!(lfpmc(&["run", missing.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn degenerate_weights_exit_with_code_four() {
    // Two particles under the wide prior: every iteration-2 proposal lands
    // outside the support for this seed.
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "deg.conf",
        "[experiment]\nkind = single-run\nseed = 0\n[methods]\nlist = exact\n[pmc]\nparticles = 2\nsims_per_particle = 1\niterations = 4\n",
    );
    let out_dir = tmp.path().join("out");
    let out = lfpmc(&["run", &config, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let record = fs::read_to_string(out_dir.join("error.txt")).unwrap();
    assert!(record.contains("kind=degenerate_weights"), "{record}");
    // The partial trace up to the failure is kept.
    let records = fs::read_to_string(out_dir.join("exact_records.csv")).unwrap();
    assert_eq!(records.lines().count(), 2);
}

#[test]
fn validate_accepts_the_shipped_configs() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let out = lfpmc(&["validate", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        seen += 1;
    }
    assert_eq!(seen, 4);
}

#[test]
fn plot_renders_wellformed_svg_from_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let metrics = tmp.path().join("metrics.csv");
    let mut csv = String::from("replicate,method,metric,value\n");
    for r in 0..6 {
        for (m, scale) in [("mcpmc", 1.0), ("lfire", 3.0)] {
            csv.push_str(&format!("{r},{m},final_mse,{}\n", scale * (1.0 + r as f64)));
            for t in 1..=3 {
                csv.push_str(&format!("{r},{m},mse_iter_{t},{}\n", scale * (4.0 - t as f64 + r as f64)));
            }
        }
    }
    fs::write(&metrics, csv).unwrap();
    let out_dir = tmp.path().join("plots");
    let out = lfpmc(&["plot", metrics.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["final_mse.svg", "convergence.svg"] {
        let text = fs::read_to_string(out_dir.join(name)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }

    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "replicate,method,metric,value\n").unwrap();
    assert_eq!(lfpmc(&["plot", empty.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn study_outputs_are_reproducible_and_wellformed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "w.conf",
        "[experiment]\nkind = weight-comparison\nseed = 9\nreplicates = 4\n[methods]\nlist = mcpmc, lfire\n[pmc]\nsims_per_particle = 20\n[weights]\nparticle_counts = 5, 8\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let out = lfpmc(&["run", &config, "--threads", threads, "--out-dir", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let files = deterministic_files(&a);
    assert_eq!(files, deterministic_files(&b));
    for name in ["aggregate.csv", "metrics.csv", "significance.csv", "timings.txt", "kl.svg", "fit_ms.svg"] {
        assert!(a.join(name).exists(), "{name} missing");
    }
    for name in ["kl.svg", "fit_ms.svg"] {
        roxmltree::Document::parse(&fs::read_to_string(a.join(name)).unwrap()).unwrap();
    }
    let pairs = parse_manifest(&fs::read_to_string(a.join("manifest.txt")).unwrap());
    assert_eq!(manifest_value(&pairs, "total_simulator_calls"), manifest_value(&pairs, "simulator_counter"));
}

#[test]
fn pmc_studies_are_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = [
        "[experiment]\nkind = pmc-convergence\nseed = 2\nreplicates = 3\n[methods]\nlist = exact, mcpmc, lfire\n[pmc]\nparticles = 40\nsims_per_particle = 10\niterations = 4\n",
        "[experiment]\nkind = smc-vs-mcpmc\nseed = 3\nreplicates = 2\n[methods]\nlist = smc_abc, mcpmc\n[pmc]\nparticles = 40\nsims_per_particle = 10\niterations = 4\n[smc_abc]\nparticles = 60\nschedule = 12, 9, 7\n",
    ];
    for (k, text) in configs.iter().enumerate() {
        let config = write_config(tmp.path(), &format!("c{k}.conf"), text);
        let (a, b) = (tmp.path().join(format!("{k}a")), tmp.path().join(format!("{k}b")));
        for (dir, threads) in [(&a, "1"), (&b, "2")] {
            let out = lfpmc(&["run", &config, "--threads", threads, "--out-dir", dir.to_str().unwrap()]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
        let files = deterministic_files(&a);
        assert!(files.len() >= 4);
        assert_eq!(files, deterministic_files(&b));
        for (name, bytes) in &files {
            if name.ends_with(".svg") {
                roxmltree::Document::parse(std::str::from_utf8(bytes).unwrap()).unwrap();
            }
        }
        let pairs = parse_manifest(&fs::read_to_string(a.join("manifest.txt")).unwrap());
        assert_eq!(manifest_value(&pairs, "total_simulator_calls"), manifest_value(&pairs, "simulator_counter"));
    }
}
