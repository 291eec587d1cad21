//! The run manifest: a plain `key=value` file echoing the configuration and
//! the simulator accounting. It is the only output carrying a timestamp.

use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::{flatten_config, ExperimentConfig};
use crate::error::escape_value;

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub experiment: String,
    pub seed: u64,
    /// Sum of the calls reported by the sampler traces or studies.
    pub total_simulator_calls: u64,
    /// Calls counted inside the simulator.
    pub simulator_counter: u64,
    pub failed_replicates: Vec<usize>,
    pub files: Vec<String>,
    pub config: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            experiment: cfg.kind.name().to_string(),
            seed: cfg.seed,
            total_simulator_calls: 0,
            simulator_counter: 0,
            failed_replicates: Vec::new(),
            files: Vec::new(),
            config: flatten_config(cfg),
        }
    }

    pub fn render(&self) -> String {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let failed: Vec<String> = self.failed_replicates.iter().map(|r| r.to_string()).collect();
        let mut lines = vec![
            format!("version={}", env!("CARGO_PKG_VERSION")),
            format!("experiment={}", self.experiment),
            format!("seed={}", self.seed),
            format!("total_simulator_calls={}", self.total_simulator_calls),
            format!("simulator_counter={}", self.simulator_counter),
            format!("failed_replicates={}", failed.join(",")),
            format!("files={}", self.files.join(",")),
            format!("created_unix_ms={created}"),
        ];
        lines.extend(self.config.iter().map(|(k, v)| format!("{k}={}", escape_value(v))));
        lines.join("\n") + "\n"
    }
}

/// Reads a rendered manifest back into `(key, value)` pairs.
pub fn parse_manifest(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn manifest_value<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_accounting_and_config() {
        let cfg = ExperimentConfig::default();
        let mut m = Manifest::new(&cfg);
        m.total_simulator_calls = 42;
        m.simulator_counter = 42;
        let pairs = parse_manifest(&m.render());
        assert_eq!(manifest_value(&pairs, "total_simulator_calls"), Some("42"));
        assert_eq!(manifest_value(&pairs, "experiment"), Some("single-run"));
        assert_eq!(manifest_value(&pairs, "config.pmc.particles"), Some("50"));
        assert!(manifest_value(&pairs, "version").is_some());
    }
}
