//! Run configuration: defaults, then an optional TOML file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use opfeat_core::bench::BenchConfig;
use opfeat_core::pipeline::SolveConfig;
use opfeat_neural::HyperParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bad flags, unreadable config or invalid overrides. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: Option<u64>,
    /// `oracle`, `noisy:k` or `model:path`.
    pub matrix_source: String,
    pub out: Option<PathBuf>,
    /// Tab-separated benchmark file used instead of the shipped suites.
    pub benchmarks: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Points sampled per run.
    pub samples: usize,
    pub repeats: usize,
    pub jobs: usize,
    /// Label-length bins in the bench summary.
    pub bins: usize,
    pub solve: SolveConfig,
    pub model: HyperParams,
}

impl Default for CliConfig {
    fn default() -> Self {
        let bench = BenchConfig::default();
        CliConfig {
            seed: None,
            matrix_source: "oracle".into(),
            out: None,
            benchmarks: None,
            checkpoint: None,
            samples: bench.samples,
            repeats: bench.repeats,
            jobs: bench.jobs,
            bins: 5,
            solve: bench.solve,
            model: HyperParams::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<CliConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.solve.search.validate().map_err(|e| usage(e.to_string()))?;
        self.model.validate().map_err(|e| usage(e.to_string()))?;
        if self.samples < 2 {
            return Err(usage("samples must be at least 2"));
        }
        if self.repeats == 0 || self.jobs == 0 || self.bins == 0 {
            return Err(usage("repeats, jobs and bins must be positive"));
        }
        Ok(())
    }

    pub fn require_seed(&self) -> anyhow::Result<u64> {
        self.seed.ok_or_else(|| usage("this command needs --seed (or `seed` in the config file)"))
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            samples: self.samples,
            repeats: self.repeats,
            solve: self.solve.clone(),
            jobs: self.jobs,
        }
    }

    /// SHA-256 of the resolved configuration as JSON, leaving out the
    /// settings that cannot change results (output location, worker count).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.jobs = 1;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: CliConfig = toml::from_str("seed = 4\nrepeats = 3\n[solve.search]\nmax_candidates_per_round = 50\n").unwrap();
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.repeats, 3);
        assert_eq!(c.solve.search.max_candidates_per_round, 50);
        assert_eq!(c.samples, 1000);
        assert_eq!(c.model, HyperParams::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<CliConfig>("sed = 4").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = CliConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.jobs = 4;
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.repeats = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
