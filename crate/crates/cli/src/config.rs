use std::path::{Path, PathBuf};

use harmofl::{DatasetSpec, FedConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// A full experiment description as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub federation: FedConfig,
    /// Required unless `experiment.dataset_file` points at a saved dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Run all three algorithm variants instead of only `federation.algorithm`.
    #[serde(default)]
    pub ablation: bool,
    /// Record gradients and check the drift bound after every run.
    #[serde(default)]
    pub verify_drift: bool,
    #[serde(default = "default_reference_steps")]
    pub reference_steps: usize,
    #[serde(default = "default_reference_grad_tol")]
    pub reference_grad_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_file: Option<PathBuf>,
    #[serde(default = "yes")]
    pub checkpoints: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_reference_steps() -> usize {
    10_000
}
fn default_reference_grad_tol() -> f64 {
    1e-6
}
fn yes() -> bool {
    true
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            out_dir: default_out_dir(),
            seeds: default_seeds(),
            ablation: false,
            verify_drift: false,
            reference_steps: default_reference_steps(),
            reference_grad_tol: default_reference_grad_tol(),
            dataset_file: None,
            checkpoints: true,
        }
    }
}

/// The sections that determine a run's numbers, hashed into every output.
#[derive(Serialize)]
struct Hashed<'a> {
    federation: &'a FedConfig,
    dataset: &'a Option<DatasetSpec>,
    dataset_file: &'a Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate(Some(text))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are always representable in TOML")
    }

    /// Semantic checks; `source` is used to point at the offending line.
    pub fn validate(&self, source: Option<&str>) -> CliResult<()> {
        let fail = |section: &str, key: &str, msg: String| {
            let line = source
                .and_then(|s| locate(s, section, key))
                .map(|l| format!(" (line {l})"))
                .unwrap_or_default();
            let field = if key == "?" {
                section.to_string()
            } else {
                format!("{section}.{key}")
            };
            Err(CliError::Config(format!("{field}{line}: {msg}")))
        };
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return fail(
                "experiment",
                "seeds",
                "at least one seed is required".into(),
            );
        }
        if e.reference_steps == 0 {
            return fail("experiment", "reference_steps", "must be positive".into());
        }
        if !(e.reference_grad_tol > 0.0) {
            return fail(
                "experiment",
                "reference_grad_tol",
                "must be positive".into(),
            );
        }
        if let Err(err) = self.federation.validate() {
            return fail("federation", guess_key(&err.to_string()), err.to_string());
        }
        match (&self.dataset, &e.dataset_file) {
            (None, None) => {
                return fail(
                    "dataset",
                    "num_clients",
                    "a [dataset] section or experiment.dataset_file is required".into(),
                )
            }
            (Some(spec), _) => {
                if let Err(err) = spec.validate() {
                    return fail("dataset", guess_key(&err.to_string()), err.to_string());
                }
                if spec.num_clients != self.federation.num_clients {
                    return fail(
                        "federation",
                        "num_clients",
                        format!(
                            "{} does not match dataset.num_clients = {}",
                            self.federation.num_clients, spec.num_clients
                        ),
                    );
                }
            }
            (None, Some(_)) => {}
        }
        Ok(())
    }

    /// Hex sha256 of the federation and dataset sections, with the
    /// per-run seed cleared so that all seeds of one experiment agree.
    pub fn sha256(&self) -> String {
        let mut federation = self.federation.clone();
        federation.seed = 0;
        federation.record_gradients = false;
        federation.concurrent = true;
        let body = toml::to_string(&Hashed {
            federation: &federation,
            dataset: &self.dataset,
            dataset_file: &self.experiment.dataset_file,
        })
        .expect("config values are always representable in TOML");
        hex::encode(Sha256::digest(body.as_bytes()))
    }

    /// The federation config for one seed of this experiment.
    pub fn federation_for(&self, seed: u64) -> FedConfig {
        let mut cfg = self.federation.clone();
        cfg.seed = seed;
        cfg.record_gradients |= self.experiment.verify_drift;
        cfg
    }
}

const KNOWN_KEYS: &[&str] = &[
    "rounds",
    "num_clients",
    "local_steps",
    "batch_size",
    "local_epochs",
    "eta_l",
    "eta_g",
    "decay_v",
    "alpha",
    "grad_floor",
    "hidden_dims",
    "client_weights",
    "samples_per_client",
    "height",
    "width",
    "channels",
    "noise_std",
    "profiles",
];

/// Picks the config key named in a validation message, if any.
fn guess_key(msg: &str) -> &str {
    msg.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .find(|w| KNOWN_KEYS.contains(w))
        .unwrap_or("?")
}

/// 1-based line of `key = ...` inside `[section]`.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
