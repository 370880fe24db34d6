use std::io::Write;
use std::path::Path;

use harmofl::drift::DriftReport;
use harmofl::federation::RoundRecord;
use harmofl::{Algorithm, FederationOutcome};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_accuracy: f64,
    pub mean_eval_loss: f64,
    pub mean_train_loss: f64,
    pub gamma: f64,
    pub gamma_i: Vec<f64>,
    pub eval_accuracy: Vec<f64>,
    pub eval_loss: Vec<f64>,
    pub train_loss: Vec<f64>,
}

impl From<&RoundRecord> for RoundMetrics {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            mean_accuracy: r.mean_accuracy,
            mean_eval_loss: r.mean_eval_loss,
            mean_train_loss: r.mean_train_loss,
            gamma: r.gamma,
            gamma_i: r.gamma_i.clone(),
            eval_accuracy: r.eval_accuracy.clone(),
            eval_loss: r.eval_loss.clone(),
            train_loss: r.train_loss.clone(),
        }
    }
}

/// Everything recorded for one seed of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub rounds: Vec<RoundMetrics>,
    /// Per-client eval accuracy of the final global model.
    pub final_accuracy: Vec<f64>,
    pub final_mean_accuracy: f64,
    /// Γ averaged over all rounds.
    pub mean_gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftReport>,
}

impl SeedMetrics {
    pub fn new(
        seed: u64,
        algorithm: Algorithm,
        outcome: &FederationOutcome,
        drift: Option<DriftReport>,
    ) -> Self {
        let rounds: Vec<RoundMetrics> = outcome.records.iter().map(RoundMetrics::from).collect();
        let last = rounds.last();
        Self {
            seed,
            algorithm,
            final_accuracy: last.map(|r| r.eval_accuracy.clone()).unwrap_or_default(),
            final_mean_accuracy: last.map_or(f64::NAN, |r| r.mean_accuracy),
            mean_gamma: rounds.iter().map(|r| r.gamma).sum::<f64>() / rounds.len().max(1) as f64,
            rounds,
            drift,
        }
    }
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub mean_accuracy: Stat,
    pub mean_eval_loss: Stat,
    pub gamma: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_mean_accuracy: Stat,
    pub final_client_accuracy: Vec<Stat>,
    pub mean_gamma: Stat,
    pub rounds: Vec<RoundSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_all_hold: Option<bool>,
}

impl Summary {
    pub fn of(seeds: &[SeedMetrics]) -> Self {
        let col =
            |f: &dyn Fn(&SeedMetrics) -> f64| Stat::of(&seeds.iter().map(f).collect::<Vec<_>>());
        let clients = seeds.first().map_or(0, |s| s.final_accuracy.len());
        let n_rounds = seeds.iter().map(|s| s.rounds.len()).min().unwrap_or(0);
        let drift: Vec<bool> = seeds
            .iter()
            .filter_map(|s| s.drift.as_ref().map(|d| d.all_hold))
            .collect();
        Self {
            final_mean_accuracy: col(&|s| s.final_mean_accuracy),
            final_client_accuracy: (0..clients)
                .map(|i| col(&|s| s.final_accuracy[i]))
                .collect(),
            mean_gamma: col(&|s| s.mean_gamma),
            rounds: (0..n_rounds)
                .map(|t| RoundSummary {
                    round: seeds[0].rounds[t].round,
                    mean_accuracy: col(&|s| s.rounds[t].mean_accuracy),
                    mean_eval_loss: col(&|s| s.rounds[t].mean_eval_loss),
                    gamma: col(&|s| s.rounds[t].gamma),
                })
                .collect(),
            drift_all_hold: (!drift.is_empty()).then(|| drift.iter().all(|&h| h)),
        }
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config_sha256: String,
    pub algorithm: Algorithm,
    pub seeds: Vec<SeedMetrics>,
    pub summary: Summary,
}

impl MetricsFile {
    pub fn new(config_sha256: String, algorithm: Algorithm, seeds: Vec<SeedMetrics>) -> Self {
        let summary = Summary::of(&seeds);
        Self {
            config_sha256,
            algorithm,
            seeds,
            summary,
        }
    }

    pub fn write_json(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Numeric(format!("metrics are not serializable: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> CliResult<()> {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        write_csv(file, &self.seeds).map_err(|e| CliError::io(path, e))
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "seed",
    "round",
    "algorithm",
    "mean_accuracy",
    "mean_eval_loss",
    "mean_train_loss",
    "gamma",
    "gamma_min",
    "gamma_max",
    "bound",
];

/// One row per (seed, round); `bound` is empty unless drift was verified.
pub fn write_csv<W: Write>(w: W, seeds: &[SeedMetrics]) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for s in seeds {
        for (t, r) in s.rounds.iter().enumerate() {
            let min = r.gamma_i.iter().copied().fold(f64::INFINITY, f64::min);
            let max = r.gamma_i.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let bound = s
                .drift
                .as_ref()
                .and_then(|d| d.rounds.get(t))
                .map(|b| b.bound.to_string())
                .unwrap_or_default();
            out.write_record([
                s.seed.to_string(),
                r.round.to_string(),
                s.algorithm.to_string(),
                r.mean_accuracy.to_string(),
                r.mean_eval_loss.to_string(),
                r.mean_train_loss.to_string(),
                r.gamma.to_string(),
                min.to_string(),
                max.to_string(),
                bound,
            ])?;
        }
    }
    out.flush()
}

/// Writes `ablation.csv`: one row per (variant, seed) with final per-client
/// accuracy, plus a `mean` row per variant.
pub fn write_ablation_csv<W: Write>(w: W, variants: &[MetricsFile]) -> std::io::Result<()> {
    let clients = variants
        .first()
        .and_then(|v| v.seeds.first())
        .map_or(0, |s| s.final_accuracy.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["variant".to_string(), "seed".to_string()];
    header.extend((1..=clients).map(|i| format!("client_{i}")));
    header.push("avg".into());
    header.push("mean_gamma".into());
    out.write_record(&header)?;
    for v in variants {
        for s in &v.seeds {
            let mut row = vec![v.algorithm.to_string(), s.seed.to_string()];
            row.extend(s.final_accuracy.iter().map(|a| a.to_string()));
            row.push(s.final_mean_accuracy.to_string());
            row.push(s.mean_gamma.to_string());
            out.write_record(&row)?;
        }
        let sm = &v.summary;
        let mut row = vec![v.algorithm.to_string(), "mean".to_string()];
        row.extend(sm.final_client_accuracy.iter().map(|a| a.mean.to_string()));
        row.push(sm.final_mean_accuracy.mean.to_string());
        row.push(sm.mean_gamma.mean.to_string());
        out.write_record(&row)?;
    }
    out.flush()
}
