use std::path::{Path, PathBuf};
use std::sync::Arc;

use harmofl::drift;
use harmofl::synthdata;
use harmofl::{run_federation, Algorithm, ClientDataset, ClientState};
use rayon::prelude::*;

use crate::checkpoint::{self, Checkpoint};
use crate::config::ExperimentConfig;
use crate::dataset_io;
use crate::error::{CliError, CliResult};
use crate::landscape;
use crate::metrics::{self, MetricsFile, SeedMetrics};

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
}

/// Loads `path`, applies `overrides` and re-validates.
pub fn resolve(path: &Path, overrides: &Overrides) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seeds) = &overrides.seeds {
        cfg.experiment.seeds = seeds.clone();
    }
    if let Some(dir) = &overrides.out_dir {
        cfg.experiment.out_dir = dir.clone();
    }
    cfg.validate(None)?;
    Ok(cfg)
}

/// Client datasets for one seed: read from `dataset_file` when set,
/// otherwise generated from the `[dataset]` section with that seed.
pub fn datasets_for(cfg: &ExperimentConfig, seed: u64) -> CliResult<Vec<Arc<ClientDataset>>> {
    let data = match (&cfg.experiment.dataset_file, &cfg.dataset) {
        (Some(file), _) => dataset_io::load(file)?,
        (None, Some(spec)) => synthdata::generate_clients(spec, seed)?,
        (None, None) => unreachable!("validated config has a data source"),
    };
    if data.len() != cfg.federation.num_clients {
        return Err(CliError::Config(format!(
            "federation.num_clients: {} does not match the {} clients in the dataset",
            cfg.federation.num_clients,
            data.len()
        )));
    }
    Ok(data.into_iter().map(Arc::new).collect())
}

fn in_context(seed: u64, algorithm: Algorithm, e: harmofl::Error) -> CliError {
    match e {
        harmofl::Error::Config(_) => CliError::Config(e.to_string()),
        other => CliError::Numeric(format!("seed {seed}, {algorithm}: {other}")),
    }
}

/// Result of one seed: its metrics and final model.
pub struct SeedRun {
    pub metrics: SeedMetrics,
    pub checkpoint: Checkpoint,
}

/// Trains `algorithm` on every configured seed. Seeds run on the rayon pool;
/// results come back in seed order, and a failure reports the first failing
/// seed in that order.
pub fn run_variant(cfg: &ExperimentConfig, algorithm: Algorithm) -> CliResult<Vec<SeedRun>> {
    let results: Vec<CliResult<SeedRun>> = cfg
        .experiment
        .seeds
        .par_iter()
        .map(|&seed| {
            let data = datasets_for(cfg, seed)?;
            let mut fed = cfg.federation_for(seed);
            fed.algorithm = algorithm;
            let outcome =
                run_federation(&fed, &data).map_err(|e| in_context(seed, algorithm, e))?;
            let report = if cfg.experiment.verify_drift {
                Some(
                    drift::drift_report(
                        &fed,
                        &outcome,
                        cfg.experiment.reference_steps,
                        cfg.experiment.reference_grad_tol,
                    )
                    .map_err(|e| in_context(seed, algorithm, e))?,
                )
            } else {
                None
            };
            Ok(SeedRun {
                metrics: SeedMetrics::new(seed, algorithm, &outcome, report),
                checkpoint: Checkpoint {
                    params: outcome.final_params,
                    amplitude: outcome.global_amplitude,
                },
            })
        })
        .collect();
    results.into_iter().collect()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Config(format!(
            "experiment.out_dir: cannot create {}: {e}",
            dir.display()
        ))
    })
}

/// Writes `metrics.json`, `metrics.csv` and per-seed checkpoints into `dir`.
pub fn write_variant(
    dir: &Path,
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    runs: Vec<SeedRun>,
) -> CliResult<MetricsFile> {
    create_dir(dir)?;
    let hash = cfg.sha256();
    if cfg.experiment.checkpoints {
        let ckpt_dir = dir.join("checkpoints");
        create_dir(&ckpt_dir)?;
        for r in &runs {
            let path = ckpt_dir.join(format!("seed_{}.ckpt", r.metrics.seed));
            checkpoint::save(
                &path,
                &r.checkpoint,
                &hash,
                r.metrics.seed,
                algorithm,
                cfg.federation.rounds,
            )?;
        }
    }
    let file = MetricsFile::new(
        hash,
        algorithm,
        runs.into_iter().map(|r| r.metrics).collect(),
    );
    file.write_json(&dir.join("metrics.json"))?;
    file.write_csv(&dir.join("metrics.csv"))?;
    Ok(file)
}

fn write_resolved(cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = &cfg.experiment.out_dir;
    create_dir(dir)?;
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| CliError::io(&path, e))
}

/// `run`: trains the configured algorithm, or all three when
/// `experiment.ablation` is set.
pub fn run(cfg: &ExperimentConfig) -> CliResult<Vec<MetricsFile>> {
    if cfg.experiment.ablation {
        return ablate(cfg);
    }
    write_resolved(cfg)?;
    let runs = run_variant(cfg, cfg.federation.algorithm)?;
    Ok(vec![write_variant(
        &cfg.experiment.out_dir,
        cfg,
        cfg.federation.algorithm,
        runs,
    )?])
}

/// `ablate`: fedavg, fedavg_ampnorm and harmofl on identical data and seeds,
/// each in its own subdirectory, plus `ablation.csv` at the top.
pub fn ablate(cfg: &ExperimentConfig) -> CliResult<Vec<MetricsFile>> {
    write_resolved(cfg)?;
    let out = &cfg.experiment.out_dir;
    let mut files = Vec::with_capacity(Algorithm::ALL.len());
    for alg in Algorithm::ALL {
        let runs = run_variant(cfg, alg)?;
        files.push(write_variant(&out.join(alg.name()), cfg, alg, runs)?);
    }
    let path = out.join("ablation.csv");
    let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    metrics::write_ablation_csv(f, &files).map_err(|e| CliError::io(&path, e))?;
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct LandscapeArgs {
    pub checkpoint: PathBuf,
    pub grid: usize,
    pub span: f64,
    pub direction_seed: u64,
    pub out_dir: PathBuf,
}

/// `export-landscape`: per-client training loss on a 2D slice through a
/// checkpoint. Returns the written CSV paths.
pub fn export_landscape(cfg: &ExperimentConfig, args: &LandscapeArgs) -> CliResult<Vec<PathBuf>> {
    let (ckpt, side) = checkpoint::load(&args.checkpoint)?;
    if side.config_sha256 != cfg.sha256() {
        return Err(CliError::Config(format!(
            "checkpoint {} was written by a different configuration",
            args.checkpoint.display()
        )));
    }
    let clients = cfg.federation.num_clients;
    let evaluations = args
        .grid
        .checked_mul(args.grid)
        .and_then(|g| g.checked_mul(clients))
        .unwrap_or(usize::MAX);
    if evaluations > landscape::MAX_EVALUATIONS {
        return Err(CliError::Config(format!(
            "grid: {0}x{0} points for {clients} clients is {evaluations} evaluations, above the limit of {1}",
            args.grid,
            landscape::MAX_EVALUATIONS
        )));
    }
    let data = datasets_for(cfg, side.seed)?;
    let params = &ckpt.params;
    if params.arch().input_dim != data[0].shape().len() {
        return Err(CliError::Config(
            "checkpoint input size does not match the dataset".into(),
        ));
    }
    let (d1, d2) = landscape::directions(params.arch(), params.values(), args.direction_seed);
    create_dir(&args.out_dir)?;
    let mut written = Vec::with_capacity(clients);
    for (i, ds) in data.into_iter().enumerate() {
        let state = ClientState::new(i, ds, cfg.federation.decay_v)?;
        let batch = state.features_for(
            &state.dataset.train,
            side.algorithm,
            ckpt.amplitude.as_ref(),
        )?;
        let points = landscape::loss_grid(params.values(), &d1, &d2, args.grid, args.span, |x| {
            let p = params.with_values(x.to_vec())?;
            Ok(harmofl::model::forward_loss(&p, &batch)?)
        })?;
        let path = args.out_dir.join(format!("landscape_client_{}.csv", i + 1));
        let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        landscape::write_csv(f, &points).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// `gen-data`: renders the `[dataset]` section with `seed` into a dataset file.
pub fn gen_data(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<()> {
    let spec = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("dataset: gen-data needs a [dataset] section".into()))?;
    let data = synthdata::generate_clients(spec, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    dataset_io::save(out, &data)
}
