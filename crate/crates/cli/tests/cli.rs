use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use harmofl::model;
use harmofl::ClientState;
use harmofl_cli::checkpoint::{self, Checkpoint};
use harmofl_cli::commands::{self, LandscapeArgs};
use harmofl_cli::{dataset_io, landscape, CliError, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_harmofl"))
}

fn config_text(out: &Path, algorithm: &str, seeds: &str) -> String {
    format!(
        r#"[experiment]
out_dir = "{}"
seeds = {seeds}

[federation]
rounds = 3
num_clients = 2
local_steps = 2
batch_size = 8
eta_l = 0.05
algorithm = "{algorithm}"

[dataset]
num_clients = 2
samples_per_client = 40
height = 8
width = 8
channels = 1

[[dataset.profiles]]
contrast_gain = 1.0

[[dataset.profiles]]
contrast_gain = 2.0
brightness_offset = 0.1
"#,
        out.display()
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_cli(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_required_field_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config_text(&tmp.path().join("out"), "harmofl", "[0]").replace("rounds = 3\n", "");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let o = run_cli(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("rounds"), "{err}");
    assert!(err.contains("line"), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn invalid_value_exits_2_with_field_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config_text(&tmp.path().join("out"), "harmofl", "[0]")
        .replace("eta_l = 0.05", "eta_l = -0.05");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let o = run_cli(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("federation.eta_l (line 10)"), "{err}");
}

#[test]
fn unknown_field_and_client_mismatch_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let base = config_text(&tmp.path().join("out"), "harmofl", "[0]");
    for (text, needle) in [
        (
            base.replace("eta_l = 0.05", "eta_l = 0.05\netal = 1.0"),
            "etal",
        ),
        (
            base.replace("rounds = 3\nnum_clients = 2", "rounds = 3\nnum_clients = 3"),
            "federation.num_clients",
        ),
        (
            base.replace("seeds = [0]", "seeds = []"),
            "experiment.seeds",
        ),
    ] {
        let cfg = write_config(tmp.path(), "c.toml", &text);
        let o = run_cli(&["run", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains(needle), "{}", stderr(&o));
    }
}

#[test]
fn divergence_exits_3_with_round_and_client() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config_text(&tmp.path().join("out"), "fedavg", "[0]")
        .replace("eta_l = 0.05", "eta_l = 1e300");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let o = run_cli(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("round 1") && err.contains("client"), "{err}");
}

#[test]
fn dry_run_prints_resolved_config_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "c.toml", &config_text(&out, "harmofl", "[0]"));
    let o = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--dry-run",
        "--seed-override",
        "4,5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!out.exists());
    let printed = String::from_utf8(o.stdout).unwrap();
    let resolved = ExperimentConfig::parse(&printed).unwrap();
    assert_eq!(resolved.experiment.seeds, vec![4, 5]);
    assert_eq!(resolved.federation.alpha, 0.05);
    assert_eq!(resolved.federation.decay_v, 0.1);
    // resolved output is a fixed point
    assert_eq!(resolved.to_toml(), printed);
}

#[test]
fn config_round_trips_through_toml() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg =
        ExperimentConfig::parse(&config_text(tmp.path(), "fedavg_ampnorm", "[1, 2]")).unwrap();
    let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.sha256(), again.sha256());
    let mut other = cfg.clone();
    other.federation.eta_l = 0.06;
    assert_ne!(cfg.sha256(), other.sha256());
    let mut reseeded = cfg.clone();
    reseeded.federation.seed = 9;
    reseeded.experiment.seeds = vec![7];
    assert_eq!(cfg.sha256(), reseeded.sha256());
}

#[test]
fn run_writes_byte_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    let mut jsons = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let cfg = write_config(
            tmp.path(),
            &format!("{name}.toml"),
            &config_text(&tmp.path().join("unused"), "harmofl", "[0, 1, 2]"),
        );
        let o = run_cli(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        csvs.push(std::fs::read(out.join("metrics.csv")).unwrap());
        jsons.push(std::fs::read(out.join("metrics.json")).unwrap());
        for s in 0..3 {
            assert!(out.join(format!("checkpoints/seed_{s}.ckpt")).exists());
        }
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(jsons[0], jsons[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,round,algorithm,mean_accuracy,mean_eval_loss,mean_train_loss,gamma,gamma_min,gamma_max,bound"
    );
    assert_eq!(lines.count(), 9);
}

#[test]
fn sequential_and_concurrent_runs_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse(&config_text(tmp.path(), "harmofl", "[0, 1]")).unwrap();
    let mut outputs = Vec::new();
    for concurrent in [true, false] {
        cfg.federation.concurrent = concurrent;
        cfg.experiment.out_dir = tmp.path().join(format!("c{concurrent}"));
        commands::run(&cfg).unwrap();
        outputs.push(std::fs::read(cfg.experiment.out_dir.join("metrics.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn metrics_json_has_summary_and_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse(&config_text(tmp.path(), "harmofl", "[0, 1]")).unwrap();
    cfg.experiment.verify_drift = true;
    cfg.experiment.reference_steps = 200;
    let files = commands::run(&cfg).unwrap();
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["config_sha256"], cfg.sha256());
    assert_eq!(json["seeds"].as_array().unwrap().len(), 2);
    let acc = &files[0].summary.final_mean_accuracy;
    let per_seed: Vec<f64> = files[0]
        .seeds
        .iter()
        .map(|s| s.final_mean_accuracy)
        .collect();
    assert!((acc.mean - (per_seed[0] + per_seed[1]) / 2.0).abs() < 1e-15);
    assert!((acc.std - (per_seed[0] - per_seed[1]).abs() / 2f64.sqrt()).abs() < 1e-15);
    let drift = json["seeds"][0]["drift"].as_object().unwrap();
    assert!(drift.contains_key("constants") && drift.contains_key("rounds"));
    let csv = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let bound: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(bound >= 0.0);
    }
}

fn sample_checkpoint(with_amp: bool) -> Checkpoint {
    let tmp = tempfile::tempdir().unwrap();
    let alg = if with_amp { "harmofl" } else { "fedavg" };
    let mut cfg = ExperimentConfig::parse(&config_text(tmp.path(), alg, "[0]")).unwrap();
    cfg.federation.hidden_dims = vec![3];
    let runs = commands::run_variant(&cfg, cfg.federation.algorithm).unwrap();
    runs.into_iter().next().unwrap().checkpoint
}

#[test]
fn checkpoint_round_trips() {
    for with_amp in [false, true] {
        let ckpt = sample_checkpoint(with_amp);
        assert_eq!(ckpt.amplitude.is_some(), with_amp);
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..8], b"HFLCKPT\0");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.params.arch().hidden_dims, vec![3]);

        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.ckpt");
        checkpoint::save(&path, &ckpt, "abc", 7, harmofl::Algorithm::HarmoFl, 3).unwrap();
        let (loaded, side) = checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        assert_eq!(
            (side.seed, side.rounds, side.config_sha256.as_str()),
            (7, 3, "abc")
        );
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let ckpt = sample_checkpoint(true);
    let bytes = ckpt.to_bytes();
    let is_format = |r: Result<Checkpoint, CliError>| matches!(r, Err(CliError::Format(_)));

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(is_format(Checkpoint::from_bytes(&bad_magic)));
    let mut bad_version = bytes.clone();
    bad_version[8] = 2;
    assert!(is_format(Checkpoint::from_bytes(&bad_version)));
    for cut in [0, 7, 12, 40, bytes.len() - 1] {
        assert!(
            is_format(Checkpoint::from_bytes(&bytes[..cut])),
            "cut {cut}"
        );
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(is_format(Checkpoint::from_bytes(&trailing)));

    // a flipped parameter byte still parses but fails the sidecar hash
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ckpt");
    checkpoint::save(&path, &ckpt, "abc", 0, harmofl::Algorithm::HarmoFl, 3).unwrap();
    let mut flipped = bytes.clone();
    flipped[60] ^= 0x10;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(CliError::Format(_))));
}

#[test]
fn landscape_grid_matches_closed_form_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 6;
    let mut v = || {
        (0..d)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let (c, d1, d2) = (v(), v(), v());
    let f = |x: &[f64]| Ok(0.5 * x.iter().map(|v| v * v).sum::<f64>());
    let pts = landscape::loss_grid(&c, &d1, &d2, 7, 2.0, f).unwrap();
    assert_eq!(pts.len(), 49);
    for p in &pts {
        let x: Vec<f64> = (0..d).map(|i| c[i] + p.a * d1[i] + p.b * d2[i]).collect();
        assert!((p.loss - f(&x).unwrap()).abs() < 1e-12);
    }
    assert_eq!((pts[0].a, pts[0].b), (-2.0, -2.0));
    assert_eq!((pts[48].a, pts[48].b), (2.0, 2.0));
    let single = landscape::loss_grid(&c, &d1, &d2, 1, 2.0, f).unwrap();
    assert_eq!(single[0].loss, f(&c).unwrap());
}

fn read_landscape(path: &Path) -> Vec<(f64, f64, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let g = |i: usize| rec[i].parse::<f64>().unwrap();
            (g(0), g(1), g(2))
        })
        .collect()
}

#[test]
fn exported_landscape_matches_direct_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&config_text(tmp.path(), "harmofl", "[1]")).unwrap();
    commands::run(&cfg).unwrap();
    let ckpt_path = tmp.path().join("checkpoints/seed_1.ckpt");
    let (ckpt, _) = checkpoint::load(&ckpt_path).unwrap();
    let data = commands::datasets_for(&cfg, 1).unwrap();
    let batches: Vec<_> = data
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let c = ClientState::new(i, d.clone(), 0.1).unwrap();
            c.features_for(
                &c.dataset.train,
                cfg.federation.algorithm,
                ckpt.amplitude.as_ref(),
            )
            .unwrap()
        })
        .collect();

    // a 1x1 grid is the loss at the checkpoint itself
    let args = LandscapeArgs {
        checkpoint: ckpt_path.clone(),
        grid: 1,
        span: 0.5,
        direction_seed: 3,
        out_dir: tmp.path().join("l1"),
    };
    let files = commands::export_landscape(&cfg, &args).unwrap();
    assert_eq!(files.len(), 2);
    for (file, batch) in files.iter().zip(&batches) {
        let rows = read_landscape(file);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].2, model::forward_loss(&ckpt.params, batch).unwrap());
    }

    // spot checks on a 9x9 grid against independently rebuilt directions
    let args = LandscapeArgs {
        grid: 9,
        out_dir: tmp.path().join("l9"),
        ..args
    };
    let files = commands::export_landscape(&cfg, &args).unwrap();
    let (d1, d2) = landscape::directions(ckpt.params.arch(), ckpt.params.values(), 3);
    for (file, batch) in files.iter().zip(&batches) {
        let rows = read_landscape(file);
        assert_eq!(rows.len(), 81);
        for idx in [0, 10, 40, 57, 80] {
            let (a, b, loss) = rows[idx];
            let x: Vec<f64> = ckpt
                .params
                .values()
                .iter()
                .zip(&d1)
                .zip(&d2)
                .map(|((c, u), v)| c + a * u + b * v)
                .collect();
            let p = ckpt.params.with_values(x).unwrap();
            assert!((loss - model::forward_loss(&p, batch).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn landscape_refuses_huge_grids_and_foreign_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&config_text(tmp.path(), "fedavg", "[0]")).unwrap();
    commands::run(&cfg).unwrap();
    let args = LandscapeArgs {
        checkpoint: tmp.path().join("checkpoints/seed_0.ckpt"),
        grid: 1000,
        span: 1.0,
        direction_seed: 0,
        out_dir: tmp.path().join("l"),
    };
    assert!(matches!(
        commands::export_landscape(&cfg, &args),
        Err(CliError::Config(_))
    ));
    let mut other = cfg.clone();
    other.federation.eta_l = 0.07;
    let args = LandscapeArgs { grid: 3, ..args };
    assert!(matches!(
        commands::export_landscape(&other, &args),
        Err(CliError::Config(_))
    ));
    assert!(commands::export_landscape(&cfg, &args).is_ok());
}

#[test]
fn ablation_rows_and_standalone_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &config_text(&tmp.path().join("abl"), "harmofl", "[0, 1]"),
    );
    let o = run_cli(&["ablate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("abl/ablation.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "variant,seed,client_1,client_2,avg,mean_gamma");
    // 3 variants x (2 seeds + mean row)
    assert_eq!(lines.len(), 1 + 3 * 3);
    for v in ["fedavg", "fedavg_ampnorm", "harmofl"] {
        assert!(tmp.path().join("abl").join(v).join("metrics.csv").exists());
    }

    let solo = write_config(
        tmp.path(),
        "solo.toml",
        &config_text(&tmp.path().join("solo"), "fedavg", "[0, 1]"),
    );
    let o = run_cli(&["run", "--config", solo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let standalone = std::fs::read(tmp.path().join("solo/metrics.csv")).unwrap();
    let in_ablation = std::fs::read(tmp.path().join("abl/fedavg/metrics.csv")).unwrap();
    assert_eq!(standalone, in_ablation);
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("solo/metrics.json")).unwrap())
            .unwrap();
    let acc0 = &json["seeds"][0]["final_accuracy"];
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row[..2], ["fedavg", "0"]);
    assert_eq!(row[2].parse::<f64>().unwrap(), acc0[0].as_f64().unwrap());
    assert_eq!(row[3].parse::<f64>().unwrap(), acc0[1].as_f64().unwrap());
}

#[test]
fn dataset_file_round_trips_and_drives_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config_text(&tmp.path().join("gen"), "harmofl", "[0]");
    let cfg_path = write_config(tmp.path(), "c.toml", &text);
    let data_path = tmp.path().join("data/clients.bin");
    let o = run_cli(&[
        "gen-data",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        data_path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let generated = harmofl::synthdata::generate_clients(cfg.dataset.as_ref().unwrap(), 0).unwrap();
    assert_eq!(dataset_io::load(&data_path).unwrap(), generated);

    // same data through the file gives the same training curve
    commands::run(&cfg).unwrap();
    let mut from_file = cfg.clone();
    from_file.dataset = None;
    from_file.experiment.dataset_file = Some(data_path.clone());
    from_file.experiment.out_dir = tmp.path().join("file");
    commands::run(&from_file).unwrap();
    assert_eq!(
        std::fs::read(tmp.path().join("gen/metrics.csv")).unwrap(),
        std::fs::read(tmp.path().join("file/metrics.csv")).unwrap()
    );

    let mut bytes = std::fs::read(&data_path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(
        dataset_io::read_datasets(&bytes[..]),
        Err(CliError::Format(_))
    ));
    assert!(matches!(
        dataset_io::read_datasets(&b"HFLDATAX"[..]),
        Err(CliError::Format(_))
    ));
}
