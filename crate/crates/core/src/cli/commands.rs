use super::{CliError, RunConfig, DEFAULT_OUT_ROOT, OUT_ROOT_ENV};
use crate::data::{
    item_rng, load_dataset, make_task, normalize, save_dataset, simulate_linear_sde, simulate_pendulum, sparsify,
    CsvOptions, Dataset, DatasetMeta, ExtrapolationSplit, LinearSdeConfig, LinearSdeModel, ObservationKind,
    PendulumConfig, SequenceBatch, Split, Task, TaskSequence,
};
use crate::nn::{Activation, NetShape};
use crate::ssm::{Cru, CruConfig, Mode, OutputKind, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
use crate::train::{
    evaluate, gain_trace, Correlation, runtime_benchmark, train_model, write_summary_csv, MetricRecord, TrainConfig, TrainError,
};
use rand::RngCore;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

// stream ids for derived seeds; far above any sequence index
const STREAM_BASE: u64 = 1 << 40;
const STREAM_DATA: u64 = 0;
const STREAM_SPARSIFY: u64 = 10;
const STREAM_TASK: u64 = 20;
const STREAM_INIT: u64 = 30;
const STREAM_SHUFFLE: u64 = 31;
const STREAM_SDE_MODEL: u64 = 32;

/// Independent seed number `stream` derived from the master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    item_rng(seed, STREAM_BASE + stream).next_u64()
}

fn split_index(s: Split) -> u64 {
    Split::ALL.iter().position(|&x| x == s).expect("listed") as u64
}

/// Seeds and versions needed to repeat a run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub package: String,
    pub version: String,
    pub checkpoint_format: String,
    pub checkpoint_version: u32,
    pub seed: u64,
    pub derived_seeds: BTreeMap<String, u64>,
    pub workers: usize,
    pub data_source: String,
}

impl Manifest {
    fn new(command: &str, argv: &[String], cfg: &RunConfig, data_source: String) -> Result<Self, CliError> {
        let seed: u64 = cfg.get("seed")?;
        let mut derived = BTreeMap::new();
        for s in Split::ALL {
            derived.insert(format!("data_{s}"), derive_seed(seed, STREAM_DATA + split_index(s)));
            derived.insert(format!("sparsify_{s}"), derive_seed(seed, STREAM_SPARSIFY + split_index(s)));
            derived.insert(format!("task_{s}"), derive_seed(seed, STREAM_TASK + split_index(s)));
        }
        derived.insert("init".into(), derive_seed(seed, STREAM_INIT));
        derived.insert("shuffle".into(), derive_seed(seed, STREAM_SHUFFLE));
        derived.insert("sde_model".into(), derive_seed(seed, STREAM_SDE_MODEL));
        Ok(Self {
            command: command.into(),
            argv: argv.to_vec(),
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            checkpoint_format: CHECKPOINT_FORMAT.into(),
            checkpoint_version: CHECKPOINT_VERSION,
            seed,
            derived_seeds: derived,
            workers: cfg.get("workers")?,
            data_source,
        })
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io(path))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("plain data serializes");
    write_text(path, &(text + "\n"))
}

fn parse_enum<T: DeserializeOwned>(cfg: &RunConfig, key: &str) -> Result<T, CliError> {
    let raw = cfg.raw(key);
    serde_json::from_value(serde_json::Value::String(raw.to_string())).map_err(|e| CliError::Value {
        key: key.into(),
        origin: cfg.origin(key).to_string(),
        msg: format!("'{raw}': {e}"),
    })
}

fn activation(cfg: &RunConfig, key: &str) -> Result<Activation, CliError> {
    let raw = cfg.raw(key);
    Activation::parse(raw).ok_or_else(|| CliError::Value {
        key: key.into(),
        origin: cfg.origin(key).to_string(),
        msg: format!("unknown activation '{raw}'"),
    })
}

fn out_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = cfg.path("out") {
        return Ok(p.to_path_buf());
    }
    let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
    let seed: u64 = cfg.get("seed")?;
    Ok(root.join(format!("{command}-{}-seed{seed}", cfg.raw("preset"))))
}

fn prepare_run_dir(cfg: &RunConfig, command: &str, argv: &[String], data_source: String) -> Result<PathBuf, CliError> {
    let dir = out_dir(cfg, command)?;
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    write_text(&dir.join("config.txt"), &cfg.echo())?;
    write_json(&dir.join("manifest.json"), &Manifest::new(command, argv, cfg, data_source)?)?;
    Ok(dir)
}

fn split_sizes(cfg: &RunConfig) -> Result<[(Split, usize); 3], CliError> {
    Ok([(Split::Train, cfg.get("n_train")?), (Split::Valid, cfg.get("n_valid")?), (Split::Test, cfg.get("n_test")?)])
}

fn simulate(cfg: &RunConfig, n: usize, seed: u64) -> Result<SequenceBatch, CliError> {
    let master: u64 = cfg.get("seed")?;
    let seq_len = cfg.positive("seq_len")?;
    let horizon: f64 = cfg.get("horizon")?;
    match cfg.raw("generator") {
        "pendulum" => {
            let kind: ObservationKind = parse_enum(cfg, "observation")?;
            let pc = PendulumConfig {
                n_sequences: n,
                seq_len,
                horizon,
                gravity_ratio: cfg.get("gravity_ratio")?,
                noise_max: cfg.get("noise_max")?,
                noise_start_max: cfg.get("noise_start_max")?,
                walk_step: cfg.get("walk_step")?,
                kind,
                seed,
                ..PendulumConfig::default()
            };
            Ok(simulate_pendulum(&pc)?)
        }
        g @ ("sde-oscillator" | "sde-random") => {
            let model = if g == "sde-oscillator" {
                let q: f64 = cfg.get("sde_q")?;
                LinearSdeModel::oscillator(cfg.get("sde_omega")?, cfg.get("sde_damping")?, [q, q], cfg.get("sde_r")?)
            } else {
                LinearSdeModel::random(
                    cfg.positive("sde_latent")?,
                    cfg.positive("sde_features")?,
                    derive_seed(master, STREAM_SDE_MODEL),
                )
            };
            let sc = LinearSdeConfig { n_sequences: n, seq_len, horizon, model, seed };
            Ok(simulate_linear_sde(&sc)?.0)
        }
        other => Err(CliError::Value {
            key: "generator".into(),
            origin: cfg.origin("generator").to_string(),
            msg: format!("unknown generator '{other}' (expected pendulum, sde-oscillator or sde-random)"),
        }),
    }
}

/// Simulates the configured generator for every split and applies the
/// sparsification fractions. Values are raw: no time scaling or normalization.
pub fn generate_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let seed: u64 = cfg.get("seed")?;
    let keep = cfg.probability("keep_time_frac")?;
    let drop = cfg.probability("drop_value_frac")?;
    let mut splits = BTreeMap::new();
    let mut names = (Vec::new(), Vec::new());
    for (split, n) in split_sizes(cfg)? {
        if n == 0 {
            continue;
        }
        let mut batch = simulate(cfg, n, derive_seed(seed, STREAM_DATA + split_index(split)))?;
        if keep < 1.0 || drop > 0.0 {
            batch = sparsify(&batch, keep, drop, derive_seed(seed, STREAM_SPARSIFY + split_index(split)))?;
        }
        names = (batch.features.clone(), batch.target_names.clone());
        splits.insert(split, batch);
    }
    let params: BTreeMap<&str, &str> = [
        "generator", "n_train", "n_valid", "n_test", "seq_len", "horizon", "gravity_ratio", "noise_max", "noise_start_max", "walk_step",
        "observation", "sde_latent", "sde_features", "sde_omega", "sde_damping", "sde_q", "sde_r", "keep_time_frac",
        "drop_value_frac",
    ]
    .into_iter()
    .map(|k| (k, cfg.raw(k)))
    .collect();
    let meta = DatasetMeta {
        generator: cfg.raw("generator").to_string(),
        seed,
        features: names.0,
        targets: names.1,
        params: serde_json::to_value(params).expect("strings serialize"),
    };
    Ok(Dataset { meta: Some(meta), splits })
}

fn load_or_generate(cfg: &RunConfig) -> Result<(Dataset, String), CliError> {
    let opts = CsvOptions { normalize: cfg.get("normalize")?, time_scale: cfg.get("time_scale")? };
    if let Some(dir) = cfg.path("data") {
        return Ok((load_dataset(dir, opts)?, dir.display().to_string()));
    }
    let mut ds = generate_dataset(cfg)?;
    for batch in ds.splits.values_mut() {
        for s in &mut batch.sequences {
            s.times.iter_mut().for_each(|t| *t *= opts.time_scale);
        }
        if opts.normalize {
            normalize(batch);
        }
    }
    Ok((ds, format!("generated:{}", cfg.raw("preset"))))
}

fn task_view(cfg: &RunConfig, ds: &Dataset, split: Split) -> Result<Vec<TaskSequence>, CliError> {
    let mut batch = ds.split(split)?.clone();
    match cfg.raw("target_source") {
        "targets" => {}
        "inputs" => {
            batch.target_names = batch.features.clone();
            for s in &mut batch.sequences {
                s.targets = s.values.clone();
                s.target_mask = s.mask.clone();
            }
        }
        other => {
            return Err(CliError::Value {
                key: "target_source".into(),
                origin: cfg.origin("target_source").to_string(),
                msg: format!("'{other}' (expected targets or inputs)"),
            })
        }
    }
    let task: Task = cfg.get("task")?;
    let es = match cfg.raw("extrapolation_split") {
        "median" => ExtrapolationSplit::Median,
        _ => ExtrapolationSplit::Before(cfg.get("extrapolation_split")?),
    };
    let seed: u64 = cfg.get("seed")?;
    Ok(make_task(&batch, task, es, derive_seed(seed, STREAM_TASK + split_index(split)))?)
}

fn net_shape(cfg: &RunConfig, sizes: &str, act: Option<&str>, layer_norm: Option<&str>) -> Result<NetShape, CliError> {
    Ok(NetShape {
        sizes: cfg.list(sizes)?,
        activation: act.map(|a| activation(cfg, a)).transpose()?.unwrap_or(Activation::Tanh),
        layer_norm: layer_norm.map(|k| cfg.get(k)).transpose()?.unwrap_or(false),
    })
}

/// Model configuration for a dataset with the given widths.
pub fn build_model_config(cfg: &RunConfig, input_dim: usize, output_dim: usize) -> Result<CruConfig, CliError> {
    let c = CruConfig {
        input_dim,
        mask_input: cfg.get("mask_input")?,
        output_dim,
        latent_obs_dim: cfg.positive("latent_obs_dim")?,
        num_basis: cfg.positive("num_basis")?,
        bandwidth: cfg.get("bandwidth")?,
        mode: cfg.get("mode")?,
        encoder_hidden: net_shape(cfg, "encoder_hidden", Some("encoder_activation"), Some("encoder_layer_norm"))?,
        encoder_var: activation(cfg, "encoder_var")?,
        decoder_hidden: net_shape(cfg, "decoder_hidden", Some("decoder_activation"), None)?,
        decoder_var_hidden: net_shape(cfg, "decoder_var_hidden", Some("decoder_activation"), None)?,
        output: parse_enum::<OutputKind>(cfg, "output")?,
    };
    c.validate()?;
    Ok(c)
}

fn is_nonempty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

pub(super) fn cmd_generate(cfg: &RunConfig, force: bool, argv: &[String]) -> Result<String, CliError> {
    let dir = out_dir(cfg, "data")?;
    if is_nonempty_dir(&dir) && !force {
        return Err(CliError::OutputExists(dir));
    }
    let ds = generate_dataset(cfg)?;
    if force {
        // stale optional files from an earlier dataset would be picked up on load
        for s in Split::ALL {
            for f in [format!("{s}.csv"), format!("{s}_targets.csv"), format!("{s}_noise.csv")] {
                let p = dir.join(f);
                if p.exists() {
                    std::fs::remove_file(&p).map_err(io(&p))?;
                }
            }
        }
    }
    save_dataset(&dir, &ds)?;
    write_text(&dir.join("config.txt"), &cfg.echo())?;
    write_json(&dir.join("manifest.json"), &Manifest::new("generate", argv, cfg, format!("generated:{}", cfg.raw("preset")))?)?;
    let mut report = String::new();
    for (s, b) in &ds.splits {
        report.push_str(&format!("{s}: {} sequences\n", b.len()));
    }
    report.push_str(&format!("dataset written to {}\n", dir.display()));
    Ok(report)
}

fn output_width(cfg: &RunConfig, batch: &SequenceBatch) -> usize {
    if cfg.raw("target_source") == "inputs" {
        batch.features.len()
    } else {
        batch.target_names.len()
    }
}

pub(super) fn cmd_train(cfg: &RunConfig, argv: &[String]) -> Result<String, CliError> {
    let (ds, source) = load_or_generate(cfg)?;
    let train_batch = ds.split(Split::Train)?;
    let model_cfg = build_model_config(cfg, train_batch.features.len(), output_width(cfg, train_batch))?;
    let mode: Mode = cfg.get("mode")?;
    let lr = match cfg.raw("lr") {
        "auto" => TrainConfig::default_lr(mode),
        _ => cfg.get("lr")?,
    };
    let seed: u64 = cfg.get("seed")?;
    let tc = TrainConfig {
        epochs: cfg.positive("epochs")?,
        batch_size: cfg.positive("batch_size")?,
        lr,
        grad_clip: cfg.optional_f64("grad_clip")?,
        seed: derive_seed(seed, STREAM_SHUFFLE),
        workers: cfg.positive("workers")?,
        filter: cfg.get("filter")?,
    };
    tc.validate()?;
    let train = task_view(cfg, &ds, Split::Train)?;
    let valid = if ds.splits.contains_key(&Split::Valid) { task_view(cfg, &ds, Split::Valid)? } else { Vec::new() };
    let mut cru = Cru::new(model_cfg, derive_seed(seed, STREAM_INIT))?;

    let dir = prepare_run_dir(cfg, "train", argv, source)?;
    let mpath = dir.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&mpath).map_err(io(&mpath))?);
    let summary = train_model(&mut cru, &train, &valid, &tc, |r| {
        r.write_jsonl(&mut metrics).and_then(|_| metrics.flush()).map_err(|e| TrainError::Io(e.to_string()))
    })?;
    let mut records = summary.records.clone();
    let ckpt = dir.join("checkpoint.json");
    cru.save(&ckpt)?;
    let mut report = format!("best epoch {} (valid mse {})\n", summary.best_epoch, summary.best_valid_mse);
    if ds.splits.contains_key(&Split::Test) {
        let test = task_view(cfg, &ds, Split::Test)?;
        let t = std::time::Instant::now();
        let m = evaluate(&cru, &test, tc.filter, tc.workers)?;
        let rec = MetricRecord::from_eval(summary.best_epoch, Split::Test, &m, t.elapsed().as_secs_f64());
        rec.write_jsonl(&mut metrics).map_err(io(&mpath))?;
        records.push(rec);
        report.push_str(&format!("test mse {}", m.mse));
        if let Some(v) = m.gaussian_nll {
            report.push_str(&format!(", gaussian nll {v}"));
        }
        if let Some(v) = m.bernoulli_nll {
            report.push_str(&format!(", bernoulli nll {v}"));
        }
        report.push('\n');
    }
    metrics.flush().map_err(io(&mpath))?;
    let spath = dir.join("summary.csv");
    write_summary_csv(BufWriter::new(File::create(&spath).map_err(io(&spath))?), &records).map_err(io(&spath))?;
    report.push_str(&format!("run directory {}\n", dir.display()));
    Ok(report)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Cru, CliError> {
    let p = cfg.path("checkpoint").ok_or_else(|| CliError::Value {
        key: "checkpoint".into(),
        origin: cfg.origin("checkpoint").to_string(),
        msg: "a checkpoint file is required".into(),
    })?;
    Ok(Cru::load(p)?)
}

pub(super) fn cmd_eval(cfg: &RunConfig, argv: &[String]) -> Result<String, CliError> {
    let cru = load_checkpoint(cfg)?;
    let (ds, source) = load_or_generate(cfg)?;
    let split: Split = cfg.get("split")?;
    let seqs = task_view(cfg, &ds, split)?;
    let t = std::time::Instant::now();
    let m = evaluate(&cru, &seqs, cfg.get("filter")?, cfg.positive("workers")?)?;
    let rec = MetricRecord::from_eval(0, split, &m, t.elapsed().as_secs_f64());
    let dir = prepare_run_dir(cfg, "eval", argv, source)?;
    write_json(&dir.join("eval.json"), &m)?;
    let mpath = dir.join("metrics.jsonl");
    rec.write_jsonl(File::create(&mpath).map_err(io(&mpath))?).map_err(io(&mpath))?;
    let spath = dir.join("summary.csv");
    write_summary_csv(File::create(&spath).map_err(io(&spath))?, &[rec]).map_err(io(&spath))?;
    Ok(serde_json::to_string(&m).expect("metrics serialize") + "\n")
}

pub(super) fn cmd_bench(cfg: &RunConfig, argv: &[String]) -> Result<String, CliError> {
    let dims: Vec<usize> = cfg.list("dims")?;
    let rows = runtime_benchmark(&dims, cfg.positive("num_basis")?, cfg.positive("repeats")?, cfg.get("seed")?)?;
    let dir = prepare_run_dir(cfg, "bench", argv, "none".into())?;
    let mut csv = String::from("latent_dim,mode,seconds,guard_max_diff\n");
    let mut table = format!("{:>10} {:>6} {:>14} {:>10}\n", "latent_dim", "mode", "seconds", "guard");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.latent_dim, r.mode, r.seconds, r.guard_max_diff));
        table.push_str(&format!("{:>10} {:>6} {:>14.3e} {:>10.1e}\n", r.latent_dim, r.mode, r.seconds, r.guard_max_diff));
    }
    write_text(&dir.join("bench.csv"), &csv)?;
    for pair in rows.chunks(2) {
        if let [f, u] = pair {
            table.push_str(&format!("speedup at {}: {:.2}x\n", f.latent_dim, u.seconds / f.seconds));
        }
    }
    Ok(table)
}

pub(super) fn cmd_trace(cfg: &RunConfig, argv: &[String]) -> Result<String, CliError> {
    let cru = load_checkpoint(cfg)?;
    let (ds, source) = load_or_generate(cfg)?;
    let split: Split = cfg.get("split")?;
    let seqs = task_view(cfg, &ds, split)?;
    let report = gain_trace(&cru, &seqs, cfg.positive("workers")?)?;
    let dir = prepare_run_dir(cfg, "trace", argv, source)?;
    let mut csv = String::from("series_id,time,gain_norm,noise,sparseness\n");
    for r in &report.records {
        let noise = r.noise.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{},{}\n", r.series_id, r.time, r.gain_norm, noise, r.sparseness));
    }
    write_text(&dir.join("trace.csv"), &csv)?;
    let summary = serde_json::json!({ "correlation": report.correlation, "buckets": report.buckets });
    write_json(&dir.join("trace_summary.json"), &summary)?;
    let mut out = match &report.correlation {
        Correlation::Value(v) => format!("gain/noise correlation {v:.4}\n"),
        Correlation::Undefined(why) => format!("gain/noise correlation undefined: {why}\n"),
    };
    for b in &report.buckets {
        out.push_str(&format!("sparseness {:.3}: mean gain norm {:.4} over {} steps\n", b.sparseness, b.mean_gain_norm, b.count));
    }
    Ok(out)
}
