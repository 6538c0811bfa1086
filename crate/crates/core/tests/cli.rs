use cru::cli::{run, CliError, RunConfig, KEYS, OUT_ROOT_ENV};
use cru::data::{load_dataset, make_task, CsvOptions, ExtrapolationSplit, Split, Task};
use cru::ssm::Cru;
use cru::train::predict;
use std::fs;
use std::path::Path;

fn cru(args: &[&str]) -> Result<String, CliError> {
    run(std::iter::once("cru").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SDE: [&str; 12] =
    ["--preset", "sde-interpolation", "--set", "n_train=6", "--set", "n_valid=3", "--set", "n_test=4", "--set", "seq_len=12", "--epochs", "2"];

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\nseed = 3\nbogus = 1\n\nno equals here\nseed = 4\n").unwrap();
    let err = cru(&["train", "--config", s(&cfg)]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let msg = err.to_string();
    assert!(msg.contains("line 3: unknown key 'bogus'"), "{msg}");
    assert!(msg.contains("line 5: expected 'key = value'"), "{msg}");
    assert!(msg.contains("line 6: duplicate key 'seed'"), "{msg}");
    let err = cru(&["train", "--set", "lerning_rate=0.1"]).unwrap_err();
    assert!(matches!(err, CliError::Config { .. }) && err.to_string().contains("unknown key 'lerning_rate'"));
}

#[test]
fn flags_override_file_and_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "preset = sde-extrapolation\nepochs = 7\nseed = 2\n").unwrap();
    let flags = vec![("seed".to_string(), "9".to_string())];
    let c = RunConfig::resolve(Some(&cfg), &flags).unwrap();
    assert_eq!(c.raw("seed"), "9");
    assert_eq!(c.raw("epochs"), "7");
    assert_eq!(c.origin("epochs").to_string(), format!("{}:2", cfg.display()));
    assert_eq!(c.raw("generator"), "sde-oscillator");
    assert_eq!(c.origin("generator").to_string(), "preset sde-extrapolation");
    assert_eq!(c.raw("lr"), "auto");
}

#[test]
fn echo_lists_every_key_and_reloads() {
    let c = RunConfig::resolve(None, &[("epochs".into(), "3".into())]).unwrap();
    let text = c.echo();
    for spec in KEYS {
        assert!(text.lines().any(|l| l.starts_with(&format!("{} = ", spec.key))), "{} missing", spec.key);
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("echo.cfg");
    fs::write(&p, &text).unwrap();
    let back = RunConfig::resolve(Some(&p), &[]).unwrap();
    for spec in KEYS {
        assert_eq!(back.raw(spec.key), c.raw(spec.key));
    }
}

#[test]
fn pendulum_regression_preset_sizes() {
    let c = RunConfig::resolve(None, &[]).unwrap();
    assert_eq!(c.raw("preset"), "pendulum-regression");
    let n: Vec<usize> = ["n_train", "n_valid", "n_test"].iter().map(|k| c.get(k).unwrap()).collect();
    assert_eq!(n, vec![2000, 1000, 1000]);
}

#[test]
fn generate_is_reproducible_and_guards_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let mut args = vec!["generate", "--seed", "7", "--out", s(out)];
        args.extend(SMALL_SDE);
        cru(&args).unwrap();
    }
    let mut files: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    for f in ["config.txt", "dataset.json", "manifest.json", "test.csv", "train.csv", "train_targets.csv", "valid.csv"] {
        assert!(files.contains(&f.to_string()), "{f} not written");
    }
    for f in files.iter().filter(|f| f.ends_with(".csv") || *f == "dataset.json") {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let header = fs::read_to_string(a.join("train.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "series_id,time,x0,x1,x2,x3,x4,mask_x0,mask_x1,mask_x2,mask_x3,mask_x4");

    let mut again = vec!["generate", "--seed", "7", "--out", s(&a)];
    again.extend(SMALL_SDE);
    let err = cru(&again).unwrap_err();
    assert!(matches!(err, CliError::OutputExists(_)));
    again.push("--force");
    cru(&again).unwrap();

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["derived_seeds"]["data_train"].is_u64());
}

#[test]
fn keep_and_drop_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let mut args = vec!["generate", "--out", s(&out), "--keep-time-frac", "0.5", "--drop-value-frac", "0.2"];
    args.extend(SMALL_SDE);
    cru(&args).unwrap();
    let ds = load_dataset(&out, CsvOptions::default()).unwrap();
    for seq in &ds.split(Split::Train).unwrap().sequences {
        assert_eq!(seq.len(), 6);
        let missing = seq.mask.iter().flatten().filter(|&&m| !m).count();
        // 6 steps x 5 features, a fifth of them dropped
        assert_eq!(missing, 6);
        assert!(seq.targets.iter().flatten().all(|v| v.is_finite()));
    }
}

#[test]
fn train_eval_trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (run_dir, eval_dir, trace_dir) = (dir.path().join("run"), dir.path().join("eval"), dir.path().join("trace"));
    let mut args = vec!["train", "--out", s(&run_dir), "--workers", "2"];
    args.extend(SMALL_SDE);
    let report = cru(&args).unwrap();
    assert!(report.contains("test mse"));
    let metrics = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    // train and valid per epoch, then test
    assert_eq!(metrics.lines().count(), 5);
    let summary = fs::read_to_string(run_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), cru::train::SUMMARY_HEADER);
    assert_eq!(summary.lines().count(), 6);
    let echoed = fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(echoed.contains("epochs = 2\n#   ^ command line"));
    assert!(echoed.contains("bandwidth = 3\n#   ^ default"));

    let ckpt = run_dir.join("checkpoint.json");
    let mut args = vec!["eval", "--out", s(&eval_dir), "--checkpoint", s(&ckpt)];
    args.extend(SMALL_SDE);
    let printed: serde_json::Value = serde_json::from_str(&cru(&args).unwrap()).unwrap();
    let test_line: serde_json::Value = serde_json::from_str(metrics.lines().last().unwrap()).unwrap();
    assert_eq!(printed["mse"], test_line["mse"]);

    let mut args = vec!["trace", "--out", s(&trace_dir), "--checkpoint", s(&ckpt)];
    args.extend(SMALL_SDE);
    let out = cru(&args).unwrap();
    assert!(out.contains("correlation undefined"));
    let csv = fs::read_to_string(trace_dir.join("trace.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "series_id,time,gain_norm,noise,sparseness");

    let err = cru(&["eval", "--out", s(&eval_dir)]).unwrap_err();
    assert!(err.to_string().contains("checkpoint"));
}

#[test]
fn eval_extrapolation_matches_manual_masked_mse() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run_dir, eval_dir) = (dir.path().join("data"), dir.path().join("run"), dir.path().join("eval"));
    let base = ["--preset", "sde-extrapolation", "--set", "n_train=5", "--set", "n_valid=2", "--set", "n_test=4", "--epochs", "1"];
    let mut args = vec!["generate", "--out", s(&data), "--drop-value-frac", "0.3"];
    args.extend(base);
    cru(&args).unwrap();
    let mut args = vec!["train", "--out", s(&run_dir), "--data", s(&data)];
    args.extend(base);
    cru(&args).unwrap();
    let ckpt = run_dir.join("checkpoint.json");
    let mut args = vec!["eval", "--out", s(&eval_dir), "--data", s(&data), "--checkpoint", s(&ckpt)];
    args.extend(base);
    let printed: serde_json::Value = serde_json::from_str(&cru(&args).unwrap()).unwrap();

    let model = Cru::load(&ckpt).unwrap();
    let ds = load_dataset(&data, CsvOptions::default()).unwrap();
    let seqs = make_task(ds.split(Split::Test).unwrap(), Task::Extrapolation, ExtrapolationSplit::Median, 0).unwrap();
    let preds = predict(&model, &seqs, true, 1).unwrap();
    let (mut sse, mut n) = (0.0, 0);
    for (seq, p) in seqs.iter().zip(&preds) {
        let half = seq.len().div_ceil(2);
        for t in half..seq.len() {
            for j in 0..seq.targets[t].len() {
                if seq.target_mask[t][j] {
                    sse += (seq.targets[t][j] - p.mean[t][j]).powi(2);
                    n += 1;
                }
            }
        }
    }
    let manual = sse / n as f64;
    let reported = printed["mse"].as_f64().unwrap();
    assert!((manual - reported).abs() <= 1e-12 * manual.max(1.0), "{manual} vs {reported}");
}

#[test]
fn bench_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let table = cru(&["bench", "--dims", "4,8", "--repeats", "2", "--out", s(&out)]).unwrap();
    assert_eq!(table.lines().count(), 1 + 4 + 2);
    assert!(table.contains("speedup at 4:") && table.contains("speedup at 8:"));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "latent_dim,mode,seconds,guard_max_diff");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("4,fast,") && lines[2].starts_with("4,full,"));
    assert!(cru(&["bench", "--dims", "5", "--out", s(&out)]).is_err());
}

#[test]
fn default_output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var(OUT_ROOT_ENV, dir.path());
    let r = cru(&["bench", "--dims", "2", "--repeats", "1", "--seed", "4"]);
    std::env::remove_var(OUT_ROOT_ENV);
    r.unwrap();
    assert!(dir.path().join("bench-pendulum-regression-seed4").join("bench.csv").exists());
}

#[test]
fn usage_errors() {
    let err = cru(&["train", "--nope"]).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    assert_eq!(err.exit_code(), 2);
    let err = cru(&["train", "--set", "noequals"]).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    let err = cru(&["train", "--preset", "nothing"]).unwrap_err();
    assert!(err.to_string().contains("unknown preset"));
    let err = cru(&["bench", "--repeats", "many", "--out", "/nonexistent/never"]).unwrap_err();
    assert!(matches!(err, CliError::Value { .. }), "{err}");
}
