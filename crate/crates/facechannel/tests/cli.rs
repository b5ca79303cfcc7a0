//! End-to-end command-line tests: happy paths for every subcommand plus
//! the exit-code contract (0 success, 1 runtime/I-O, 2 usage/data).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_facechannel")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    config: PathBuf,
}

/// A small categorical dataset plus a matching model config on disk.
fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let spec = serde_json::json!({
        "n_samples": 16,
        "task": {"kind": "categorical", "e_bins": 2, "c_bins": 2},
        "image_size": 16,
        "noise_level": 0.05,
        "seed": 9
    });
    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let data_dir = root.join("data");
    let out = run(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let config = serde_json::json!({
        "input_channels": 1,
        "input_size": 16,
        "block_channels": [[4], [8]],
        "shunting_channels": 4,
        "dense_units": 16,
        "head": {"kind": "categorical", "classes": 4},
        "dropout_rate": 0.1,
        "seed": 3
    });
    let config_path = root.join("config.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    Workspace {
        _dir: dir,
        root,
        manifest: data_dir.join("manifest.csv"),
        config: config_path,
    }
}

fn train_checkpoint(ws: &Workspace, epochs: &str, seed: &str) -> PathBuf {
    let ckpt = ws.root.join(format!("model_e{epochs}_s{seed}.ckpt"));
    let out = run(&[
        "train",
        "--data",
        ws.manifest.to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
        "--epochs",
        epochs,
        "--lr",
        "0.01",
        "--batch",
        "8",
        "--seed",
        seed,
        "--out-checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    ckpt
}

#[test]
fn synth_is_deterministic_per_seed() {
    let ws = workspace();
    let spec_path = ws.root.join("spec.json");
    let hash_dir = |p: &Path| {
        let mut names: Vec<_> = std::fs::read_dir(p).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        names
            .iter()
            .flat_map(|f| std::fs::read(f).unwrap())
            .fold(0u64, |acc, b| acc.wrapping_mul(31).wrapping_add(b as u64))
    };
    let d1 = ws.root.join("again1");
    let d2 = ws.root.join("again2");
    for d in [&d1, &d2] {
        let out = run(&[
            "synth",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
            "--seed",
            "123",
        ]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(hash_dir(&d1), hash_dir(&d2));
}

#[test]
fn synth_unwritable_dir_is_runtime_error() {
    let ws = workspace();
    let out = run(&[
        "synth",
        "--spec",
        ws.root.join("spec.json").to_str().unwrap(),
        "--out",
        "/proc/forbidden/out",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn train_missing_manifest_is_usage_error() {
    let ws = workspace();
    let out = run(&[
        "train",
        "--data",
        ws.root.join("nope.csv").to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
        "--out-checkpoint",
        ws.root.join("m.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_head_mismatch_is_usage_error() {
    let ws = workspace();
    // Two classes in the config, four in the data.
    let bad = serde_json::json!({
        "input_channels": 1,
        "input_size": 16,
        "block_channels": [[4], [8]],
        "shunting_channels": 4,
        "dense_units": 16,
        "head": {"kind": "categorical", "classes": 2},
        "dropout_rate": 0.1,
        "seed": 3
    });
    let bad_path = ws.root.join("bad.json");
    std::fs::write(&bad_path, bad.to_string()).unwrap();
    let out = run(&[
        "train",
        "--data",
        ws.manifest.to_str().unwrap(),
        "--config",
        bad_path.to_str().unwrap(),
        "--epochs",
        "1",
        "--out-checkpoint",
        ws.root.join("m.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_report_is_valid_json_in_range() {
    let ws = workspace();
    let ckpt = train_checkpoint(&ws, "2", "5");
    let report = ws.root.join("report.json");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        ws.manifest.to_str().unwrap(),
        "--report-json",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let acc = parsed["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(parsed["per_class"].is_object());
    assert!(parsed.get("ccc_arousal").is_none());
}

#[test]
fn eval_corrupt_checkpoint_is_runtime_error() {
    let ws = workspace();
    let ckpt = train_checkpoint(&ws, "1", "5");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    let broken = ws.root.join("broken.ckpt");
    std::fs::write(&broken, bytes).unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        broken.to_str().unwrap(),
        "--data",
        ws.manifest.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
}

#[test]
fn finetune_replaces_head_and_preserves_stack() {
    let ws = workspace();
    let ckpt = train_checkpoint(&ws, "2", "5");
    let tuned = ws.root.join("tuned.ckpt");
    let out = run(&[
        "finetune",
        "--from-checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        ws.manifest.to_str().unwrap(),
        "--new-head",
        "4",
        "--epochs",
        "2",
        "--lr",
        "0.05",
        "--batch",
        "8",
        "--seed",
        "8",
        "--out-checkpoint",
        tuned.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    use facechannel::model::checkpoint::load_checkpoint;
    let (before, _) = load_checkpoint::<f32>(&ckpt).unwrap();
    let (after, _) = load_checkpoint::<f32>(&tuned).unwrap();
    assert_eq!(before.conv_stack_hash(), after.conv_stack_hash());
    assert_ne!(before.params_hash(), after.params_hash());
}

#[test]
fn finetune_zero_epochs_keeps_fresh_head() {
    let ws = workspace();
    let ckpt = train_checkpoint(&ws, "1", "5");
    // A dimensional dataset so the replaced arousal/valence head matches the targets.
    let av_spec = serde_json::json!({
        "n_samples": 8,
        "task": {"kind": "dimensional"},
        "image_size": 16,
        "noise_level": 0.05,
        "seed": 9
    });
    let av_spec_path = ws.root.join("av_spec.json");
    std::fs::write(&av_spec_path, av_spec.to_string()).unwrap();
    let av_dir = ws.root.join("av_data");
    let out = run(&[
        "synth",
        "--spec",
        av_spec_path.to_str().unwrap(),
        "--out",
        av_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let av_manifest = av_dir.join("manifest.csv");
    let tuned = ws.root.join("tuned0.ckpt");
    let out = run(&[
        "finetune",
        "--from-checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        av_manifest.to_str().unwrap(),
        "--new-head",
        "av",
        "--epochs",
        "0",
        "--seed",
        "8",
        "--out-checkpoint",
        tuned.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    use facechannel::model::checkpoint::load_checkpoint;
    use facechannel::{HeadSpec, SeededRng};
    let (tuned_model, _) = load_checkpoint::<f32>(&tuned).unwrap();
    assert_eq!(tuned_model.config.head, HeadSpec::Dimensional);
    // The saved head equals a freshly replaced one with the same seed.
    let (mut expect, _) = load_checkpoint::<f32>(&ckpt).unwrap();
    let mut rng = SeededRng::from_seed_stream(8, 3);
    expect.replace_head(HeadSpec::Dimensional, &mut rng).unwrap();
    let idx = tuned_model.layer_index("head").unwrap();
    let got = tuned_model.layers[idx].op.param_tensors();
    let want = expect.layers[idx].op.param_tensors();
    for ((_, a), (_, b)) in got.iter().zip(&want) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn train_lr_zero_keeps_initial_params() {
    let ws = workspace();
    let a = train_checkpoint(&ws, "0", "5");
    let ckpt = ws.root.join("lr0.ckpt");
    let out = run(&[
        "train",
        "--data",
        ws.manifest.to_str().unwrap(),
        "--config",
        ws.config.to_str().unwrap(),
        "--epochs",
        "2",
        "--lr",
        "0",
        "--batch",
        "8",
        "--seed",
        "5",
        "--out-checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    use facechannel::model::checkpoint::load_checkpoint;
    let (initial, _) = load_checkpoint::<f32>(&a).unwrap();
    let (trained, _) = load_checkpoint::<f32>(&ckpt).unwrap();
    assert_eq!(initial.params_only_hash(), trained.params_only_hash());
}

#[test]
fn params_bad_config_is_usage_error() {
    let ws = workspace();
    let bad = ws.root.join("badcfg.json");
    std::fs::write(&bad, "{\"nope\": 1}").unwrap();
    let out = run(&["params", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcam_writes_ppm_and_is_deterministic() {
    let ws = workspace();
    let ckpt = train_checkpoint(&ws, "2", "5");
    let image = std::fs::read_dir(ws.manifest.parent().unwrap())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "pgm"))
        .unwrap();
    let run_once = |name: &str| {
        let out_path = ws.root.join(name);
        let out = run(&[
            "gradcam",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--image",
            image.to_str().unwrap(),
            "--target",
            "1",
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(&out_path).unwrap()
    };
    let a = run_once("h1.ppm");
    let b = run_once("h2.ppm");
    assert_eq!(a, b);
    assert!(a.starts_with(b"P6"));

    let out = run(&[
        "gradcam",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--target",
        "9",
        "--out",
        ws.root.join("x.ppm").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_flags_are_usage_errors() {
    let out = run(&["train"]);
    assert_eq!(code(&out), 2);
    let out = run(&["nonsense"]);
    assert_eq!(code(&out), 2);
}
