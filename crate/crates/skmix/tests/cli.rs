use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use skmix::{save_checkpoint, write_container, Checkpoint};
use skmix_core::{ClipFeatures, ModelConfig, ParamStore, Precision, SkatingMixer, Tensor};

const CONFIG: &str = r#"
seed = 3
precision = 32
output_dir = "run"

[model]
channels = 8
audio_tokens = 2
video_tokens = 3
max_clips = 4
heads = 2

[train]
lr = 1e-3
epochs = 2
batch_size = 4

[data]
test_videos = 4

[synth]
num_videos = 12
min_clips = 2
max_clips = 4
channels = 8
audio_tokens = 2
video_tokens = 3

[gradcheck]
clips = 2

[flops]
sweep = [1, 2, 4]
"#;

fn skmix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skmix"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    let synth = json(&skmix(d, &["synth", "--config", "run.toml"]));
    assert_eq!(synth["train_videos"], 8);
    assert_eq!(synth["test_videos"], 4);

    let train = json(&skmix(d, &["train", "--config", "run.toml"]));
    assert_eq!(train["epochs"], 2);
    assert_eq!(train["steps"], 4);
    let log = std::fs::read_to_string(d.join("run/loss_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let ckpt = d.join("run/checkpoint.skck");
    assert!(ckpt.exists());
    let ckpt = ckpt.to_str().unwrap();

    let eval = json(&skmix(d, &["eval", "--config", "run.toml", "--checkpoint", ckpt]));
    assert_eq!(eval["n"], 4);
    assert_eq!(eval["mse"].as_array().unwrap().len(), 2);

    let manifest = std::fs::read_to_string(d.join("run/test.jsonl")).unwrap();
    let first: Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let features = d.join("run").join(first["features"].as_str().unwrap());
    let features = features.to_str().unwrap();
    let score = json(&skmix(d, &["score", "--checkpoint", ckpt, "--features", features]));
    let trace = json(&skmix(d, &["trace", "--checkpoint", ckpt, "--features", features]));
    let full: Vec<f64> = trace["full"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(score["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect::<Vec<_>>(), full);

    let rank = json(&skmix(d, &["rank", "--checkpoint", ckpt, "--manifest", "run/test.jsonl", "--k", "3"]));
    assert_eq!(rank["entries"].as_array().unwrap().len(), 3);

    let flops = json(&skmix(d, &["flops", "--config", "run.toml"]));
    assert!(flops.is_object());

    // Same seed, same checkpoint bytes.
    let first_bytes = std::fs::read(ckpt).unwrap();
    json(&skmix(d, &["synth", "--config", "run.toml", "--out", "again"]));
    json(&skmix(d, &["train", "--config", "run.toml", "--out", "again"]));
    let second = std::fs::read(d.join("again/checkpoint.skck")).unwrap();
    assert_eq!(first_bytes, second);
}

#[test]
fn zero_checkpoint_scores_its_bias() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = ModelConfig::toy(8, 2, 3, 4, 2);
    let mut store = ParamStore::new(Precision::F64);
    let model = SkatingMixer::build(&cfg, &mut store, 5).unwrap();
    model.zero_model(&mut store);
    store.value_mut(model.head.bias).data_mut().copy_from_slice(&[1.25, -0.5]);
    save_checkpoint(&d.join("z.skck"), &Checkpoint::capture(&cfg, &store, None)).unwrap();
    let clips: Vec<ClipFeatures> = (0..3)
        .map(|i| ClipFeatures::new(Tensor::full(&[2, 8], i as f64), Tensor::full(&[3, 8], -0.3)).unwrap())
        .collect();
    write_container(&d.join("v.fsmx"), &clips, Precision::F64).unwrap();
    let score = json(&skmix(d, &["score", "--checkpoint", "z.skck", "--features", "v.fsmx"]));
    assert_eq!(score["values"], serde_json::json!([1.25, -0.5]));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(skmix(d, &["train", "--config", "missing.toml"]).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "seed = 1\nunknown = 2\n").unwrap();
    assert_eq!(skmix(d, &["train", "--config", "bad.toml"]).status.code(), Some(2));
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    assert_eq!(skmix(d, &["train", "--config", "run.toml"]).status.code(), Some(3));
    std::fs::write(d.join("junk.fsmx"), b"ABCDxxxxxxxxxxxxxxxxxxxxxx").unwrap();
    let cfg = ModelConfig::toy(8, 2, 3, 4, 2);
    let mut store = ParamStore::new(Precision::F32);
    SkatingMixer::build(&cfg, &mut store, 0).unwrap();
    save_checkpoint(&d.join("m.skck"), &Checkpoint::capture(&cfg, &store, None)).unwrap();
    let out = skmix(d, &["score", "--checkpoint", "m.skck", "--features", "junk.fsmx"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0x41 0x42 0x43 0x44"));
}
