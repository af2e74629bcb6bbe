//! End-to-end tests of the `svt` binary: artifact contents, determinism,
//! and the exit-code contract (0 success, 1 usage, 2 runtime/data).

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use svt::config::TrainConfig;
use svt::videoio::{
    generate_synthetic_video, write_raw_video, BackgroundStyle, MotionClass, SyntheticSpec,
};

fn svt_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = svt_cmd(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_fail(args: &[&str], want_code: i32) -> String {
    let out = svt_cmd(args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(out.status.code(), Some(want_code), "{args:?} stderr:\n{stderr}");
    stderr
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn gen_data(dir: &Path, classes: usize, per_class: usize, frames: usize, seed: u64) {
    run_ok(&[
        "gen-data",
        "--out",
        path_str(dir),
        "--classes",
        &classes.to_string(),
        "--per-class",
        &per_class.to_string(),
        "--frames",
        &frames.to_string(),
        "--size",
        "32",
        "--seed",
        &seed.to_string(),
    ]);
}

/// Tiny backbone, shrunken training views: fast enough to pretrain in
/// milliseconds while exercising the full pipeline.
fn tiny_config(data: &Path, epochs: usize, seed: u64) -> String {
    format!(
        "data = {}\nbatch_size = 2\nepochs = {epochs}\nwarmup_epochs = 0\n\
         base_lr = 5e-4\nembed_dim = 8\nn_blocks = 1\nn_heads = 2\npatch_size = 16\n\
         max_spatial_tokens = 196\nmax_temporal_tokens = 16\nproj_dim = 4\n\
         view.global_size = 32\nview.local_size = 16\ncheckpoint_interval = 2\nseed = {seed}\n",
        data.display()
    )
}

/// Sorted (name, bytes) listing of a directory's plain files.
fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_file())
        .map(|e| {
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

/// Metrics lines parsed as JSON with the wall-clock field removed, so runs
/// can be compared on the deterministic fields.
fn metrics_without_wall(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

#[test]
fn gen_data_writes_labeled_videos_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen_data(&a, 4, 3, 16, 7);
    gen_data(&b, 4, 3, 16, 7);

    let files = dir_files(&a);
    let videos: Vec<_> = files.iter().filter(|(n, _)| n.ends_with(".svtvid")).collect();
    assert_eq!(videos.len(), 12);
    let labels = std::fs::read_to_string(a.join("labels.tsv")).unwrap();
    let rows: Vec<(&str, &str)> =
        labels.lines().map(|l| l.split_once('\t').expect("tab-separated")).collect();
    assert_eq!(rows.len(), 12);
    for (name, class) in &rows {
        assert!(name.ends_with(".svtvid"));
        let c: usize = class.parse().unwrap();
        assert!(c < 4);
        assert!(a.join(name).is_file(), "label row without file: {name}");
    }
    assert!(a.join("config.digest").is_file());

    // Same flags, bit-identical directory.
    assert_eq!(files, dir_files(&b));

    // Different seed, different video bytes.
    let c = tmp.path().join("c");
    gen_data(&c, 4, 3, 16, 8);
    assert_ne!(dir_files(&a), dir_files(&c));
}

#[test]
fn gen_data_rejects_too_few_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let stderr = run_fail(
        &["gen-data", "--out", path_str(&tmp.path().join("d")), "--frames", "8"],
        1,
    );
    assert!(stderr.contains("16"), "should explain the 16-frame minimum: {stderr}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    run_fail(&["gen-data", "--out", "/tmp/x", "--bogus"], 1);
    run_fail(&[], 1); // no subcommand
}

#[test]
fn pretrain_smoke_completes_quickly_on_desk_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 2, 1, 16, 1);
    // Desk-scale defaults for everything but the step budget: 2 videos,
    // batch 2, 3 epochs -> 3 steps.
    let cfg = format!(
        "data = {}\nbatch_size = 2\nepochs = 3\nwarmup_epochs = 1\ncheckpoint_interval = 2\nseed = 11\n",
        data.display()
    );
    let cfg_path = tmp.path().join("smoke.cfg");
    std::fs::write(&cfg_path, &cfg).unwrap();
    let out = tmp.path().join("run");

    let started = Instant::now();
    run_ok(&["pretrain", "--config", path_str(&cfg_path), "--out", path_str(&out)]);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "desk smoke took {elapsed:.1}s");

    let metrics = metrics_without_wall(&out.join("metrics.jsonl"));
    assert_eq!(metrics.len(), 3);
    for (i, record) in metrics.iter().enumerate() {
        assert_eq!(record["step"].as_u64().unwrap(), i as u64);
        assert!(record["total"].as_f64().unwrap().is_finite());
    }

    // The digest file matches the parsed config, and the final checkpoint
    // carries a sidecar that round-trips to the same digest.
    let digest = std::fs::read_to_string(out.join("config.digest")).unwrap();
    let expected = TrainConfig::parse_str(&cfg).unwrap().digest();
    assert_eq!(digest.trim(), expected);
    let sidecar =
        std::fs::read_to_string(out.join("checkpoint-final").join("config.txt")).unwrap();
    assert_eq!(TrainConfig::parse_str(&sidecar).unwrap().digest(), expected);
    assert!(out.join("checkpoint-000002").is_dir());
}

#[test]
fn pretrain_rejects_unknown_config_key_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("bad.cfg");
    std::fs::write(&cfg_path, "data = /tmp/nowhere\nlerning_rate = 3\n").unwrap();
    let stderr = run_fail(
        &["pretrain", "--config", path_str(&cfg_path), "--out", path_str(&tmp.path().join("o"))],
        2,
    );
    assert!(stderr.contains("lerning_rate"), "should name the key: {stderr}");
}

#[test]
fn pretrain_resume_reproduces_the_metrics_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 2, 2, 16, 2);
    let cfg_path = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg_path, tiny_config(&data, 3, 5)).unwrap(); // 4 videos -> 2 steps/epoch, 6 steps
    let full = tmp.path().join("full");
    run_ok(&["pretrain", "--config", path_str(&cfg_path), "--out", path_str(&full)]);
    let reference = metrics_without_wall(&full.join("metrics.jsonl"));
    assert_eq!(reference.len(), 6);

    let resumed = tmp.path().join("resumed");
    run_ok(&[
        "pretrain",
        "--config",
        path_str(&cfg_path),
        "--out",
        path_str(&resumed),
        "--resume",
        path_str(&full.join("checkpoint-000002")),
    ]);
    let tail = metrics_without_wall(&resumed.join("metrics.jsonl"));
    assert_eq!(tail, reference[2..], "resumed stream must continue the original");
}

#[test]
fn probe_writes_schema_complete_deterministic_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 2, 3, 16, 3);
    let cfg_path = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg_path, tiny_config(&data, 1, 5)).unwrap();
    let run = tmp.path().join("run");
    run_ok(&["pretrain", "--config", path_str(&cfg_path), "--out", path_str(&run)]);
    let ckpt = run.join("checkpoint-final");

    let probe = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "probe",
            "--ckpt",
            path_str(&ckpt),
            "--data",
            path_str(&data),
            "--out",
            path_str(out),
            "--test-per-class",
            "1",
        ];
        args.extend_from_slice(extra);
        run_ok(&args);
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("probe_report.json")).unwrap())
                .unwrap();
        report
    };

    let out_a = tmp.path().join("pa");
    let report = probe(&out_a, &[]);
    for field in ["accuracy", "n_train", "n_test", "seed", "config_digest"] {
        assert!(report.get(field).is_some(), "report missing {field}");
    }
    assert_eq!(report["n_train"].as_u64(), Some(4));
    assert_eq!(report["n_test"].as_u64(), Some(2));
    let accuracy = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accuracy));
    let predictions = std::fs::read_to_string(out_a.join("predictions.jsonl")).unwrap();
    assert_eq!(predictions.lines().count(), 2);
    for line in predictions.lines() {
        let p: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(p["file"].is_string() && p["label"].is_u64() && p["pred"].is_u64());
        assert_eq!(p["scores"].as_array().unwrap().len(), 2);
    }

    // Same inputs, bit-identical report; control arms also run.
    let out_b = tmp.path().join("pb");
    let report_b = probe(&out_b, &[]);
    assert_eq!(report, report_b);
    probe(&tmp.path().join("pc"), &["--random-baseline"]);
    probe(&tmp.path().join("pd"), &["--slow-only"]);
    probe(&tmp.path().join("pe"), &["--multicrop"]);
}

#[test]
fn probe_without_labels_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 2, 2, 16, 3);
    let cfg_path = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg_path, tiny_config(&data, 1, 5)).unwrap();
    let run = tmp.path().join("run");
    run_ok(&["pretrain", "--config", path_str(&cfg_path), "--out", path_str(&run)]);
    std::fs::remove_file(data.join("labels.tsv")).unwrap();
    let stderr = run_fail(
        &[
            "probe",
            "--ckpt",
            path_str(&run.join("checkpoint-final")),
            "--data",
            path_str(&data),
            "--out",
            path_str(&tmp.path().join("p")),
        ],
        2,
    );
    assert!(stderr.contains("labels.tsv"), "{stderr}");
}

#[test]
fn probe_detects_checkpoint_config_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 2, 2, 16, 3);
    let cfg_path = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg_path, tiny_config(&data, 1, 5)).unwrap();
    let run = tmp.path().join("run");
    run_ok(&["pretrain", "--config", path_str(&cfg_path), "--out", path_str(&run)]);
    let sidecar = run.join("checkpoint-final").join("config.txt");
    let tampered = std::fs::read_to_string(&sidecar).unwrap().replace("seed=5", "seed=6");
    std::fs::write(&sidecar, tampered).unwrap();
    let stderr = run_fail(
        &[
            "probe",
            "--ckpt",
            path_str(&run.join("checkpoint-final")),
            "--data",
            path_str(&data),
            "--out",
            path_str(&tmp.path().join("p")),
        ],
        2,
    );
    assert!(stderr.contains("digest"), "{stderr}");
}

#[test]
fn attn_map_exports_normalized_rows_and_frame_sized_images() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 2, 1, 20, 4);
    let cfg_path = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg_path, tiny_config(&data, 1, 5)).unwrap();
    let run = tmp.path().join("run");
    run_ok(&["pretrain", "--config", path_str(&cfg_path), "--out", path_str(&run)]);

    let video = data.join("class0_000.svtvid");
    let out = tmp.path().join("attn");
    run_ok(&[
        "attn-map",
        "--ckpt",
        path_str(&run.join("checkpoint-final")),
        "--video",
        path_str(&video),
        "--out",
        path_str(&out),
    ]);

    let files = dir_files(&out);
    let csvs: Vec<_> = files.iter().filter(|(n, _)| n.ends_with(".csv")).collect();
    let pgms: Vec<_> = files.iter().filter(|(n, _)| n.ends_with(".pgm")).collect();
    assert_eq!(csvs.len(), 4, "four frames, one CSV each");
    assert_eq!(pgms.len(), 4, "four frames, one image each");

    for (name, bytes) in &csvs {
        let text = std::str::from_utf8(bytes).unwrap();
        let values: Vec<f64> =
            text.trim().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 196, "{name}: one value per spatial token");
        let sum: f64 = values.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-6, "{name}: row sums to {sum}");
        assert!(values.iter().all(|v| *v >= 0.0));
    }
    for (name, bytes) in &pgms {
        let header = b"P5\n32 32\n255\n";
        assert!(bytes.starts_with(header), "{name}: source frames are 32x32");
        assert_eq!(bytes.len(), header.len() + 32 * 32, "{name}: one byte per pixel");
    }

    // Rerun is bit-identical.
    let out_b = tmp.path().join("attn-b");
    run_ok(&[
        "attn-map",
        "--ckpt",
        path_str(&run.join("checkpoint-final")),
        "--video",
        path_str(&video),
        "--out",
        path_str(&out_b),
    ]);
    assert_eq!(files, dir_files(&out_b));
}

#[test]
fn attn_map_rejects_videos_shorter_than_four_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, 2, 1, 16, 4);
    let cfg_path = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg_path, tiny_config(&data, 1, 5)).unwrap();
    let run = tmp.path().join("run");
    run_ok(&["pretrain", "--config", path_str(&cfg_path), "--out", path_str(&run)]);

    let spec = SyntheticSpec {
        motion_class: MotionClass::ALL[0],
        n_frames: 3,
        height: 32,
        width: 32,
        object_size: 8,
        speed: 0.5,
        background_style: BackgroundStyle::Gradient,
        seed: 1,
    };
    let (short, _) = generate_synthetic_video(&spec).unwrap();
    let short_path = tmp.path().join("short.svtvid");
    write_raw_video(&short, &short_path).unwrap();

    let stderr = run_fail(
        &[
            "attn-map",
            "--ckpt",
            path_str(&run.join("checkpoint-final")),
            "--video",
            path_str(&short_path),
            "--out",
            path_str(&tmp.path().join("attn")),
        ],
        2,
    );
    assert!(stderr.contains("too short"), "{stderr}");
}
