use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egoflow::formats::{write_frame_stream, write_labels, write_pgm_dir};
use egoflow::synthetic::drifting_frames;
use egoflow::{Architecture, FlowField, FlowVolume, NetworkModel, NormStats};
use tempfile::TempDir;

fn egoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egoflow"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = egoflow(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        stdout.lines().count(),
        1,
        "summary should be one line: {stdout:?}"
    );
    stdout
}

fn code(args: &[&str]) -> i32 {
    egoflow(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn field<'a>(summary: &'a str, key: &str) -> &'a str {
    summary
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {summary:?}"))
}

fn initialized_model(dir: &Path, classes: usize) -> PathBuf {
    let labels = (0..classes).map(|c| format!("class{c}")).collect();
    let model = NetworkModel::initialized(
        Architecture::standard(classes),
        NormStats::unit(),
        labels,
        5,
    )
    .unwrap();
    let path = dir.join("init.egnt");
    model.save(&path).unwrap();
    path
}

#[test]
fn synth_train_evaluate_smoke() {
    let dir = TempDir::new().unwrap();
    let vols = dir.path().join("train.egvd");
    let labels = dir.path().join("train.labels");
    let model = dir.path().join("model.egnt");
    let metrics = dir.path().join("metrics.json");
    let s = ok(&[
        "synth",
        "--classes",
        "4",
        "--per-class",
        "200",
        "--out",
        p(&vols),
        "--seed",
        "3",
    ]);
    assert_eq!(field(&s, "volumes"), "800");
    assert!(labels.exists());
    ok(&[
        "train",
        "--volumes",
        p(&vols),
        "--labels",
        p(&labels),
        "--out",
        p(&model),
        "--iterations",
        "20",
        "--batch-size",
        "8",
        "--seed",
        "3",
    ]);
    let s = ok(&[
        "evaluate",
        "--model",
        p(&model),
        "--volumes",
        p(&vols),
        "--out",
        p(&metrics),
    ]);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    let recall = doc["macro_recall"].as_f64().expect("macro_recall field");
    assert!((0.0..=1.0).contains(&recall));
    assert_eq!(doc["samples"], 800);
    assert_eq!(doc["per_class"].as_array().unwrap().len(), 4);
    assert_eq!(field(&s, "samples"), "800");
}

#[test]
fn classify_rejects_mismatched_labels_file() {
    let dir = TempDir::new().unwrap();
    let model = initialized_model(dir.path(), 6);
    let vols = dir.path().join("v.egvd");
    FlowVolume::save_all(&vols, &[FlowVolume::zeros(0, None)]).unwrap();
    let labels = dir.path().join("five.labels");
    let names: Vec<String> = (0..5).map(|c| format!("c{c}")).collect();
    write_labels(&labels, &names).unwrap();
    let out = dir.path().join("scores.json");
    let args = [
        "classify",
        "--model",
        p(&model),
        "--volumes",
        p(&vols),
        "--out",
        p(&out),
    ];
    assert_eq!(code(&[&args[..], &["--labels", p(&labels)]].concat()), 3);
    ok(&args);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let scores = doc["volumes"][0]["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 6);
}

#[test]
fn visualize_kernel_writes_ten_svgs() {
    let dir = TempDir::new().unwrap();
    let model = initialized_model(dir.path(), 6);
    let out = dir.path().join("kernels");
    let s = ok(&[
        "visualize-kernels",
        "--model",
        p(&model),
        "--kernel",
        "7",
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(field(&s, "files"), "10");
    let svgs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "svg")
        })
        .count();
    assert_eq!(svgs, 10);
    assert!(out.join("kernel_7_pair_9.svg").exists());
    assert_eq!(
        code(&[
            "visualize-kernels",
            "--model",
            p(&model),
            "--kernel",
            "30",
            "--out-dir",
            p(&out)
        ]),
        3
    );
}

#[test]
fn extract_flow_counts_fields() {
    let dir = TempDir::new().unwrap();
    let frames = dir.path().join("frames");
    write_pgm_dir(&frames, &drifting_frames(256, 256, 60, (1, 0), 15.0, 2)).unwrap();
    let flow = dir.path().join("a.egfl");
    let s = ok(&["extract-flow", "--frames", p(&frames), "--out", p(&flow)]);
    assert_eq!(field(&s, "fields"), "59");
    let fields = FlowField::load_all(&flow).unwrap();
    assert_eq!(fields.len(), 59);
    assert!((fields[10].u_at(16, 16) - 1.0).abs() < 0.1);

    let stream = dir.path().join("fast.egfr");
    let fast = drifting_frames(256, 256, 120, (1, 0), 30.0, 2);
    write_frame_stream(std::fs::File::create(&stream).unwrap(), &fast, 30.0).unwrap();
    let s = ok(&["extract-flow", "--frames", p(&stream), "--out", p(&flow)]);
    assert_eq!(field(&s, "frames"), "60");
    assert_eq!(FlowField::load_all(&flow).unwrap().len(), 59);
}

#[test]
fn missing_and_malformed_inputs() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = dir.path().join("x.egfl");
    assert_eq!(
        code(&["extract-flow", "--frames", p(&empty), "--out", p(&out)]),
        2
    );
    let nowhere = dir.path().join("nowhere.egfr");
    assert_eq!(
        code(&["extract-flow", "--frames", p(&nowhere), "--out", p(&out)]),
        2
    );
    let junk = dir.path().join("junk.egvd");
    std::fs::write(&junk, b"not a volume file").unwrap();
    assert_eq!(
        code(&["fit-norm", "--volumes", p(&junk), "--out", p(&out)]),
        3
    );
    assert_eq!(code(&["fit-norm", "--volumes", p(&junk)]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn config_file_and_flags_layer() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "eta = 5\nseed = 8\n").unwrap();
    let s = ok(&["config"]);
    assert_eq!(field(&s, "eta"), "21");
    let s = ok(&["--config", p(&cfg), "config"]);
    assert_eq!((field(&s, "eta"), field(&s, "seed")), ("5", "8"));
    let s = ok(&["--config", p(&cfg), "--seed", "9", "config"]);
    assert_eq!(field(&s, "seed"), "9");
    std::fs::write(&cfg, "grid = 16\n").unwrap();
    assert_eq!(code(&["--config", p(&cfg), "config"]), 1);
}

#[test]
fn outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let run = |tag: &str| {
        let vols = dir.path().join(format!("{tag}.egvd"));
        let model = dir.path().join(format!("{tag}.egnt"));
        let labels = dir.path().join(format!("{tag}.labels"));
        ok(&[
            "synth",
            "--classes",
            "2",
            "--per-class",
            "12",
            "--blocks-per-sequence",
            "6",
            "--out",
            p(&vols),
            "--seed",
            "11",
        ]);
        ok(&[
            "train",
            "--volumes",
            p(&vols),
            "--labels",
            p(&labels),
            "--out",
            p(&model),
            "--iterations",
            "3",
            "--batch-size",
            "4",
            "--seed",
            "11",
        ]);
        (
            std::fs::read(&vols).unwrap(),
            std::fs::read(&model).unwrap(),
        )
    };
    let (a, b) = (run("a"), run("b"));
    assert!(a.0 == b.0, "volume bytes differ");
    assert!(a.1 == b.1, "model bytes differ");
}

#[test]
fn frames_to_timeline_round_trip() {
    let dir = TempDir::new().unwrap();
    let mut flows = Vec::new();
    for (name, step) in [("right", (2, 0)), ("down", (0, 2))] {
        let frames = dir.path().join(name);
        write_pgm_dir(&frames, &drifting_frames(256, 256, 120, step, 15.0, 4)).unwrap();
        let flow = dir.path().join(format!("{name}.egfl"));
        ok(&["extract-flow", "--frames", p(&frames), "--out", p(&flow)]);
        flows.push(flow);
    }
    let vols = dir.path().join("all.egvd");
    ok(&[
        "build-volumes",
        "--flow",
        p(&flows[0]),
        "--label",
        "0",
        "--out",
        p(&vols),
    ]);
    let s = ok(&[
        "build-volumes",
        "--flow",
        p(&flows[1]),
        "--label",
        "1",
        "--out",
        p(&vols),
        "--append",
    ]);
    assert_eq!(field(&s, "volumes"), "4");

    let labels = dir.path().join("names.labels");
    write_labels(&labels, &["right".to_string(), "down".to_string()]).unwrap();
    let norm = dir.path().join("norm.json");
    ok(&["fit-norm", "--volumes", p(&vols), "--out", p(&norm)]);
    let model = dir.path().join("m.egnt");
    ok(&[
        "train",
        "--volumes",
        p(&vols),
        "--labels",
        p(&labels),
        "--norm",
        p(&norm),
        "--out",
        p(&model),
        "--iterations",
        "5",
        "--batch-size",
        "2",
    ]);

    let single = dir.path().join("right.egvd");
    ok(&["build-volumes", "--flow", p(&flows[0]), "--out", p(&single)]);
    let timeline = dir.path().join("t.json");
    let csv = dir.path().join("t.csv");
    let s = ok(&[
        "segment",
        "--model",
        p(&model),
        "--volumes",
        p(&single),
        "--out",
        p(&timeline),
        "--csv",
        p(&csv),
        "--eta",
        "3",
    ]);
    assert_eq!(field(&s, "blocks"), "2");
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&timeline).unwrap()).unwrap();
    let segs = doc["segments"].as_array().unwrap();
    assert_eq!(segs.last().unwrap()["end_s"].as_f64(), Some(4.0));
    assert!(std::fs::read_to_string(&csv)
        .unwrap()
        .starts_with("start_s,end_s,label,score\n"));
    assert_eq!(
        code(&[
            "segment",
            "--model",
            p(&model),
            "--volumes",
            p(&vols),
            "--out",
            p(&timeline)
        ]),
        3
    );

    let affinity = dir.path().join("aff.csv");
    ok(&[
        "affinity",
        "--model",
        p(&model),
        "--volumes",
        p(&vols),
        "--out",
        p(&affinity),
    ]);
    assert!(std::fs::read_to_string(&affinity)
        .unwrap()
        .starts_with("class,k0,"));

    let moved = dir.path().join("t.egnt");
    let s = ok(&[
        "transfer",
        "--init",
        p(&model),
        "--volumes",
        p(&vols),
        "--labels",
        p(&labels),
        "--out",
        p(&moved),
        "--mode",
        "last-layer",
        "--iterations",
        "4",
        "--batch-size",
        "2",
    ]);
    assert_eq!(field(&s, "mode"), "last-layer");
    let (a, b) = (
        NetworkModel::load(&model).unwrap(),
        NetworkModel::load(&moved).unwrap(),
    );
    assert_eq!(a.params.c1, b.params.c1);
}
