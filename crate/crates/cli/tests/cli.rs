use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use uvot_core::dataset::{write_annotations, Annotation};
use uvot_core::imaging::{load_image, save_image, Image};
use uvot_core::model::save_checkpoint;
use uvot_core::{BBox, ModelConfig, ModelParams};

fn uvot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvot"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn pattern_image(h: usize, w: usize, seed: usize) -> Image<f32> {
    Image::from_fn(h, w, |y, x, c| {
        ((y * 31 + x * 17 + c * 7 + seed * 13) % 256) as f32 / 255.0
    })
    .unwrap()
}

fn write_frames(dir: &Path, frames: &[(&str, usize, usize)]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, (name, h, w)) in frames.iter().enumerate() {
        save_image(&pattern_image(*h, *w, i), &dir.join(name)).unwrap();
    }
}

fn tiny_checkpoint(dir: &Path, h: usize, w: usize) -> PathBuf {
    let cfg = ModelConfig::tiny(h, w).with_seed(1);
    let params = ModelParams::<f32>::init(&cfg).unwrap();
    let path = dir.join("model.uwtr");
    save_checkpoint(&params, &cfg, &path).unwrap();
    path
}

fn bx(x: f64, y: f64) -> Annotation {
    Some(BBox::new(x, y, 20.0, 10.0).unwrap())
}

/// A sequence of `frames` boxes drifting right by one pixel per frame.
fn track(frames: usize, offset: f64) -> Vec<Annotation> {
    (0..frames)
        .map(|i| bx(10.0 + i as f64 + offset, 30.0))
        .collect()
}

fn seq_json(name: &str, boxes: &[Annotation], uwv: &str, wcv: &str, flags: &[&str]) -> Value {
    let boxes: Vec<Value> = boxes
        .iter()
        .map(|b| match b {
            Some(b) => json!([b.x, b.y, b.w, b.h]),
            None => Value::Null,
        })
        .collect();
    json!({
        "name": name,
        "category": "fish",
        "width": 200,
        "height": 100,
        "boxes": boxes,
        "attributes": {"flags": flags, "uwv": uwv, "wcv": wcv},
    })
}

fn write_manifest(dir: &Path, sequences: Vec<Value>) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("dataset.json");
    std::fs::write(
        &path,
        json!({"name": "fixture", "sequences": sequences}).to_string(),
    )
    .unwrap();
    path
}

fn eval_fixture(root: &Path) -> (PathBuf, Vec<(&'static str, Vec<Annotation>)>) {
    let seqs = vec![
        ("crab-1", track(45, 0.0)),
        ("eel-2", {
            let mut t = track(50, 0.0);
            t[10] = None;
            t
        }),
    ];
    let manifest = write_manifest(
        &root.join("data"),
        vec![
            seq_json("crab-1", &seqs[0].1, "Low", "Blue", &["PO"]),
            seq_json("eel-2", &seqs[1].1, "High", "Green", &[]),
        ],
    );
    (manifest, seqs)
}

fn write_results(dir: &Path, seqs: &[(&str, Vec<Annotation>)], shift: f64) {
    std::fs::create_dir_all(dir).unwrap();
    for (name, boxes) in seqs {
        let moved: Vec<Annotation> = boxes
            .iter()
            .map(|b| b.map(|b| BBox::new(b.x + shift, b.y, b.w, b.h).unwrap()))
            .collect();
        write_annotations(&dir.join(format!("{name}.txt")), &moved).unwrap();
    }
}

#[test]
fn enhance_gamma_one_keeps_pixels() {
    let root = tempfile::tempdir().unwrap();
    let input = root.path().join("in");
    let out = root.path().join("out");
    write_frames(&input, &[("a.png", 12, 10), ("b.png", 7, 9)]);
    let o = uvot(&[
        "enhance",
        "--input",
        s(&input),
        "--method",
        "gamma",
        "--gamma",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["a.png", "b.png"] {
        let a: Image<f32> = load_image(&input.join(name)).unwrap();
        let b: Image<f32> = load_image(&out.join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let summary = read_json(&out.join("enhance_summary.json"));
    assert_eq!(summary["frames"][0]["frame"], "a.png");
    assert_eq!(summary["frames"][0]["psnr"], "inf");
    let snapshot = std::fs::read_to_string(out.join("run_config.toml")).unwrap();
    assert!(snapshot.contains("command = \"enhance\""));
    assert!(snapshot.contains("gamma = 1.0"));
}

#[test]
fn enhance_classical_methods_write_every_frame() {
    let root = tempfile::tempdir().unwrap();
    let input = root.path().join("in");
    write_frames(&input, &[("f1.png", 8, 8), ("f2.bmp", 8, 8)]);
    std::fs::write(input.join("notes.txt"), "not a frame").unwrap();
    for method in ["wb", "he", "gamma"] {
        let out = root.path().join(method);
        let o = uvot(&[
            "enhance",
            "--input",
            s(&input),
            "--method",
            method,
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{method}: {}", stderr(&o));
        assert!(out.join("f1.png").is_file() && out.join("f2.bmp").is_file());
        assert!(!out.join("notes.txt").exists());
        assert_eq!(
            read_json(&out.join("enhance_summary.json"))["frames"]
                .as_array()
                .unwrap()
                .len(),
            2
        );
    }
}

#[test]
fn enhance_network_names_indivisible_frame() {
    let root = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(root.path(), 16, 16);
    let input = root.path().join("in");
    write_frames(&input, &[("good.png", 16, 16), ("odd.png", 18, 16)]);
    let out = root.path().join("out");
    let o = uvot(&[
        "enhance",
        "--input",
        s(&input),
        "--method",
        "uwie-tr",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("IndivisibleWindow"), "{err}");
    assert!(err.contains("odd.png"), "{err}");
}

#[test]
fn enhance_network_on_matching_frames() {
    let root = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(root.path(), 16, 16);
    let input = root.path().join("in");
    write_frames(&input, &[("x.png", 16, 16)]);
    let out = root.path().join("out");
    let o = uvot(&[
        "enhance",
        "--input",
        s(&input),
        "--method",
        "uwie-tr",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let img: Image<f32> = load_image(&out.join("x.png")).unwrap();
    assert_eq!(img.dims(), (16, 16));
    assert!(read_json(&out.join("enhance_summary.json"))["frames"][0]["psnr"].is_number());
}

#[test]
fn enhance_input_errors() {
    let root = tempfile::tempdir().unwrap();
    let empty = root.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = root.path().join("out");
    let o = uvot(&[
        "enhance",
        "--input",
        s(&empty),
        "--method",
        "he",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("UnreadableInput"), "{}", stderr(&o));

    let input = root.path().join("in");
    write_frames(&input, &[("a.png", 8, 8)]);
    let o = uvot(&[
        "enhance",
        "--input",
        s(&input),
        "--method",
        "uwie-tr",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MissingCheckpoint"), "{}", stderr(&o));

    std::fs::write(input.join("broken.png"), b"not a png").unwrap();
    let o = uvot(&[
        "enhance",
        "--input",
        s(&input),
        "--method",
        "he",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("UnreadableInput") && stderr(&o).contains("broken.png"));
}

type PairSpec<'a> = (&'a str, (usize, usize), (usize, usize));

fn write_pairs(root: &Path, pairs: &[PairSpec]) -> PathBuf {
    let mut entries = Vec::new();
    for (i, (name, raw, target)) in pairs.iter().enumerate() {
        let r = format!("{name}_raw.png");
        let t = format!("{name}_gt.png");
        save_image(&pattern_image(raw.0, raw.1, i), &root.join(&r)).unwrap();
        save_image(&pattern_image(target.0, target.1, i + 50), &root.join(&t)).unwrap();
        entries.push(json!({"name": name, "raw": r, "target": t}));
    }
    let path = root.join("pairs.json");
    std::fs::write(&path, json!({ "pairs": entries }).to_string()).unwrap();
    path
}

#[test]
fn train_is_seed_deterministic_and_checkpoint_loads() {
    let root = tempfile::tempdir().unwrap();
    let pairs = write_pairs(root.path(), &[("p0", (16, 16), (16, 16))]);
    let run = |dir: &str, seed: &str| {
        let out = root.path().join(dir);
        let o = uvot(&[
            "train",
            "--pairs",
            s(&pairs),
            "--steps",
            "4",
            "--seed",
            seed,
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", "9");
    let b = run("b", "9");
    let c = run("c", "10");
    let bytes = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(bytes(&a, "model.uwtr"), bytes(&b, "model.uwtr"));
    assert_eq!(bytes(&a, "train_log.jsonl"), bytes(&b, "train_log.jsonl"));
    assert_ne!(bytes(&a, "model.uwtr"), bytes(&c, "model.uwtr"));

    let log = String::from_utf8(bytes(&a, "train_log.jsonl")).unwrap();
    let records: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 4);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["step"], i);
        let parts = ["appearance", "perceptual", "latent"].map(|k| r[k].as_f64().unwrap());
        assert!((parts.iter().sum::<f64>() - r["total"].as_f64().unwrap()).abs() < 1e-9);
    }
    assert!(records[3]["total"].as_f64().unwrap() < records[0]["total"].as_f64().unwrap());

    let frames = root.path().join("frames");
    write_frames(&frames, &[("f.png", 16, 16)]);
    let out = root.path().join("enh");
    let ckpt = a.join("model.uwtr");
    let o = uvot(&[
        "enhance",
        "--input",
        s(&frames),
        "--method",
        "uwie-tr",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn train_rejects_bad_pairs() {
    let root = tempfile::tempdir().unwrap();
    let pairs = write_pairs(
        root.path(),
        &[("ok", (16, 16), (16, 16)), ("skewed", (16, 16), (16, 12))],
    );
    let out = root.path().join("out");
    let o = uvot(&[
        "train",
        "--pairs",
        s(&pairs),
        "--steps",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("ShapeMismatch") && err.contains("skewed"),
        "{err}"
    );

    let pairs = write_pairs(
        root.path(),
        &[("first", (16, 16), (16, 16)), ("second", (8, 8), (8, 8))],
    );
    let o = uvot(&[
        "train",
        "--pairs",
        s(&pairs),
        "--steps",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(stderr(&o).contains("ShapeMismatch") && stderr(&o).contains("second"));

    std::fs::write(&pairs, r#"{"pairs": []}"#).unwrap();
    let o = uvot(&["train", "--pairs", s(&pairs), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("EmptyManifest"), "{}", stderr(&o));
}

#[test]
fn eval_ground_truth_as_predictions_is_perfect() {
    let root = tempfile::tempdir().unwrap();
    let (manifest, seqs) = eval_fixture(root.path());
    let results = root.path().join("gt_tracker");
    write_results(&results, &seqs, 0.0);
    let out = root.path().join("out");
    let o = uvot(&[
        "eval",
        "--dataset",
        s(&manifest),
        "--results",
        s(&results),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report[0]["tracker"], "gt_tracker");
    for (name, _) in &seqs {
        let m = &report[0]["sequences"][name];
        assert_eq!(m["pr"], 1.0, "{name}");
        assert_eq!(m["success_at_05"], 1.0, "{name}");
    }
    assert!((report[0]["overall"]["sr"].as_f64().unwrap() - 20.0 / 21.0).abs() < 1e-12);
    for plot in [
        "precision_plot.csv",
        "success_plot.csv",
        "norm_precision_plot.csv",
    ] {
        let text = std::fs::read_to_string(out.join(plot)).unwrap();
        assert!(text.starts_with("tracker,threshold,score\n"), "{plot}");
    }
    assert_eq!(
        std::fs::read_to_string(out.join("success_plot.csv"))
            .unwrap()
            .lines()
            .count(),
        22
    );
    assert!(stdout(&o).contains("\"tracker\":\"gt_tracker\""));
}

#[test]
fn eval_two_trackers_fill_two_columns() {
    let root = tempfile::tempdir().unwrap();
    let (manifest, seqs) = eval_fixture(root.path());
    let perfect = root.path().join("perfect");
    let shifted = root.path().join("shifted");
    write_results(&perfect, &seqs, 0.0);
    write_results(&shifted, &seqs, 25.0);
    let out = root.path().join("out");
    let o = uvot(&[
        "eval",
        "--dataset",
        s(&manifest),
        "--results",
        s(&perfect),
        s(&shifted),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let table = std::fs::read_to_string(out.join("attribute_table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "attribute,perfect,shifted");
    let low = table
        .lines()
        .find(|l| l.starts_with("UWV-Low (1)"))
        .unwrap();
    let cells: Vec<&str> = low.split(',').collect();
    assert_eq!(cells.len(), 3);
    assert_eq!(cells[1].split('|').count(), 3);
    assert!(cells[1].starts_with("1.000|"));
    assert!(cells[2].starts_with("0.000|"));

    let long = std::fs::read_to_string(out.join("attributes.csv")).unwrap();
    assert_eq!(long.lines().filter(|l| l.contains(",PO,")).count(), 2);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report.as_array().unwrap().len(), 2);
    assert_eq!(report[1]["overall"]["pr"], 0.0);
}

#[test]
fn eval_names_missing_sequence_file() {
    let root = tempfile::tempdir().unwrap();
    let (manifest, seqs) = eval_fixture(root.path());
    let results = root.path().join("partial");
    write_results(&results, &seqs[..1], 0.0);
    let out = root.path().join("out");
    let o = uvot(&[
        "eval",
        "--dataset",
        s(&manifest),
        "--results",
        s(&results),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("MissingSequence") && err.contains("eel-2"),
        "{err}"
    );

    std::fs::write(results.join("eel-2.txt"), "1,2,3,4\n").unwrap();
    let o = uvot(&[
        "eval",
        "--dataset",
        s(&manifest),
        "--results",
        s(&results),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("FrameCountMismatch") && err.contains("eel-2"),
        "{err}"
    );
}

#[test]
fn eval_is_byte_identical_across_runs_and_thread_counts() {
    let root = tempfile::tempdir().unwrap();
    let (manifest, seqs) = eval_fixture(root.path());
    let results = root.path().join("trk");
    write_results(&results, &seqs, 7.0);
    let run = |dir: &str, threads: &str| {
        let out = root.path().join(dir);
        let o = uvot(&[
            "eval",
            "--dataset",
            s(&manifest),
            "--results",
            s(&results),
            "--threads",
            threads,
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", "1");
    let b = run("b", "3");
    for f in [
        "report.json",
        "attributes.csv",
        "attribute_table.csv",
        "precision_plot.csv",
        "success_plot.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn vote_reports_frame_and_video_winners() {
    let root = tempfile::tempdir().unwrap();
    let mut csv = String::from("video_id,frame_id,expert_id,method_id\n");
    for frame in 0..10 {
        for expert in 0..10 {
            let method = match (frame, expert) {
                (0..=5, e) if e < 7 => "funie",
                (0..=5, _) => "waternet",
                (_, e) if e < 5 => "waternet",
                _ => "dive",
            };
            csv.push_str(&format!("v1,{frame},{expert},{method}\n"));
        }
    }
    let votes = root.path().join("votes.csv");
    std::fs::write(&votes, &csv).unwrap();
    let out = root.path().join("out");
    let o = uvot(&["vote", "--votes", s(&votes), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&out.join("votes.json"));
    assert_eq!(v["v1"]["winner"], "funie");
    assert_eq!(v["v1"]["frames"]["0"], "funie");
    assert_eq!(v["v1"]["frames"]["7"], "dive");
    assert!(v["v1"].get("warning").is_none());

    let o = uvot(&[
        "vote",
        "--votes",
        s(&votes),
        "--methods",
        "funie,dive",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(&votes, "v1,0\n").unwrap();
    let o = uvot(&["vote", "--votes", s(&votes), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MalformedVoteRow"), "{}", stderr(&o));
}

#[test]
fn validate_exit_status_follows_violations() {
    let root = tempfile::tempdir().unwrap();
    let clean = write_manifest(
        &root.path().join("clean"),
        vec![
            seq_json("a", &track(40, 0.0), "Low", "Blue", &[]),
            seq_json("b", &track(60, 0.0), "Mid", "Blue", &[]),
        ],
    );
    let out = root.path().join("out");
    let o = uvot(&["validate", "--dataset", s(&clean), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read_json(&out.join("validation.json"))["valid"], true);

    let mut wide = track(45, 0.0);
    wide[3] = Some(BBox::new(190.0, 30.0, 20.0, 10.0).unwrap());
    let dirty = write_manifest(
        &root.path().join("dirty"),
        vec![
            seq_json("short", &track(39, 0.0), "Low", "Blue", &[]),
            seq_json("wide", &wide, "Low", "Blue", &[]),
        ],
    );
    let o = uvot(&["validate", "--dataset", s(&dirty), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("short: TooShort"), "{text}");
    assert!(text.contains("wide: OutOfBounds (frame 3)"), "{text}");
    let report = read_json(&out.join("validation.json"));
    assert_eq!(report["violations"][0]["kind"], "too_short");
    assert_eq!(report["violations"][1]["sequence"], "wide");
}

#[test]
fn validate_writes_seeded_split() {
    let root = tempfile::tempdir().unwrap();
    let seqs: Vec<Value> = (0..10)
        .map(|i| seq_json(&format!("s{i}"), &track(40, 0.0), "Low", "Blue", &[]))
        .collect();
    let manifest = write_manifest(root.path(), seqs);
    let run = |dir: &str| {
        let out = root.path().join(dir);
        let o = uvot(&[
            "validate",
            "--dataset",
            s(&manifest),
            "--split-ratio",
            "0.7",
            "--seed",
            "3",
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("split.json")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let split: Value = serde_json::from_slice(&a).unwrap();
    let train = split
        .as_object()
        .unwrap()
        .values()
        .filter(|v| *v == "train")
        .count();
    assert_eq!(train, 7);
}

#[test]
fn config_file_supplies_settings_and_flags_override() {
    let root = tempfile::tempdir().unwrap();
    let input = root.path().join("frames");
    write_frames(&input, &[("a.png", 8, 8)]);
    std::fs::write(
        root.path().join("run.toml"),
        "seed = 12\nout = \"result\"\n\n[enhance]\ninput = \"frames\"\nmethod = \"gamma\"\ngamma = 0.5\n",
    )
    .unwrap();
    let cfg = root.path().join("run.toml");
    let o = uvot(&["enhance", "--config", s(&cfg), "--gamma", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let snapshot =
        std::fs::read_to_string(root.path().join("result").join("run_config.toml")).unwrap();
    assert!(snapshot.contains("seed = 12"), "{snapshot}");
    assert!(snapshot.contains("gamma = 2.0"), "{snapshot}");
    assert!(snapshot.contains("method = \"gamma\""), "{snapshot}");

    std::fs::write(&cfg, "[enhance]\nunknown = 1\n").unwrap();
    let o = uvot(&[
        "enhance",
        "--config",
        s(&cfg),
        "--input",
        s(&input),
        "--method",
        "he",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Config"), "{}", stderr(&o));
}

#[test]
fn help_lists_every_subcommand() {
    let o = uvot(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for cmd in [
        "enhance",
        "train",
        "eval",
        "vote",
        "validate",
        "--seed",
        "--threads",
        "--out",
        "--config",
    ] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
