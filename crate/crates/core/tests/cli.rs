mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::Toy;
use photoenhance::imaging::load_image;
use photoenhance::toy::{write_edge_feature_weights, write_sharp_blurred};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photoenhance"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains the tiny config for `iterations` steps and returns the config path.
fn trained(toy: &Toy, iterations: u64) -> std::path::PathBuf {
    let mut cfg = toy.tiny_config("run");
    cfg.iterations = iterations;
    let path = toy.path().join("train.toml");
    cfg.save(&path).unwrap();
    let o = run(&["train", "--config", s(&path), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&run(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
    for sub in ["train", "enhance", "evaluate", "ffs-train", "ffs-score"] {
        assert_eq!(code(&run(&[sub, "--help"])), 0, "{sub}");
    }
}

#[test]
fn invalid_config_exits_with_three() {
    let o = run(&["train", "--set", "patch_size=5"]);
    assert_eq!(code(&o), 3);
    assert!(
        stderr(&o)
            .trim_end()
            .lines()
            .last()
            .unwrap()
            .starts_with("error[config]"),
        "{}",
        stderr(&o)
    );
    assert_eq!(code(&run(&["train", "--set", "no_such_key=1"])), 3);
}

#[test]
fn train_echoes_config_and_writes_checkpoint() {
    let toy = Toy::new(4, 32, 1);
    let cfg = trained(&toy, 0);
    let run_dir = toy.path().join("run");
    assert!(run_dir.join("latest.safetensors").exists());
    assert!(run_dir.join("config.toml").exists());
    let o = run(&["train", "--config", s(&cfg), "--quiet", "--set", "iterations=1"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).starts_with("# effective config, hash "));
    assert!(stderr(&o).contains("iterations = 1"));
}

#[test]
fn enhance_keeps_dimensions_and_protects_inputs() {
    let toy = Toy::new(4, 32, 2);
    trained(&toy, 1);
    let run_dir = toy.path().join("run");
    let input = toy.source.join("s0000.png");
    let out = toy.path().join("out.png");
    let o = run(&["enhance", "--run-dir", s(&run_dir), "--in", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (a, b) = (load_image(&input).unwrap(), load_image(&out).unwrap());
    assert_eq!((a.height(), a.width(), b.channels()), (b.height(), b.width(), 3));

    let dir_out = toy.path().join("enhanced");
    let o = run(&[
        "enhance",
        "--run-dir",
        s(&run_dir),
        "--in",
        s(&toy.source),
        "--out",
        s(&dir_out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_dir(&dir_out).unwrap().count(), 4);

    let o = run(&[
        "enhance",
        "--run-dir",
        s(&run_dir),
        "--in",
        s(&input),
        "--out",
        s(&input),
    ]);
    assert_eq!(code(&o), 3);
    let o = run(&[
        "enhance",
        "--run-dir",
        s(&run_dir),
        "--in",
        "/no/such.png",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = run(&[
        "enhance",
        "--checkpoint",
        "/no/such.safetensors",
        "--in",
        s(&input),
        "--out",
        s(&out),
    ]);
    assert_ne!(code(&o), 0);
}

#[test]
fn evaluate_writes_table_and_csv() {
    let toy = Toy::new(3, 32, 3);
    let table = toy.path().join("report.txt");
    let o = run(&[
        "evaluate",
        "--enhanced",
        s(&toy.source),
        "--reference",
        s(&toy.source),
        "--out",
        s(&table),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&table).unwrap();
    assert!(
        text.contains("psnr") && text.contains("ssim") && text.contains("inf"),
        "{text}"
    );
    let csv = toy.path().join("report.csv");
    let o = run(&[
        "evaluate",
        "--enhanced",
        s(&toy.source),
        "--out",
        s(&csv),
        "--dataset",
        "toy",
    ]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(
        text.contains("toy") && text.contains("entropy") && text.contains("bpp"),
        "{text}"
    );
    // s*.png and t*.png never pair up
    let o = run(&[
        "evaluate",
        "--enhanced",
        s(&toy.source),
        "--reference",
        s(&toy.target),
        "--out",
        s(&csv),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("error[pairing]"));
    let lonely = toy.path().join("lonely");
    fs::create_dir_all(&lonely).unwrap();
    fs::copy(toy.source.join("s0000.png"), lonely.join("extra.png")).unwrap();
    let o = run(&[
        "evaluate",
        "--enhanced",
        s(&lonely),
        "--reference",
        s(&toy.source),
        "--out",
        s(&csv),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn ffs_train_and_score() {
    let tmp = tempfile::tempdir().unwrap();
    let items = write_sharp_blurred(tmp.path(), 6, 40, 4).unwrap();
    let weights = tmp.path().join("vgg.safetensors");
    write_edge_feature_weights(&weights, 5).unwrap();
    let records = tmp.path().join("records.tsv");
    let lines: String = items
        .iter()
        .map(|i| format!("{}\t{}\n", i.path.display(), i.label))
        .collect();
    fs::write(&records, format!("# path label\n{lines}")).unwrap();
    let model = tmp.path().join("ffs.safetensors");
    let wset = format!("feature_weights={}", s(&weights));
    let o = run(&[
        "ffs-train",
        "--records",
        s(&records),
        "--out",
        s(&model),
        "--set",
        &wset,
        "--set",
        "layer=relu1_1",
        "--set",
        "patch_size=32",
        "--set",
        "max_epochs=2",
        "--set",
        "batch_size=4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
    let scores = tmp.path().join("scores.tsv");
    let o = run(&[
        "ffs-score",
        "--ffs-checkpoint",
        s(&model),
        "--in",
        s(&tmp.path().join("sharp")),
        "--out",
        s(&scores),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&scores).unwrap();
    assert_eq!(text.lines().count(), 6);
    for line in text.lines() {
        let v: f64 = line.rsplit('\t').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    let again = run(&[
        "ffs-score",
        "--ffs-checkpoint",
        s(&model),
        "--in",
        s(&tmp.path().join("sharp")),
    ]);
    assert_eq!(String::from_utf8_lossy(&again.stdout), text);

    let table = tmp.path().join("t.txt");
    let o = run(&[
        "evaluate",
        "--enhanced",
        s(&tmp.path().join("sharp")),
        "--ffs-checkpoint",
        s(&model),
        "--out",
        s(&table),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(fs::read_to_string(&table).unwrap().contains("ffs"));

    fs::write(&records, "a.png\t0\t1\n").unwrap();
    let o = run(&["ffs-train", "--records", s(&records), "--out", s(&model)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
