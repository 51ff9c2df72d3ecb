use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lumasci::dataset::DatasetSplit;
use lumasci::image::{load_image, save_image, PlanarImage};
use lumasci::sci::{save_weights, SciWeights};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lumasci"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn inspect_emits_256_rows_per_channel() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("hist.tsv");
    let svg = dir.path().join("hist.svg");
    let img = fixture("photo_01_chelsea.png");
    let o = run(&[
        "inspect",
        "--in",
        img.to_str().unwrap(),
        "--space",
        "ycbcr",
        "--out",
        tsv.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&tsv).unwrap();
    let mut sections: Vec<(String, usize)> = Vec::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix("# channel=") {
            sections.push((name.split_whitespace().next().unwrap().to_string(), 0));
        } else if !line.starts_with('#') {
            assert_eq!(line.split('\t').count(), 2, "{line}");
            sections.last_mut().unwrap().1 += 1;
        }
    }
    let names: Vec<&str> = sections.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["y", "cb", "cr"]);
    assert!(sections.iter().all(|(_, rows)| *rows == 256));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));

    // Stdout variant.
    let o = run(&["inspect", "--in", img.to_str().unwrap(), "--space", "hsv"]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().filter(|l| !l.starts_with('#')).count(), 3 * 256);
}

#[test]
fn enhance_directory_keeps_basenames() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    let names = ["a.png", "b.png", "c.png"];
    for (i, n) in names.iter().enumerate() {
        let img = PlanarImage::from_fn_rgb(12, 9, |r, c| {
            let v = 0.03 + 0.01 * ((r + c + i) % 6) as f32;
            [v, v * 0.7, v * 0.5]
        });
        save_image(&img, input.join(n)).unwrap();
    }
    let weights = dir.path().join("w.sciw");
    save_weights(&SciWeights::init(1, 4, 1e-3, 2), &weights).unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "enhance",
        "--weights",
        weights.to_str().unwrap(),
        "--space",
        "ycbcr",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut produced: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    produced.sort();
    assert_eq!(produced, names);
    for n in names {
        let a = load_image(input.join(n)).unwrap();
        let b = load_image(out.join(n)).unwrap();
        assert_eq!((a.height(), a.width()), (b.height(), b.width()));
        assert!(b.mean() > a.mean());
    }

    // Weights trained for one plane cannot run in RGB mode.
    let o = run(&[
        "enhance",
        "--weights",
        weights.to_str().unwrap(),
        "--space",
        "rgb",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("input channel"), "{}", stderr(&o));
}

#[test]
fn train_with_missing_root_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("absent");
    let o = run(&["train", "--dataset", root.to_str().unwrap(), "--kind", "lol", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing directory"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(run(&["enhance", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["inspect", "--in", "x.png", "--space", "lab"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("enhance"));
}

#[test]
fn bad_config_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--dataset", "/x", "--kind", "lol"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

fn write_tiny_lol(root: &Path, train: usize, test: usize) {
    for (dir, n) in [("our485", train), ("eval15", test)] {
        for side in ["low", "high"] {
            let d = root.join(dir).join(side);
            std::fs::create_dir_all(&d).unwrap();
            for i in 0..n {
                let scale = if side == "low" { 0.15 } else { 0.8 };
                let img = PlanarImage::from_fn_rgb(14, 16, |r, c| {
                    let t = ((r * 5 + c * 3 + i) % 13) as f32 / 13.0;
                    [scale * (0.3 + 0.7 * t), scale * (0.4 + 0.5 * t), scale * 0.5]
                });
                save_image(&img, d.join(format!("{}.png", i + 1))).unwrap();
            }
        }
    }
}

#[test]
fn split_train_and_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("lol");
    write_tiny_lol(&root, 4, 2);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"max_epochs": 3, "hidden_channels": 4, "resize_to": null},
            "dataset": {"layout": {"val_count": 1}}}"#,
    )
    .unwrap();

    let manifest = dir.path().join("split.json");
    let o = run(&["split", "--dataset", root.to_str().unwrap(), "--kind", "lol", "--seed", "3", "--out", manifest.to_str().unwrap()]);
    // The stock LOL layout wants 85 validation pairs; four cannot supply them.
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!manifest.exists());

    let out = dir.path().join("run");
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        root.to_str().unwrap(),
        "--kind",
        "lol",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["best.sciw", "history.tsv", "config.json", "split.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let split = DatasetSplit::read_manifest(out.join("split.json")).unwrap();
    assert_eq!(split.counts(), (3, 1, 2));
    let echo = std::fs::read_to_string(out.join("config.json")).unwrap();
    for key in ["\"lr\"", "\"patience\"", "\"ssim_mode\"", "\"quantize\"", "\"split_seed\""] {
        assert!(echo.contains(key), "{key} missing from echo");
    }
    let history = std::fs::read_to_string(out.join("history.tsv")).unwrap();
    assert!(history.lines().last().unwrap().starts_with("# stop="));

    let eval_dir = dir.path().join("eval");
    let o = run(&[
        "eval",
        "--weights",
        out.join("best.sciw").to_str().unwrap(),
        "--dataset",
        root.to_str().unwrap(),
        "--kind",
        "lol",
        "--space",
        "ycbcr",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = std::fs::read_to_string(eval_dir.join("metrics.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3);
    assert!(tsv.lines().last().unwrap().starts_with("mean\t"));
    assert!(eval_dir.join("metrics.json").is_file());
}
