use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pianovis"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_with_1() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--dataset", "x"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let dir = TempDir::new().unwrap();
    let cfg = p(dir.path(), "bad.cfg");
    fs::write(&cfg, "fps = 30\ncolour = blue\n").unwrap();
    let out = run(&["--config", &cfg, "evaluate", "--dataset", "a", "--weights", "b"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn frame_without_keyboard_fails_with_2() {
    let dir = TempDir::new().unwrap();
    let frame = p(dir.path(), "desk.pgm");
    let (w, h) = (200usize, 120usize);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend((0..w * h).map(|i| 120 + ((i * 7919) % 5) as u8));
    fs::write(&frame, bytes).unwrap();
    let out = run(&["detect-keyboard", "--background", &frame, "--out", &p(dir.path(), "l.txt")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("keyboard not found"));
}

#[test]
fn full_keyboard_counts() {
    let dir = TempDir::new().unwrap();
    let frames = p(dir.path(), "frames");
    ok(&[
        "synth", "--frames", &frames, "--midi", &p(dir.path(), "m.mid"), "--first-key", "21", "--keys", "88",
        "--white-width", "8", "--key-height", "40", "--notes", "0",
    ]);
    let stdout = ok(&["detect-keyboard", "--background", &frames, "--out", &p(dir.path(), "l.txt"), "--first-key", "21", "--keys", "88"]);
    assert!(stdout.contains("52 white, 36 black"), "{stdout}");
}

#[test]
fn detected_layout_is_stable_and_near_truth() {
    let dir = TempDir::new().unwrap();
    let frames = p(dir.path(), "frames");
    ok(&["synth", "--frames", &frames, "--midi", &p(dir.path(), "m.mid"), "--layout", &p(dir.path(), "truth.txt"), "--notes", "0"]);
    let args = |out: &str| {
        vec![
            "detect-keyboard".to_string(),
            "--background".into(),
            frames.clone(),
            "--out".into(),
            p(dir.path(), out),
            "--first-key".into(),
            "48".into(),
            "--keys".into(),
            "24".into(),
        ]
    };
    let a: Vec<String> = args("a.txt");
    let b: Vec<String> = args("b.txt");
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    let first = fs::read_to_string(dir.path().join("a.txt")).unwrap();
    assert_eq!(first, fs::read_to_string(dir.path().join("b.txt")).unwrap());
    let bounds = |text: &str| -> Vec<i64> {
        text.lines().next().unwrap().split_whitespace().skip(1).map(|t| t.parse().unwrap()).collect()
    };
    let truth = fs::read_to_string(dir.path().join("truth.txt")).unwrap();
    for (x, y) in bounds(&first).iter().zip(bounds(&truth)) {
        assert!((x - y).abs() <= 2, "{first}\nvs\n{truth}");
    }
}

#[test]
fn extract_train_evaluate_transcribe() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let frames = p(d, "frames");
    let midi = p(d, "score.mid");
    let layout = p(d, "layout.txt");
    ok(&["synth", "--frames", &frames, "--midi", &midi, "--layout", &layout, "--notes", "12", "--seed", "4"]);

    let stdout = ok(&["extract", "--frames", &frames, "--layout", &layout, "--midi", &midi, "--task", "onoff", "--out", &p(d, "onoff.ds")]);
    assert!(stdout.contains("white:") && stdout.contains("black:"), "{stdout}");
    assert!(d.join("onoff_white.ds").is_file() && d.join("onoff_black.ds").is_file());

    let stdout = ok(&[
        "extract", "--frames", &frames, "--layout", &layout, "--midi", &midi, "--task", "intensity", "--out", &p(d, "int.ds"),
    ]);
    assert!(stdout.contains("skipped for incomplete history"), "{stdout}");

    let out = run(&["train", "--dataset", &p(d, "onoff_white.ds"), "--model", "intensity", "--color", "white", "--out", &p(d, "x.w")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("payload length 3000"), "{err}");

    for (ds, model, color, out) in [
        ("onoff_white.ds", "onoff", "white", "ow.w"),
        ("onoff_black.ds", "onoff", "black", "ob.w"),
        ("int_white.ds", "intensity", "white", "iw.w"),
        ("int_black.ds", "intensity", "black", "ib.w"),
    ] {
        ok(&["train", "--dataset", &p(d, ds), "--model", model, "--color", color, "--out", &p(d, out), "--epochs", "2", "--seed", "9"]);
    }
    let log = fs::read_to_string(d.join("ow.w.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().all(|l| l.starts_with("epoch ") && l.contains("val_accuracy")));

    ok(&["train", "--dataset", &p(d, "onoff_white.ds"), "--model", "onoff", "--color", "white", "--out", &p(d, "again.w"), "--epochs", "2", "--seed", "9"]);
    assert_eq!(fs::read(d.join("ow.w")).unwrap(), fs::read(d.join("again.w")).unwrap());

    let stdout = ok(&["evaluate", "--dataset", &p(d, "onoff_white.ds"), "--weights", &p(d, "ow.w")]);
    assert!(stdout.contains("accuracy ") && stdout.contains("confusion"), "{stdout}");
    assert!(stdout.lines().any(|l| l.trim_start().starts_with("t1")));

    let out = run(&["evaluate", "--dataset", &p(d, "onoff_black.ds"), "--weights", &p(d, "ow.w")]);
    assert_eq!(out.status.code(), Some(2));

    let transcribe = |frames: &str, out: &str| {
        ok(&[
            "transcribe", "--frames", frames, "--layout", &layout,
            "--weights-onoff", &p(d, "ow.w"), &p(d, "ob.w"),
            "--weights-intensity", &p(d, "iw.w"), &p(d, "ib.w"),
            "--out", &p(d, out),
        ])
    };
    let stdout = transcribe(&frames, "out.mid");
    assert!(stdout.contains("notes written"), "{stdout}");
    assert!(fs::read(d.join("out.mid")).unwrap().starts_with(b"MThd"));

    let out = run(&[
        "transcribe", "--frames", &frames, "--layout", &layout,
        "--weights-onoff", &p(d, "ow.w"), &p(d, "ob.w"),
        "--weights-intensity", &p(d, "ow.w"), &p(d, "ib.w"),
        "--out", &p(d, "bad.mid"),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let quiet = p(d, "quiet");
    ok(&["synth", "--frames", &quiet, "--midi", &p(d, "q.mid"), "--notes", "0"]);
    let stdout = transcribe(&quiet, "quiet_out.mid");
    assert!(stdout.contains(" 0 notes"), "{stdout}");
}
