use std::path::Path;
use std::process::{Command, Output};

use evsnn::dataset::read_dataset;
use evsnn::metrics::import_metrics;

fn evsnn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evsnn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, name: &str, seed: &str) {
    let o = evsnn(
        &[
            "synth-gen",
            "--classes",
            "4",
            "--per-class",
            "10",
            "--seed",
            seed,
            "--out",
            name,
            "--small-geometry",
        ],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_gen_writes_requested_batches_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a.evds", "9");
    synth(dir.path(), "b.evds", "9");
    synth(dir.path(), "c.evds", "10");
    let a = std::fs::read(dir.path().join("a.evds")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.evds")).unwrap());
    assert_ne!(a, std::fs::read(dir.path().join("c.evds")).unwrap());
    let batches = read_dataset(&dir.path().join("a.evds")).unwrap();
    assert_eq!(batches.len(), 40);
    for class in 0..4 {
        assert_eq!(batches.iter().filter(|b| b.label == class).count(), 10);
    }
    assert!(batches.iter().all(|b| b.duration == 1_000_000));
}

#[test]
fn usage_errors_exit_with_two_and_touch_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["synth-gen", "--classes", "4", "--per-class", "0", "--out", "x.evds"][..],
        &["train", "--out-weights", "w", "--out-metrics", "m"],
        &["train", "--data", "d", "--out-weights", "d", "--out-metrics", "m"],
        &[
            "train",
            "--data",
            "d",
            "--out-weights",
            "w",
            "--out-metrics",
            "m",
            "--width",
            "20",
        ],
        &["eval", "--data", "d", "--weights", "w", "--train-frac", "0"],
        &["bogus"],
    ] {
        let o = evsnn(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    assert_eq!(evsnn(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = evsnn(
        &["eval", "--data", "missing.evds", "--weights", "missing.evwt"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.evwt"), "{}", stderr(&o));
}

fn write_csv(dir: &Path, name: &str, seconds: u64) {
    let mut text = String::from("timestamp,x,y,polarity\n");
    for i in 0..seconds * 10 {
        text.push_str(&format!("{},{},{},{}\n", i * 100_000, i % 32, (i / 32) % 32, i % 2));
    }
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn ingest_slices_and_samples_recordings() {
    let dir = tempfile::tempdir().unwrap();
    let csvs = dir.path().join("csv");
    std::fs::create_dir(&csvs).unwrap();
    write_csv(&csvs, "4_2.csv", 9);
    std::fs::write(csvs.join("notes.txt"), "ignored").unwrap();
    let o = evsnn(
        &[
            "ingest",
            "--csv-dir",
            "csv",
            "--out",
            "d.evds",
            "--width",
            "32",
            "--height",
            "32",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let batches = read_dataset(&dir.path().join("d.evds")).unwrap();
    assert_eq!(batches.len(), 3);
    assert!(batches
        .iter()
        .all(|b| b.label == 2 && b.subject == 4 && b.duration == 3_000_000));
    assert_eq!(batches.iter().map(|b| b.events.len()).sum::<usize>(), 90);

    let o = evsnn(
        &[
            "ingest",
            "--csv-dir",
            "csv",
            "--out",
            "e.evds",
            "--sample-k",
            "4",
            "--width",
            "32",
            "--height",
            "32",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("4_2.csv"), "{}", stderr(&o));
}

#[test]
fn ingest_names_the_bad_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let csvs = dir.path().join("csv");
    std::fs::create_dir(&csvs).unwrap();
    write_csv(&csvs, "1_0.csv", 3);
    std::fs::write(csvs.join("2_1.csv"), "0,1,1,1\n5,2,2\n").unwrap();
    let o = evsnn(
        &["ingest", "--csv-dir", "csv", "--out", "d.evds", "--small-geometry"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("2_1.csv") && err.contains("line 2"), "{err}");
    assert!(!dir.path().join("d.evds").exists());
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d.evds", "1");
    let o = evsnn(
        &[
            "train",
            "--data",
            "d.evds",
            "--out-weights",
            "w.evwt",
            "--out-metrics",
            "m.csv",
            "--small-geometry",
            "--classes",
            "4",
            "--epochs",
            "1",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    // 28 training batches at 25 per mini-batch
    assert!(out.contains("epoch 1 iter 1 loss "), "{out}");
    assert!(out.contains("epoch 1 iter 2 loss "), "{out}");
    assert!(!out.contains("iter 3 "), "{out}");
    let history = import_metrics(&dir.path().join("m.csv")).unwrap();
    assert_eq!(history.len(), 2);
    assert!(history[1].val_accuracy.is_some());

    let o = evsnn(&["eval", "--data", "d.evds", "--weights", "w.evwt"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("loss=") && line.contains(" accuracy="), "{line}");
    assert_eq!(line.lines().count(), 1);

    let o = evsnn(
        &[
            "eval",
            "--data",
            "d.evds",
            "--weights",
            "w.evwt",
            "--width",
            "48",
            "--height",
            "32",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("input width"), "{}", stderr(&o));

    let o = evsnn(
        &[
            "eval",
            "--data",
            "d.evds",
            "--weights",
            "w.evwt",
            "--encoding",
            "merged",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("input channels"), "{}", stderr(&o));

    let bytes = std::fs::read(dir.path().join("w.evwt")).unwrap();
    std::fs::write(dir.path().join("bad.evwt"), &bytes[..bytes.len() / 2]).unwrap();
    let o = evsnn(&["eval", "--data", "d.evds", "--weights", "bad.evwt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("format error"), "{}", stderr(&o));
}

#[test]
fn train_rejects_labels_beyond_the_output_layer() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d.evds", "1");
    let o = evsnn(
        &[
            "train",
            "--data",
            "d.evds",
            "--out-weights",
            "w.evwt",
            "--out-metrics",
            "m.csv",
            "--small-geometry",
            "--classes",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("label 3"), "{}", stderr(&o));
    assert!(!dir.path().join("w.evwt").exists());
}
