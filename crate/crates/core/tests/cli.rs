use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cotrain(output: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cotrain"))
        .arg("--output")
        .arg(output)
        .args(args)
        .env_remove("COTRAIN_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &[&str] = &[
    "--image-size",
    "48",
    "--n-samples",
    "12",
    "--total-steps",
    "20",
    "--checkpoint-every",
    "10",
    "--omega",
    "0.5",
];

#[test]
fn permset_generate_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let out = cotrain(dir.path(), &["permset", "generate"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("30 permutations of 9 tiles, min pairwise Hamming distance 7"));
    let file = dir.path().join("permset-9-30.txt");
    assert!(file.exists());

    let out = cotrain(dir.path(), &["permset", "inspect", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("permutations: 30"));
    assert!(text.contains("min pairwise distance: 7"));
}

#[test]
fn permset_count_beyond_factorial_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cotrain(dir.path(), &["permset", "generate", "--n-tiles", "3", "--count", "7"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn pretext_preview_writes_images_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = cotrain(
        dir.path(),
        &[
            "pretext",
            "preview",
            "--selfsup-task",
            "jigsaw",
            "--n-samples",
            "10",
            "--count",
            "3",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let preview = dir.path().join("preview-jigsaw");
    let labels = fs::read_to_string(preview.join("labels.csv")).unwrap();
    let lines: Vec<&str> = labels.lines().collect();
    assert_eq!(lines[0], "original,transformed,task,label");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert!(preview.join(fields[0]).exists());
        assert!(preview.join(fields[1]).exists());
        assert!(fields[3].parse::<usize>().unwrap() < 30);
    }
}

#[test]
fn train_writes_history_checkpoints_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend_from_slice(TINY);
    let first = cotrain(a.path(), &args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let second = cotrain(b.path(), &args);
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));

    let run_dir = |root: &Path| {
        fs::read_dir(root)
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("train-"))
            .unwrap()
    };
    let (ra, rb) = (run_dir(a.path()), run_dir(b.path()));
    assert_eq!(ra.file_name(), rb.file_name());
    for ck in ["step-0000010.ckpt", "step-0000020.ckpt"] {
        assert_eq!(fs::read(ra.join(ck)).unwrap(), fs::read(rb.join(ck)).unwrap(), "{ck}");
    }
    assert_eq!(
        fs::read_to_string(ra.join("metrics.csv")).unwrap(),
        fs::read_to_string(rb.join("metrics.csv")).unwrap()
    );
    let history = fs::read_to_string(ra.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 21);
    let config = fs::read_to_string(ra.join("config.txt")).unwrap();
    assert!(config.contains("omega = 0.5"));
}

#[test]
fn config_file_errors_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    fs::write(&file, "# comment\nomega = 0.5\nno_such_key = 3\n").unwrap();
    let out = cotrain(dir.path(), &["train", "--config", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn invalid_ratio_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = cotrain(dir.path(), &["train", "--ratio", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_without_results_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cotrain(dir.path(), &["report"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no results CSV"));
}
