use std::path::Path;
use std::process::{Command, Output};

fn hcc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcc"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, traces: &str) {
    let o = hcc(
        dir,
        &[
            "synth", "--output", "c.jsonl", "--traces", traces, "--seed", "3",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcc(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in [
        "validate",
        "synth",
        "train",
        "predict",
        "cut",
        "export-sft",
        "paired-stats",
    ] {
        assert!(stdout(&o).contains(cmd), "help lacks {cmd}");
    }
    assert_eq!(hcc(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hcc(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(hcc(dir.path(), &["validate"]).status.code(), Some(2));
    assert_eq!(
        hcc(
            dir.path(),
            &["cut", "x.jsonl", "--mode", "sideways", "--output", "o.csv"]
        )
        .status
        .code(),
        Some(2)
    );
    synth(dir.path(), "3");
    // random mode needs a target
    let o = hcc(
        dir.path(),
        &["cut", "c.jsonl", "--mode", "random", "--output", "o.csv"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    // model mode needs a checkpoint
    let o = hcc(
        dir.path(),
        &["cut", "c.jsonl", "--mode", "model", "--output", "o.csv"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hcc(dir.path(), &["validate", "absent.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn validate_accepts_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "5");
    let o = hcc(dir.path(), &["validate", "c.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "5 traces, 5 annotated, 0 violations");
    let o = hcc(dir.path(), &["validate", "--input", "c.jsonl"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn validate_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let path = dir.path().join("c.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // line 2 claims one token more than it scores; line 3 is not JSON
    let bumped = lines[1].replacen("\"token_count\":", "\"token_count\":1", 1);
    assert_ne!(bumped, lines[1]);
    lines[1] = bumped;
    lines[2] = "{not json".into();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    let o = hcc(dir.path(), &["validate", "c.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("line 2 (synth-0)"), "{out}");
    assert!(out.contains("line 3"), "{out}");
    assert!(out.trim_end().ends_with("2 violations"), "{out}");
}

#[test]
fn pipeline_produces_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "12");
    std::fs::write(
        d.join("m.cfg"),
        "encoder_dim = 16\nlatent_dim = 4\ncontext_dim = 8\n",
    )
    .unwrap();
    let run = |args: &[&str]| {
        let o = hcc(d, args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        stdout(&o)
    };
    run(&[
        "train", "c.jsonl", "--output", "m.hccm", "--config", "m.cfg", "--epochs", "2",
    ]);
    let history = std::fs::read_to_string(d.join("m.hccm.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    run(&[
        "predict", "c.jsonl", "--model", "m.hccm", "--output", "p.csv",
    ]);
    let mut rdr = csv::Reader::from_path(d.join("p.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        [
            "id",
            "t",
            "boundary",
            "cut_logit",
            "delete_prob",
            "uncertainty_estimate",
            "progress_estimate"
        ]
    );

    run(&[
        "cut",
        "c.jsonl",
        "--mode",
        "labels",
        "--output",
        "labels.csv",
    ]);
    let printed = run(&[
        "cut",
        "c.jsonl",
        "--mode",
        "random",
        "--match",
        "labels.csv",
        "--output",
        "random.csv",
    ]);
    assert!(!printed.is_empty());
    let rows = std::fs::read_to_string(d.join("random.csv")).unwrap();
    assert_eq!(rows.lines().count(), 13);

    run(&[
        "export-sft",
        "c.jsonl",
        "--cuts",
        "random.csv",
        "--output",
        "sft.jsonl",
    ]);
    let sft = std::fs::read_to_string(d.join("sft.jsonl")).unwrap();
    assert_eq!(sft.lines().count(), 12);
    for line in sft.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["response"].as_str().unwrap().contains("\\boxed{"));
    }

    run(&[
        "--json",
        "self-consistency",
        "c.jsonl",
        "--predictions",
        "p.csv",
        "--output",
        "sc.json",
    ]);
    let sc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("sc.json")).unwrap()).unwrap();
    assert_eq!(sc["traces"], 12);

    let table = run(&[
        "paired-stats",
        "c.jsonl",
        "--output",
        "paired.csv",
        "--resamples",
        "500",
    ]);
    assert!(table.contains("forward_progress_per_token"));
}
