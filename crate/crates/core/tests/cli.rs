use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_dyntopic");

fn dyntopic(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("DYNTOPIC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok_manifest(args: &[&str]) -> Value {
    let out = dyntopic(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("manifest is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TOPICS: [&[&str]; 3] = [
    &["mask", "mandate", "store", "wear", "face"],
    &["vaccine", "trial", "dose", "pfizer", "approval"],
    &["school", "reopen", "teacher", "classroom", "fall"],
];

fn write_corpus(dir: &Path) -> PathBuf {
    let mut lines = Vec::new();
    let mut id = 0;
    for day in 1..=4 {
        for doc in 0..9 {
            let words = TOPICS[(doc + day) % 3];
            let text = format!(
                "{} {} {} {} today #{}",
                words[doc % 5],
                words[(doc + 1) % 5],
                words[(doc + 2) % 5],
                words[(doc + 3) % 5],
                words[0]
            );
            lines.push(format!(
                r#"{{"id": "t{id}", "date": "2020-04-0{day}T12:00:00Z", "text": "{text}", "retweets": {}}}"#,
                (doc * 7) % 11
            ));
            id += 1;
        }
    }
    lines.push("{not json".into());
    lines.push(r#"{"id": "x", "date": "2020-06-01", "text": "mask later", "retweets": 1}"#.into());
    let path = dir.join("raw.jsonl");
    fs::write(&path, lines.join("\n")).unwrap();
    path
}

#[test]
fn text_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let raw = write_corpus(dir.path());
    let work = dir.path().join("work");

    let m = ok_manifest(&[
        "ingest", "--input", p(&raw), "--start", "2020-04-01", "--end", "2020-04-04",
        "--top-k", "8", "--out", p(&work),
    ]);
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["stats"]["line_errors"], 1);
    assert_eq!(m["stats"]["dropped_outside_span"], 1);
    assert_eq!(m["documents_kept"], 32);
    assert!(m["timings"]["seconds"].is_number());

    let corpus = work.join("corpus.jsonl");
    let m = ok_manifest(&["vectorize", "--corpus", p(&corpus), "--top-k", "8", "--out", p(&work)]);
    let dims: Vec<u64> = serde_json::from_value(m["tensor_dims"].clone()).unwrap();
    assert_eq!((dims[0], dims[2]), (4, 8));
    let vocab_size = m["vocabulary_size"].as_u64().unwrap();
    assert_eq!(dims[1], vocab_size);
    let vocab = fs::read_to_string(work.join("vocab.tsv")).unwrap();
    assert!(vocab.contains("mask"));
    assert!(!vocab.contains("today\t") || vocab.contains("today"));

    let tensor = work.join("tensor.bin");
    let days = work.join("days.txt");
    assert_eq!(fs::read_to_string(&days).unwrap().lines().count(), 4);

    for model in ["nmf", "onmf", "ncpd", "oncpd"] {
        let fit_dir = work.join(model);
        let m = ok_manifest(&[
            "fit", "--model", model, "--tensor", p(&tensor), "--rank", "3", "--seed", "1",
            "--minibatch-size", "4", "--inner-iterations", "5", "--stream-count", "8",
            "--stream-width", "4", "--out", p(&fit_dir),
        ]);
        assert_eq!(m["model"], model);
        assert_eq!(m["config"]["rank"], 3);
        let meta: Value = serde_json::from_str(&fs::read_to_string(fit_dir.join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["model"], model);
        assert!(meta["final_objective"].as_f64().unwrap().is_finite());

        let summary = fit_dir.join("summary");
        ok_manifest(&[
            "summarize", "--model-dir", p(&fit_dir), "--vocab", p(&work.join("vocab.tsv")),
            "--tensor", p(&tensor), "--keywords", "4", "--out", p(&summary),
        ]);
        let keywords = fs::read_to_string(summary.join("keywords.tsv")).unwrap();
        assert_eq!(keywords.lines().count(), 3, "{keywords}");
        let prevalence = fs::read_to_string(summary.join("prevalence.csv")).unwrap();
        assert_eq!(prevalence.lines().count(), 3);
        for line in prevalence.lines() {
            assert_eq!(line.split(',').count(), 4);
        }

        let figure = fit_dir.join("figure");
        ok_manifest(&["render", "--model-dir", p(&summary), "--days", p(&days), "--out", p(&figure)]);
        let svg = fs::read_to_string(figure.join("heatmap.svg")).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
        let csv = fs::read_to_string(figure.join("heatmap.csv")).unwrap();
        assert!(csv.lines().next().unwrap().contains("2020-04-01"));
    }
}

#[test]
fn synthetic_pipeline_recovers_pulse_day_range() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth");
    let m = ok_manifest(&[
        "synth", "--n-days", "12", "--n-terms", "60", "--docs-per-day", "10", "--persistent", "2",
        "--pulse-start", "4", "--pulse-len", "3", "--support", "8", "--out", p(&data),
    ]);
    assert_eq!(m["pulse_topic"], 2);
    let fit = dir.path().join("ncpd");
    ok_manifest(&[
        "fit", "--model", "ncpd", "--tensor", p(&data.join("tensor.bin")), "--rank", "3",
        "--out", p(&fit),
    ]);
    let summary = dir.path().join("summary");
    ok_manifest(&[
        "summarize", "--model-dir", p(&fit), "--vocab", p(&data.join("vocab.tsv")), "--out",
        p(&summary),
    ]);
    let rows: Vec<Vec<f64>> = fs::read_to_string(summary.join("prevalence.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let pulse_like = rows.iter().any(|row| {
        let inside = row[4..7].iter().cloned().fold(f64::INFINITY, f64::min);
        let outside = row[..4].iter().chain(&row[7..]).cloned().fold(0.0, f64::max);
        inside > 5.0 * outside
    });
    assert!(pulse_like, "{rows:?}");
    ok_manifest(&[
        "render", "--model-dir", p(&summary), "--days", p(&data.join("days.txt")), "--out",
        p(&summary),
    ]);
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth");
    ok_manifest(&["synth", "--n-days", "6", "--n-terms", "40", "--docs-per-day", "5", "--pulse-start", "2", "--out", p(&data)]);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# shared settings\nmodel = ncpd\nrank = 4\nmax-iterations = 30\nseed = 5\n").unwrap();
    let m = ok_manifest(&[
        "fit", "--config", p(&cfg), "--rank", "2", "--tensor", p(&data.join("tensor.bin")),
        "--out", p(&dir.path().join("fit")),
    ]);
    assert_eq!(m["config"]["model"], "ncpd");
    assert_eq!(m["config"]["rank"], 2);
    assert_eq!(m["config"]["seed"], 5);
    assert_eq!(m["meta"]["max_iterations"], 30);
    let a = fs::read_to_string(dir.path().join("fit/A.csv")).unwrap();
    assert_eq!(a.lines().next().unwrap().split(',').count(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dyntopic(&["--help"]).status.code(), Some(0));
    assert_eq!(dyntopic(&["--version"]).status.code(), Some(0));
    assert_eq!(dyntopic(&[]).status.code(), Some(2));
    assert_eq!(dyntopic(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(dyntopic(&["fit", "--model", "lda"]).status.code(), Some(2));
    assert_eq!(dyntopic(&["fit", "--model", "ncpd"]).status.code(), Some(2));
    assert_eq!(dyntopic(&["fit", "--rank", "0", "--tensor", "x"]).status.code(), Some(2));
    assert_eq!(dyntopic(&["ingest", "--start", "2020-05-01", "--end", "2020-04-01", "--input", "x"]).status.code(), Some(2));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let out = dyntopic(&["fit", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let out = dyntopic(&["fit", "--model", "ncpd", "--tensor", p(&dir.path().join("missing.bin"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());

    let garbage = dir.path().join("garbage.bin");
    fs::write(&garbage, b"not a tensor").unwrap();
    assert_eq!(dyntopic(&["fit", "--model", "ncpd", "--tensor", p(&garbage)]).status.code(), Some(1));
}

#[test]
fn strict_ingest_stops_at_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let raw = write_corpus(dir.path());
    let out = dyntopic(&["ingest", "--input", p(&raw), "--strict", "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("37"));
}

#[test]
fn sequential_snapshots_per_month() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth");
    ok_manifest(&["synth", "--n-days", "8", "--n-terms", "40", "--docs-per-day", "6", "--pulse-start", "3", "--out", p(&data)]);
    let tensor = data.join("tensor.bin");
    for model in ["onmf", "oncpd"] {
        let out = dir.path().join(model);
        ok_manifest(&[
            "fit", "--model", model, "--tensor", p(&tensor), "--rank", "2", "--checkpoints", "3,6",
            "--minibatch-size", "3", "--inner-iterations", "3", "--stream-count", "4",
            "--stream-width", "3", "--out", p(&out),
        ]);
        for s in ["00", "01", "02"] {
            assert!(out.join("snapshots").join(s).join("A.csv").exists() || out.join("snapshots").join(s).join("W.csv").exists(), "{model} {s}");
        }
    }
}
