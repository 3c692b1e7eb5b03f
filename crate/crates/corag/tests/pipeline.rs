//! End-to-end pipeline test through the command-line surface: every stage's
//! output feeds the next, outputs are byte-reproducible, and validation
//! failures exit with the right class.

use clap::Parser;
use corag::cli::{run, Cli, CliError};
use std::path::Path;

fn corag<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut argv: Vec<String> = vec!["corag".into()];
    argv.extend(args.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(argv).expect("argv parses");
    run(cli)
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn full_pipeline_composes_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let data = out.join("data");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    // 1. Synthetic corpus.
    corag([
        "gen-synthetic",
        "--passages",
        "800",
        "--qa",
        "48",
        "--clients",
        "4",
        "--seed",
        "42",
        "--out",
        &s(&data),
    ])
    .unwrap();
    let passages = data.join("passages.jsonl");
    let qa = data.join("qa.jsonl");
    assert!(passages.exists() && qa.exists());
    assert_eq!(
        std::fs::read_to_string(&passages).unwrap().lines().count(),
        800
    );
    assert_eq!(std::fs::read_to_string(&qa).unwrap().lines().count(), 48);

    // Same seed regenerates identical files.
    let data2 = out.join("data2");
    corag([
        "gen-synthetic",
        "--passages",
        "800",
        "--qa",
        "48",
        "--clients",
        "4",
        "--seed",
        "42",
        "--out",
        &s(&data2),
    ])
    .unwrap();
    assert_eq!(read(&passages), read(&data2.join("passages.jsonl")));
    assert_eq!(read(&qa), read(&data2.join("qa.jsonl")));

    // 2. Index cache, bit-reproducible.
    let idx1 = out.join("idx1");
    let idx2 = out.join("idx2");
    corag(["index", "--corpus", &s(&passages), "--out", &s(&idx1)]).unwrap();
    corag(["index", "--corpus", &s(&passages), "--out", &s(&idx2)]).unwrap();
    assert_eq!(read(&idx1.join("index.bin")), read(&idx2.join("index.bin")));

    // 3. Categorization (reusing the cache).
    let tax_dir = out.join("tax");
    corag([
        "categorize",
        "--corpus",
        &s(&passages),
        "--qa",
        &s(&qa),
        "--index",
        &s(&idx1.join("index.bin")),
        "--out",
        &s(&tax_dir),
    ])
    .unwrap();
    let taxonomy = tax_dir.join("taxonomy.jsonl");
    assert!(taxonomy.exists());

    // 4. Stores + splits.
    let stores_dir = out.join("stores");
    corag([
        "stores",
        "--corpus",
        &s(&passages),
        "--qa",
        &s(&qa),
        "--taxonomy",
        &s(&taxonomy),
        "--variant",
        "rel",
        "--clients",
        "4",
        "--shots",
        "6",
        "--seed",
        "42",
        "--train-frac",
        "0.6",
        "--test-frac",
        "0.01",
        "--out",
        &s(&stores_dir),
    ])
    .unwrap();
    let stores = stores_dir.join("stores.json");
    let splits = stores_dir.join("splits.json");
    assert!(stores.exists() && splits.exists());

    // 5. Train twice with the same inputs: byte-identical reports.
    let train_a = out.join("train-a");
    let train_b = out.join("train-b");
    for train_dir in [&train_a, &train_b] {
        corag([
            "train",
            "--corpus",
            &s(&passages),
            "--qa",
            &s(&qa),
            "--stores",
            &s(&stores),
            "--splits",
            &s(&splits),
            "--mode",
            "collab",
            "--rounds",
            "2",
            "--epochs",
            "6",
            "--top-k",
            "15",
            "--out",
            &s(train_dir),
        ])
        .unwrap();
    }
    assert_eq!(read(&train_a.join("report.json")), read(&train_b.join("report.json")));
    assert_eq!(
        read(&train_a.join("predictions.jsonl")),
        read(&train_b.join("predictions.jsonl"))
    );
    let report: serde_json::Value =
        serde_json::from_slice(&read(&train_a.join("report.json"))).unwrap();
    assert_eq!(report["mode"], "collaborative");
    assert!(report["best_avg_em"].is_number());
    assert_eq!(report["rounds"].as_array().unwrap().len(), 2);
    assert!(report["rounds"][0]["per_client"].as_array().unwrap().len() == 4);

    // 6. Local run with a tag, then a comparison table over both.
    corag([
        "train",
        "--corpus",
        &s(&passages),
        "--qa",
        &s(&qa),
        "--stores",
        &s(&stores),
        "--splits",
        &s(&splits),
        "--mode",
        "local",
        "--rounds",
        "2",
        "--epochs",
        "6",
        "--top-k",
        "15",
        "--tag",
        "local",
        "--out",
        &s(&train_a),
    ])
    .unwrap();
    corag([
        "report",
        "--runs",
        &s(&train_a.join("report.json")),
        &s(&train_a.join("report-local.json")),
    ])
    .unwrap();

    // 7. Evaluate the emitted predictions.
    let eval_dir = out.join("eval");
    corag([
        "eval",
        "--predictions",
        &s(&train_a.join("predictions.jsonl")),
        "--qa",
        &s(&qa),
        "--splits",
        &s(&splits),
        "--out",
        &s(&eval_dir),
    ])
    .unwrap();
    let scores: serde_json::Value =
        serde_json::from_slice(&read(&eval_dir.join("scores.json"))).unwrap();
    assert!(scores["micro_em"].is_number());
    assert!(scores["client_avg_em"].is_number());

    // 8. Game: build from artifacts, enumerate, sweep.
    let game = out.join("game.json");
    corag([
        "game",
        "build",
        "--corpus",
        &s(&passages),
        "--qa",
        &s(&qa),
        "--taxonomy",
        &s(&taxonomy),
        "--stores",
        &s(&stores),
        "--splits",
        &s(&splits),
        "--costs",
        "0.5",
        "--out",
        &s(&game),
    ])
    .unwrap();
    let nash_dir = out.join("nash");
    corag(["game", "nash", "--spec", &s(&game), "--out", &s(&nash_dir)]).unwrap();
    let equilibria: serde_json::Value =
        serde_json::from_slice(&read(&nash_dir.join("equilibria.json"))).unwrap();
    assert_eq!(equilibria["game"], "base");
    assert!(equilibria["equilibria"].as_array().is_some());

    let sweep_dir = out.join("sweep");
    corag([
        "game",
        "mechanisms",
        "--spec",
        &s(&game),
        "--sweep",
        "rho=0:0.2:0.1",
        "--out",
        &s(&sweep_dir),
    ])
    .unwrap();
    let sweep: serde_json::Value =
        serde_json::from_slice(&read(&sweep_dir.join("equilibria.json"))).unwrap();
    assert_eq!(sweep["param"], "rho");
    assert_eq!(sweep["points"].as_array().unwrap().len(), 3);
    // A zero-strength sweep point reproduces the base game's equilibria.
    assert_eq!(sweep["points"][0]["equilibria"].as_array().unwrap().len(),
        equilibria["equilibria"].as_array().unwrap().len());
}

#[test]
fn missing_artifacts_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let err = corag([
        "categorize",
        "--corpus",
        &s(&out.join("nope.jsonl")),
        "--qa",
        &s(&out.join("nope-qa.jsonl")),
        "--out",
        &s(out),
    ])
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("nope.jsonl"));

    let err = corag([
        "train",
        "--corpus",
        &s(&out.join("nope.jsonl")),
        "--qa",
        &s(&out.join("nope-qa.jsonl")),
        "--stores",
        &s(&out.join("stores.json")),
        "--splits",
        &s(&out.join("splits.json")),
        "--mode",
        "collab",
        "--out",
        &s(out),
    ])
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);

    let err = corag([
        "gen-synthetic",
        "--passages",
        "10",
        "--qa",
        "10",
        "--seed",
        "1",
        "--out",
        &s(out),
    ])
    .unwrap_err();
    assert_eq!(err.exit_code(), 1, "too-small corpus is a validation error");
}

#[test]
fn bad_mode_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let err = corag([
        "train",
        "--corpus",
        &s(&dir.path().join("x.jsonl")),
        "--qa",
        &s(&dir.path().join("y.jsonl")),
        "--stores",
        &s(&dir.path().join("s.json")),
        "--splits",
        &s(&dir.path().join("p.json")),
        "--mode",
        "bogus",
        "--out",
        &s(dir.path()),
    ])
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("bogus"));
}
