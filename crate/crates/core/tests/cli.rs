use std::path::Path;
use std::process::{Command, Output};

fn pate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pate")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unanimous_votes_release_the_winner() {
    let dir = tempfile::tempdir().unwrap();
    let votes = dir.path().join("votes.jsonl");
    std::fs::write(
        &votes,
        "{\"query_id\":\"a\",\"counts\":[250,0,0,0,0,0,0,0,0,0]}\n\
         {\"query_id\":\"b\",\"counts\":[0,0,0,0,250,0,0,0,0,0]}\n\
         {\"query_id\":\"c\",\"labels\":[9,9,9],\"num_classes\":10}\n",
    )
    .unwrap();
    let labels = dir.path().join("labels.jsonl");
    let ledger = dir.path().join("ledger.jsonl");
    let out = pate(&[
        "aggregate",
        path(&votes),
        "--gamma",
        "0.05",
        "--labels",
        path(&labels),
        "--ledger",
        path(&ledger),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let labels = std::fs::read_to_string(&labels).unwrap();
    let lines: Vec<_> = labels.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("\"format_version\":1") && lines[0].contains("\"seed\":0"));
    assert!(lines[1].contains("\"label\":0"));
    assert!(lines[2].contains("\"label\":4"));

    let ledger = std::fs::read_to_string(&ledger).unwrap();
    assert_eq!(ledger.lines().count(), 4);
    assert_eq!(ledger.matches("DataDependent").count(), 2 * 8);
}

#[test]
fn empty_votes_file_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let votes = dir.path().join("votes.jsonl");
    std::fs::write(&votes, "").unwrap();
    let labels = dir.path().join("labels.jsonl");
    let ledger = dir.path().join("ledger.jsonl");
    let out = pate(&[
        "aggregate",
        path(&votes),
        "--gamma",
        "0.05",
        "--labels",
        path(&labels),
        "--ledger",
        path(&ledger),
    ]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("no queries"), "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(&ledger).unwrap().lines().count(), 1);

    let out = pate(&["account", path(&ledger)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["moments"]["epsilon"], 0.0);
    assert_eq!(report["strong_composition"]["epsilon"], 0.0);
}

#[test]
fn out_of_range_label_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let votes = dir.path().join("votes.jsonl");
    std::fs::write(
        &votes,
        "{\"query_id\":\"a\",\"labels\":[0,1],\"num_classes\":3}\n\
         {\"query_id\":\"b\",\"labels\":[0,3],\"num_classes\":3}\n",
    )
    .unwrap();
    let out = pate(&[
        "aggregate",
        path(&votes),
        "--gamma",
        "0.05",
        "--labels",
        path(&dir.path().join("l.jsonl")),
        "--ledger",
        path(&dir.path().join("g.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn bad_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    std::fs::write(&ledger, "{\"gamma\":0.05,\"lambda_grid\":[1,2],\"seed\":0,\"format_version\":1}\n").unwrap();
    let out = pate(&["account", path(&ledger), "--delta", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("delta"));

    let corrupted = dir.path().join("corrupted.jsonl");
    std::fs::write(
        &corrupted,
        "{\"gamma\":0.05,\"lambda_grid\":[1,2],\"seed\":0,\"format_version\":1}\n{\"query_id\": oops}\n",
    )
    .unwrap();
    let out = pate(&["account", path(&corrupted)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let out = pate(&["simulate", "--gamma=0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_passes_across_seeds() {
    for seed in 0..10 {
        let seed = seed.to_string();
        let out = pate(&["verify", "--seed", &seed, "--histograms", "100", "--mc-histograms", "5", "--trials", "20000"]);
        assert_eq!(out.status.code(), Some(0), "seed {seed}: {}", stderr(&out));
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report["failures"], 0);
    }
}

#[test]
fn verify_without_trials_is_quadrature_only() {
    let out = pate(&["verify", "--trials", "0", "--histograms", "20"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["monte_carlo"]["cases"], 0);
    assert_eq!(report["failures"], 0);
    assert!(report["cases"].as_u64().unwrap() > 0);
}

#[test]
fn simulate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let budget = dir.path().join("budget.json");
    let sweep = dir.path().join("sweep.csv");
    let out = pate(&[
        "simulate",
        "--queries",
        "50",
        "--seed",
        "3",
        "--output",
        path(&budget),
        "--sweep-out",
        path(&sweep),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(&sweep).unwrap();
    assert!(csv.starts_with("# {"));
    assert!(csv.contains("gamma,accuracy,mean_gap,mean_normalized_gap"));

    let out = pate(&["report", path(&budget), path(&sweep)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("strong composition"));
    assert!(text.contains("accuracy sweep"));

    let again = dir.path().join("again.json");
    assert!(pate(&["simulate", "--queries", "50", "--seed", "3", "--output", path(&again)]).status.success());
    assert_eq!(std::fs::read(&budget).unwrap(), std::fs::read(&again).unwrap());
}
