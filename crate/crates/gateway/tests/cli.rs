use std::path::Path;
use std::process::{Command, Output};

fn noft(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noft"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn synth_validate_split() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let v = json(&noft(&["corpus", "synth", "--profile", "difficulty", "--n", "60", "--seed", "2", "--out", "d.jsonl"], d));
    assert_eq!(v["records"], 60);
    let v = json(&noft(&["corpus", "validate", "d.jsonl"], d));
    assert_eq!(v["with_difficulty"], 60);
    let v = json(&noft(
        &["corpus", "split", "--in", "d.jsonl", "--stratify", "difficulty", "--train-out", "a.jsonl", "--test-out", "b.jsonl"],
        d,
    ));
    assert_eq!(v["train"].as_u64().unwrap() + v["test"].as_u64().unwrap(), 60);
}

#[test]
fn stats_and_score_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let v = json(&noft(&["stats", "power", "--d", "0.969", "--n", "20", "--json"], d));
    let power = v[0]["result"]["achieved_power"].as_f64().unwrap();
    assert!((power - 0.8476).abs() < 1e-3, "{power}");

    let out = noft(&["stats", "bayes", "--summaries", "easy:7.58:0.77:1100,medium:7.47:1.07:365,hard:8.06:0.64:20"], d);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("delta_easy_hard") && table.contains("hdi_3%"), "{table}");

    std::fs::write(d.join("t.txt"), "the cat sat").unwrap();
    std::fs::write(d.join("g.txt"), "the cat").unwrap();
    let v = json(&noft(&["score", "rouge", "--target", "t.txt", "--generated", "g.txt"], d));
    assert!((v["f"].as_f64().unwrap() - 0.8).abs() < 1e-12);

    let v = json(&noft(&["score", "energy", "--power-w", "63.9114", "--end", "6.5251"], d));
    assert!((v["energy_j"].as_f64().unwrap() - 63.9114 * 6.5251).abs() < 1e-9);
}

#[test]
fn failures_exit_nonzero_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = noft(&["corpus", "validate", "missing.jsonl"], dir.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.jsonl"));
}
