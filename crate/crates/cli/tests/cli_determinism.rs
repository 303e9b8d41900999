use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ai-interpret")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `dir`, sorted by name, with its bytes.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|f| f.is_file()).map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&f).unwrap())).collect();
    v.sort();
    v
}

#[test]
fn every_command_repeats_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cache = t.join("decreasing.vt");
    let solve = ["solve", "--env", "decreasing", "--cache", p(&cache)];
    let first = ok(&solve);
    assert_eq!(ok(&solve), first);
    let v: Value = serde_json::from_slice(&first).unwrap();
    assert!((v["value"].as_f64().unwrap() - 30.14).abs() < 0.05);

    for run in ["a", "b"] {
        let d = t.join(run);
        let demos = d.join("demos.jsonl");
        let report = d.join("binary.json");
        ok(&["demos", "--env", "decreasing", "--n", "12", "--seed", "4", "--out", p(&demos), "--cache", p(&cache)]);
        ok(&["interpret", "--method", "binary", "--demos", p(&demos), "--rollouts", "2000", "--seed", "1", "--cache", p(&cache), "--out", p(&report)]);
        ok(&["interpret", "--method", "lpp", "--demos", p(&demos), "--rollouts", "2000", "--cache", p(&cache), "--out", p(&d.join("lpp.json"))]);
        ok(&["pipeline", "--env", "decreasing", "--n-demos", "12", "--k", "2", "--seed", "9", "--rollouts", "2000", "--cache", p(&cache), "--out-dir", p(&d.join("pipe"))]);
        let selected = d.join("pipe").join("selected.formula.json");
        let formula = if selected.exists() { selected } else { report.clone() };
        if serde_json::from_str::<Value>(&fs::read_to_string(&formula).unwrap()).unwrap().get("formula_file") != Some(&Value::Null) {
            ok(&["render", "--formula", p(&formula), "--format", "dot", "--out", p(&d.join("tree.dot"))]);
            ok(&["render", "--formula", p(&formula), "--format", "ascii", "--out", p(&d.join("tree.txt"))]);
            let agree = ok(&["agreement", "--formula", p(&formula), "--trajectories", p(&demos), "--simulations", "50", "--seed", "2"]);
            fs::write(d.join("agreement.json"), agree).unwrap();
        }
        let suite = d.join("suite.json");
        fs::write(&suite, r#"{"envs":["decreasing"],"demo_sizes":[6],"methods":["ai","binary","lpp"],"runs":2,"seed":5,"k":2,"grid":[2,3,4,5,6],
            "interpret":{"alpha":0.7,"delta":0.025,"rollouts":1000,"max_depth":5,"clusters":18,"cut_size":0.025,"split":0.7,"mean_expert_reward":0.0,
            "tie_epsilon":1e-9,"patience":8,"seed":0,"lambda":1.0,"likelihood":"geometric_mean","accept_alpha_minus_delta":false}}"#).unwrap();
        let table = ok(&["bench", "--suite", p(&suite), "--cache-dir", p(t), "--out", p(&d.join("bench.json"))]);
        fs::write(d.join("bench.txt"), table).unwrap();
    }
    let (a, b) = (snapshot(&t.join("a")), snapshot(&t.join("b")));
    assert!(a.len() >= 7);
    assert_eq!(a, b);
    assert_eq!(snapshot(&t.join("a").join("pipe")), snapshot(&t.join("b").join("pipe")));
}

#[test]
fn failures_are_machine_readable() {
    let out = cli(&["solve", "--env", "nowhere"]);
    assert_eq!(out.status.code(), Some(2));
    let e: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(e["error"]["kind"], "usage");

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.jsonl");
    let out = cli(&["interpret", "--method", "ai", "--demos", p(&missing), "--out", p(&tmp.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let e: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(e["error"]["kind"], "io");
    assert!(out.stdout.is_empty());
}
