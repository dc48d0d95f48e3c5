use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rbcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbcast"))
        .args(args)
        .output()
        .expect("spawn rbcast")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn run_rounds(algo: &str, dir: &Path) -> u64 {
    let dir = dir.to_str().unwrap();
    let out = rbcast(&["run", "--algo", algo, "--n", "4", "--msg-size", "1000", "--out", dir]);
    json(&out)["rounds"].as_u64().unwrap()
}

#[test]
fn run_reports_good_case_rounds() {
    let dir = scratch("rounds");
    assert_eq!(run_rounds("bit", &dir.join("bit")), 3);
    assert_eq!(run_rounds("sig", &dir.join("sig")), 2);
}

#[test]
fn run_writes_versioned_trace_and_metrics() {
    let dir = scratch("files");
    let out = rbcast(&[
        "run",
        "--algo",
        "bit",
        "--n",
        "7",
        "--msg-size",
        "3000",
        "--adversary",
        "equivocate:targeted-t",
        "--delay",
        "random:3",
        "--seed",
        "4",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let summary = json(&out);
    let trace = fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    assert!(trace.lines().count() > 0);
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["schema"], 1);
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics, summary);
    assert_eq!(metrics["schema"], 1);
    assert_eq!(metrics["ell_convention"], "largest-honest-fragment");
}

#[test]
fn run_csv_has_header_and_one_row() {
    let dir = scratch("csv");
    let out = rbcast(&[
        "run",
        "--algo",
        "baseline",
        "--n",
        "4",
        "--msg-size",
        "100",
        "--format",
        "csv",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("config_digest,seed,algorithm"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let missing_n = rbcast(&["run", "--algo", "bit", "--msg-size", "10"]);
    assert_eq!(missing_n.status.code(), Some(2));
    let bad_adversary = rbcast(&[
        "run",
        "--algo",
        "bit",
        "--n",
        "4",
        "--msg-size",
        "10",
        "--adversary",
        "sneaky",
    ]);
    assert_eq!(bad_adversary.status.code(), Some(2));
    let dir = scratch("bad-scenario");
    let path = dir.join("s.json");
    fs::write(&path, r#"{"schema": 2}"#).unwrap();
    let bad_scenario = rbcast(&["sweep", "--scenario", path.to_str().unwrap(), "--seeds", "0..2"]);
    assert_eq!(bad_scenario.status.code(), Some(2));
}

fn scenario(dir: &Path) -> String {
    let path = dir.join("scenario.json");
    fs::write(
        &path,
        r#"{"schema": 1, "algo": "sig", "n": 7, "msg_size": 2048,
            "adversary": {"kind": "equivocate", "args": {"strategy": "two-way"}},
            "delay": {"kind": "random", "args": {"max": 5}}}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn sweep_is_deterministic_and_ordered() {
    let dir = scratch("sweep");
    let sc = scenario(&dir);
    let a = rbcast(&["sweep", "--scenario", &sc, "--seeds", "0..12", "--jobs", "3"]);
    let b = rbcast(&["sweep", "--scenario", &sc, "--seeds", "0..12", "--jobs", "1"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let mut reader = csv::Reader::from_reader(a.stdout.as_slice());
    let seeds: Vec<u64> = reader.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(seeds, (0..12).collect::<Vec<_>>());
}

#[test]
fn empty_seed_range_writes_only_the_header() {
    let dir = scratch("empty");
    let sc = scenario(&dir);
    let out_path = dir.join("rows.csv");
    let out = rbcast(&[
        "sweep",
        "--scenario",
        &sc,
        "--seeds",
        "5..5",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(out_path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("config_digest,"));
}

#[test]
fn bench_emits_one_row_per_parameterization_and_op() {
    let out = rbcast(&["bench", "--n", "4,7", "--input-size", "4096", "--repetitions", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["n", "k", "op", "mean_us", "p5_us", "p95_us"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    let ks: Vec<&str> = rows.iter().map(|r| r.get(1).unwrap()).collect();
    assert_eq!(ks, ["2", "2", "3", "3", "3", "3", "5", "5"]);
}
