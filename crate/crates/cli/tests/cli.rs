use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_squareice"));
    c.env_remove("SQUAREICE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("squareice-cli-test-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn count_single_odd_vertex_is_two() {
    let o = run(&["count", "--instance", "single-vertex"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "2\n");
    let err = stderr(&o);
    assert!(err.contains("seed=1") && err.contains("config="), "{err}");
}

#[test]
fn scan_variance_is_byte_identical_across_runs() {
    let dir = scratch("det");
    let mut outs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.join(name);
        let o = run(&[
            "scan", "variance", "--n", "4,8", "--seed", "7", "--sweeps", "400", "--chains", "2", "--output",
            path.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outs.push(fs::read(&path).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let text = String::from_utf8(outs[0].clone()).unwrap();
    assert!(text.starts_with("label,n,u,v,variance,std_err,mean,trials,seed\n"));
    assert_eq!(text.lines().count(), 3);
    assert!(!text.contains('\r'));
    let threaded = bin()
        .args(["scan", "variance", "--n", "4,8", "--seed", "7", "--sweeps", "400", "--chains", "2"])
        .env("SQUAREICE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(threaded.stdout, outs[0]);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_duality_small_grid_passes() {
    let o = run(&["verify", "duality", "--max-size", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("PASS duality"));
    assert!(stdout(&o).contains("(100.0% pass)"));
}

#[test]
fn injected_fault_fails_and_dumps_replayable_counterexample() {
    let dir = scratch("fault");
    let o = run(&["verify", "duality", "--max-size", "2", "--inject-fault", "--dump-dir", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let dump = fs::read_to_string(dir.join("counterexample-duality.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&dump).unwrap();
    let inst = v["instance"].to_string();
    let count = run(&["count", "--instance", &inst]);
    assert_eq!(count.status.code(), Some(0), "{}", stderr(&count));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["count"]).status.code(), Some(2));
    assert_eq!(run(&["count", "--instance", "hexagon:3"]).status.code(), Some(2));
    assert_eq!(run(&["scan", "variance", "--chains", "0"]).status.code(), Some(2));
    let o = run(&["prob", "--instance", "even-box:8", "--event", &crossing(8)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("estimate"), "{}", stderr(&o));
}

fn crossing(n: i32) -> String {
    format!(
        r#"{{"target":{{"rect":{{"x0":-{n},"x1":{n},"y0":-{n},"y1":{n}}}}},"predicate":{{"transform":"identity","set":{{"interval":[0,null]}}}},"adjacency":"nn","mode":"crossing"}}"#
    )
}

#[test]
fn prob_and_estimate_agree_on_small_instance() {
    let ev = crossing(1);
    let p = run(&["prob", "--instance", "even-box:2", "--event", &ev]);
    assert_eq!(p.status.code(), Some(0), "{}", stderr(&p));
    let exact = stdout(&p);
    let e = run(&["estimate", "--instance", "even-box:2", "--event", &ev, "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&e)).unwrap();
    let f = &v["rows"][0]["stats"]["exact"];
    assert_eq!(format!("{}/{}\n", f["num"].as_str().unwrap(), f["den"].as_str().unwrap()), exact);
}

#[test]
fn config_file_supplies_keys_and_flags_win() {
    let dir = scratch("config");
    let cfg = dir.join("c.json");
    fs::write(&cfg, r#"{"command": "count", "instance": "even-box:1", "seed": 5}"#).unwrap();
    let o = run(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("seed=5"));
    let o = run(&["--config", cfg.to_str().unwrap(), "--seed", "9", "count", "--instance", "single-vertex"]);
    assert_eq!(stdout(&o), "2\n");
    assert!(stderr(&o).contains("seed=9"));
    fs::write(&cfg, r#"{"command": "count", "instanse": "even-box:1"}"#).unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sample_emits_valid_height_functions() {
    let o = run(&["sample", "--instance", "even-box:2", "--samples", "3", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
    let o = run(&["sample", "--instance", "torus:8", "--samples", "2", "--sweeps", "50", "--thin", "25", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1 + 2 * 64);
}
