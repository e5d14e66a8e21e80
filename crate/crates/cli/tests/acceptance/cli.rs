use std::path::PathBuf;
use std::process::{Command, Output};

fn fms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fms")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_lines(s: &str) -> Vec<&str> {
    s.lines().filter(|l| !l.starts_with('#')).collect()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fms-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const EVOLVE: &[&str] = &["evolve", "--q", "3", "--lambda", "0.6", "--offspring", "poisson:3", "--cap", "2000"];

#[test]
fn evolve_writes_one_row_per_step() {
    let o = fms(&[EVOLVE, &["--k", "5"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("# fms "));
    assert!(text.contains("# config: {"));
    let rows = data_lines(&text);
    assert_eq!(rows[0], "k,p_e,capacity,chi2,skl,phi_H,atoms");
    assert_eq!(rows.len(), 1 + 6);
}

#[test]
fn parameter_errors_exit_with_2() {
    assert_eq!(fms(&["evolve", "--lambda", "0.5", "--offspring", "regular:2"]).status.code(), Some(2));
    assert_eq!(fms(&[EVOLVE, &["--bogus", "1"]].concat()).status.code(), Some(2));
    assert_eq!(fms(&["evolve", "--q", "3", "--lambda", "2", "--offspring", "regular:2"]).status.code(), Some(2));
    assert_eq!(fms(&["constants", "--q", "3", "--lambda-grid", "1:0:0.1"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_3() {
    let o = fms(&[EVOLVE, &["--k", "1", "--out", "/nonexistent-dir/x.csv"]].concat());
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(fms(&[EVOLVE, &["--config", "/nonexistent-dir/c.conf"]].concat()).status.code(), Some(3));
}

#[test]
fn flags_override_config_and_unknown_keys_are_rejected() {
    let dir = scratch("config");
    let cfg = dir.join("evolve.conf");
    std::fs::write(&cfg, "# trace settings\nq = 3\nlambda = 0.6\noffspring = poisson:3\nk = 3\ncap = 2000\n").unwrap();
    let cfg_s = cfg.to_str().unwrap();

    let from_file = fms(&["evolve", "--config", cfg_s]);
    assert!(from_file.status.success());
    assert_eq!(data_lines(&stdout(&from_file)).len(), 1 + 4);

    let overridden = fms(&["evolve", "--config", cfg_s, "--k", "6"]);
    assert!(overridden.status.success());
    assert_eq!(data_lines(&stdout(&overridden)).len(), 1 + 7);

    let bad = dir.join("bad.conf");
    std::fs::write(&bad, "q = 3\nlambda = 0.6\noffspring = poisson:3\nnot_a_key = 1\n").unwrap();
    assert_eq!(fms(&["evolve", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn reruns_are_byte_identical() {
    let args = [EVOLVE, &["--k", "4", "--seed", "9"]].concat();
    assert_eq!(stdout(&fms(&args)), stdout(&fms(&args)));
    let other = [EVOLVE, &["--k", "4", "--seed", "10", "--realization", "sampled"]].concat();
    let sampled = [EVOLVE, &["--k", "4", "--seed", "9", "--realization", "sampled"]].concat();
    assert_ne!(data_lines(&stdout(&fms(&sampled))), data_lines(&stdout(&fms(&other))));
}

#[test]
fn help_lists_every_key() {
    let text = stdout(&fms(&["treesim", "majority", "--help"]));
    for key in ["--q", "--lambda", "--d", "--eta", "--k", "--trials", "--seed", "--poisson", "--ratio-depth", "--out"] {
        assert!(text.contains(key), "{key} missing from help");
    }
    let top = stdout(&fms(&["--help"]));
    for cmd in ["evolve", "phase", "constants", "mi-integral", "treesim", "sbm"] {
        assert!(top.contains(cmd));
    }
    assert!(stdout(&fms(&["--version"])).starts_with(&format!("fms {}", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn json_documents_carry_version_and_params() {
    let o = fms(&["treesim", "majority", "--q", "3", "--lambda", "0.7", "--d", "3", "--eta", "0.5", "--k", "2", "--trials", "500"]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(doc["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert_eq!(doc["command"], "treesim majority");
    assert_eq!(doc["params"]["trials"], 500);
    assert!(doc["z_scores"].is_object() || doc["z_scores"].is_array());
}

#[test]
fn generated_graphs_round_trip_through_recovery() {
    let dir = scratch("sbm");
    let (graph, labels) = (dir.join("g.txt"), dir.join("l.txt"));
    let gen = fms(&[
        "sbm", "generate", "--n", "2000", "--q", "2", "--a", "5.6", "--b", "1.4", "--seed", "3",
        "--out", graph.to_str().unwrap(), "--labels-out", labels.to_str().unwrap(),
    ]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));

    let sampled = fms(&[
        "sbm", "recover-side", "--n", "2000", "--q", "2", "--a", "5.6", "--b", "1.4", "--seed", "3",
        "--survey", "erasure:0.7", "--cap", "2000",
    ]);
    let loaded = fms(&[
        "sbm", "recover-side", "--graph", graph.to_str().unwrap(), "--labels", labels.to_str().unwrap(),
        "--survey", "erasure:0.7", "--cap", "2000",
    ]);
    assert!(loaded.status.success(), "{}", String::from_utf8_lossy(&loaded.stderr));
    let a: serde_json::Value = serde_json::from_slice(&sampled.stdout).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&loaded.stdout).unwrap();
    assert_eq!(a["accuracy"], b["accuracy"]);
    assert!(a["accuracy"].as_f64().unwrap() > 0.75);

    let missing = fms(&["sbm", "recover-side", "--graph", graph.to_str().unwrap(), "--survey", "erasure:0.7"]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}
