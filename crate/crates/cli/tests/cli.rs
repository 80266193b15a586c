//! End-to-end tests of the `motifcut` binary.

use std::path::Path;
use std::process::{Command, Output};

use motifcut::generate::{generate, GraphModel};
use motifcut::graph::PairWeights;
use motifcut::io::{format_graph, parse_graph, parse_signed_graph};

fn motifcut(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motifcut")).args(args).current_dir(dir).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_dense_graph(dir: &Path) {
    let g = generate(GraphModel::Complete { n: 8 }, 0).unwrap().scaled(2.0).unwrap();
    std::fs::write(dir.join("g.txt"), format_graph(&g)).unwrap();
}

fn strip_timings(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn gen_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let out = motifcut(&["gen", "--model", "gnp", "--n", "25", "--p", "0.3", "--seed", "9", "--output", "g.txt"], dir.path());
    assert_eq!(code(&out), 0, "{out:?}");
    let parsed = parse_graph(&dir.path().join("g.txt")).unwrap();
    let direct = generate(GraphModel::Gnp { n: 25, p: 0.3 }, 9).unwrap();
    assert_eq!(parsed.weights(), direct.weights());

    // Without --output the graph goes to standard output.
    let out = motifcut(&["gen", "--model", "regular", "--n", "10", "--d", "3", "--seed", "1"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("n=10\n"));
}

#[test]
fn seed_sweep_writes_one_csv_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    write_dense_graph(dir.path());
    let out = motifcut(
        &[
            "run", "--input", "g.txt", "--eps", "2", "--delta", "1e-6", "--beta", "0.25", "--seeds", "1..=20",
            "--csv", "s.csv", "--cut-mode", "exhaustive",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 21);
    assert_eq!(
        lines[0],
        "method,seed,n,input_total_weight,epsilon,delta,beta,degenerate,released_total_weight,iterations,\
         restarts,lambda,eta,chosen_restart,output_total_weight,max_cut_error,cut_mode,evaluated_cuts,total_ms"
    );
    for (k, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("mechanism,{},8,", k + 1)), "{line}");
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_dense_graph(dir.path());
    let args = |report: &'static str| {
        vec!["run", "--input", "g.txt", "--eps", "2", "--delta", "1e-6", "--beta", "0.25", "--seed", "5", "--report", report, "--output", "o.txt"]
    };
    assert_eq!(code(&motifcut(&args("a.json"), dir.path())), 0);
    assert_eq!(code(&motifcut(&args("b.json"), dir.path())), 0);
    let a = std::fs::read_to_string(dir.path().join("a.json")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b.json")).unwrap();
    assert_eq!(strip_timings(&a), strip_timings(&b));
    let report = strip_timings(&a);
    assert_eq!(report["seed"], 5);
    assert_eq!(report["degenerate"], false);

    // The released graph is a valid graph file.
    let released = parse_graph(&dir.path().join("o.txt")).unwrap();
    assert_eq!(released.n(), 8);
}

#[test]
fn baseline_alongside_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    write_dense_graph(dir.path());
    let out = motifcut(
        &["run", "--input", "g.txt", "--eps", "1", "--delta", "1e-6", "--beta", "0.25", "--baseline", "rr", "--output", "o.txt"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("mechanism seed=0") && text.contains("rr seed=0"), "{text}");
    let noisy = parse_signed_graph(&dir.path().join("o-rr.txt")).unwrap();
    assert_eq!(noisy.n(), 8);

    let out = motifcut(&["eval", "--input", "g.txt", "--compare", "o-rr.txt", "--cut-mode", "exhaustive"], dir.path());
    assert_eq!(code(&out), 0);
    let result: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(result["evaluated_cuts"], 127);
    assert!(result["max_error"].as_f64().unwrap() >= 0.0);

    let out = motifcut(&["baseline", "--input", "g.txt", "--eps", "0.5", "--clip-negative", "--output", "c.txt"], dir.path());
    assert_eq!(code(&out), 0);
    parse_graph(&dir.path().join("c.txt")).unwrap();
}

#[test]
fn printed_config_replays_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = motifcut(
        &["--print-config", "baseline", "--model", "gnp", "--n", "9", "--p", "0.5", "--eps", "1", "--seeds", "3..5"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    std::fs::write(dir.path().join("c.json"), stdout(&out)).unwrap();
    let direct = motifcut(&["baseline", "--model", "gnp", "--n", "9", "--p", "0.5", "--eps", "1", "--seeds", "3..5"], dir.path());
    let replayed = motifcut(&["--config", "c.json"], dir.path());
    assert_eq!(code(&replayed), 0);
    assert_eq!(stdout(&direct), stdout(&replayed));
    assert_eq!(stdout(&direct).lines().count(), 2);

    std::fs::write(dir.path().join("bad.json"), stdout(&out).replacen('{', "{\"extra\": 1,", 1)).unwrap();
    assert_eq!(code(&motifcut(&["--config", "bad.json"], dir.path())), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_dense_graph(dir.path());
    // Configuration errors.
    assert_eq!(code(&motifcut(&["run", "--bogus"], dir.path())), 2);
    assert_eq!(code(&motifcut(&["run", "--input", "g.txt", "--eps", "-1", "--delta", "1e-6", "--beta", "0.25"], dir.path())), 2);
    assert_eq!(code(&motifcut(&["baseline", "--eps", "1"], dir.path())), 2);
    assert_eq!(code(&motifcut(&["gen", "--model", "regular", "--n", "5", "--d", "3"], dir.path())), 2);
    assert_eq!(code(&motifcut(&["eval", "--input", "g.txt", "--compare", "g.txt", "--cut-mode", "sampled:0"], dir.path())), 2);
    // Input errors.
    assert_eq!(code(&motifcut(&["baseline", "--input", "missing.txt", "--eps", "1"], dir.path())), 3);
    std::fs::write(dir.path().join("neg.txt"), "n=3\n0,1,-2\n").unwrap();
    let out = motifcut(&["baseline", "--input", "neg.txt", "--eps", "1"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    // Thread cap must be a positive integer.
    let out = Command::new(env!("CARGO_BIN_EXE_motifcut"))
        .args(["baseline", "--input", "g.txt", "--eps", "1"])
        .env("MOTIFCUT_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_motifcut"))
        .args(["verify", "--report", "v.json"])
        .env("MOTIFCUT_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 16);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    assert!(report.as_array().unwrap().iter().all(|c| c["passed"] == true));
}
