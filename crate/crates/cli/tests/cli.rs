use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn protegi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protegi"))
        .args(args)
        .current_dir(dir)
        .env_remove("PROTEGI_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sample.jsonl")
}

fn report_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn same_seed_gives_byte_identical_reports() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["run", "--backend", "sim", "--mode", "protegi", "--seed", "7"];
    for dir in [&a, &b] {
        let o = protegi(dir.path(), &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rel = "runs/protegi-seed7/report.json";
    let (x, y) = (std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
    assert!(!x.is_empty());
    assert_eq!(x, y);
}

#[test]
fn missing_dataset_exits_2_without_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = protegi(dir.path(), &["run", "--data", "no/such/file.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such/file.jsonl"));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--set", "search.beam_widht=3"][..],
        &["run", "--mode", "annealing"],
        &["run", "--config", "missing.toml"],
    ] {
        assert_eq!(protegi(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn mc_mode_makes_no_gradient_calls() {
    let dir = tempfile::tempdir().unwrap();
    let o = protegi(dir.path(), &["run", "--mode", "mc", "--depth", "3"]);
    assert!(o.status.success());
    let r = report_json(&dir.path().join("runs/mc-seed0/report.json"));
    assert_eq!(r["calls"]["gradient"], 0);
    assert!(r["calls"]["paraphrase"].as_u64().unwrap() > 0);
}

#[test]
fn run_directory_layout_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample();
    let o = protegi(
        dir.path(),
        &[
            "run",
            "--data",
            data.to_str().unwrap(),
            "--set",
            "data.n_dev=20",
            "--set",
            "data.n_test=10",
            "--set",
            "expansion.minibatch_size=20",
            "--depth",
            "3",
            "--selector",
            "sr",
            "--run-name",
            "sample",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("runs/sample");
    for f in ["report.json", "ledgers.jsonl", "lineage.jsonl", "timing.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let r = report_json(&run.join("report.json"));
    assert_eq!(r["config"]["selection"]["algorithm"], "sr");
    assert_eq!(r["config"]["data"]["n_dev"], 20);
    let ledgers = std::fs::read_to_string(run.join("ledgers.jsonl")).unwrap();
    assert_eq!(ledgers.lines().count(), 2);
}

#[test]
fn print_config_shows_effective_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = protegi(dir.path(), &["run", "--print-config", "--beam-width", "2", "--exploration", "1.5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("beam_width = 2"));
    assert!(text.contains("exploration = 1.5"));
}

#[test]
fn report_renders_summaries_and_comparisons() {
    let dir = tempfile::tempdir().unwrap();
    assert!(protegi(dir.path(), &["run", "--depth", "4"]).status.success());
    assert!(protegi(dir.path(), &["run", "--depth", "4", "--mode", "mc"]).status.success());

    let one = stdout(&protegi(dir.path(), &["report", "runs/protegi-seed0"]));
    let rows = one.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count();
    assert_eq!(rows, 4);
    assert!(one.contains("final: dev F1"));
    assert!(one.contains("calls:"));
    assert!(one.contains("best prompt"));

    let two = stdout(&protegi(dir.path(), &["report", "runs/protegi-seed0/report.json", "runs/mc-seed0"]));
    assert!(two.lines().any(|l| l.starts_with("protegi")));
    assert!(two.lines().any(|l| l.starts_with("mc")));
}

#[test]
fn twelve_replicates_report_mean_and_standard_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = protegi(dir.path(), &["run", "--replicates", "12", "--depth", "2"]);
    assert!(o.status.success());
    assert!(dir.path().join("runs/protegi-seed0/aggregate.json").is_file());
    let table = stdout(&protegi(dir.path(), &["report", "runs/protegi-seed0"]));
    let line = table.lines().find(|l| l.starts_with("protegi")).expect("protegi row");
    assert!(line.contains("12") && line.contains(" ± "), "{line}");
}

#[test]
fn corrupt_report_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"mode\": ").unwrap();
    assert_eq!(protegi(dir.path(), &["report", "bad.json"]).status.code(), Some(2));
    assert_eq!(protegi(dir.path(), &["report", "nothing-here"]).status.code(), Some(2));
}

#[test]
fn unreachable_backend_exits_3_with_partial_report_and_no_secret() {
    let dir = tempfile::tempdir().unwrap();
    let secret = "sk-cli-test-secret-value";
    let data = sample();
    let o = Command::new(env!("CARGO_BIN_EXE_protegi"))
        .args([
            "run",
            "--backend",
            "remote",
            "--data",
            data.to_str().unwrap(),
            "--set",
            "backend.remote.endpoint=\"http://127.0.0.1:9/v1/chat/completions\"",
            "--set",
            "backend.remote.retry.max_retries=0",
            "--set",
            "backend.remote.api_key_env=\"PROTEGI_CLI_TEST_KEY\"",
            "--set",
            "data.n_dev=10",
            "--set",
            "data.n_test=10",
            "--set",
            "expansion.minibatch_size=20",
            "-vv",
        ])
        .current_dir(dir.path())
        .env("PROTEGI_CLI_TEST_KEY", secret)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let path = dir.path().join("runs/protegi-seed0/report.json");
    let body = std::fs::read_to_string(&path).unwrap();
    assert!(report_json(&path)["failure"].is_string());
    for text in [body, stdout(&o), String::from_utf8_lossy(&o.stderr).into_owned()] {
        assert!(!text.contains(secret));
    }
}

#[test]
fn bench_bandits_prints_a_ten_cell_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = protegi(dir.path(), &["bench-bandits", "--seeds", "20", "--json", "bench.json"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["uniform", "ucb", "ucb-e", "sr", "sh"] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(name)), "{name}");
    }
    let budget = text.lines().find(|l| l.starts_with("budget")).unwrap();
    assert_eq!(budget.split_whitespace().collect::<Vec<_>>(), ["budget", "100", "200"]);
    let json = report_json(&dir.path().join("bench.json"));
    assert_eq!(json["cells"].as_array().unwrap().len(), 10);
}
