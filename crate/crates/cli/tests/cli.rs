use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn peek(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peek"))
        .arg("--config")
        .arg(fixture("mini.toml"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dir(o: &Output) -> PathBuf {
    let line = stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("run directory: ").map(str::to_string))
        .expect("no run directory line");
    PathBuf::from(line)
}

#[test]
fn stages_run_in_order_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let built = peek(dir.path(), &["build-dataset"]);
    assert!(built.status.success(), "{}", stderr(&built));
    assert!(stdout(&built).contains("facts: 108 (54 positive, 54 negative)"));
    let root = run_dir(&built);
    assert!(root.starts_with(dir.path()));
    assert!(root.join("facts.jsonl").is_file());

    let probed = peek(dir.path(), &["probe"]);
    assert!(probed.status.success(), "{}", stderr(&probed));
    assert!(stdout(&probed).contains("records: 108 (requests 108"));
    assert_eq!(run_dir(&probed), root);

    let trained = peek(dir.path(), &["train-eval"]);
    assert!(trained.status.success(), "{}", stderr(&trained));
    let table = stdout(&trained);
    let rows: Vec<&str> = table
        .lines()
        .skip_while(|l| !l.starts_with("embedding"))
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(rows, ["majority", "random", "noise", "signal"]);
    assert!(root.join("models/signal.json").is_file());
    assert!(root.join("models/signal.last.json").is_file());

    let comparison: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(comparison["format"], "peektable");

    let reported = peek(dir.path(), &["report"]);
    assert!(reported.status.success(), "{}", stderr(&reported));
    assert!(dir.path().join("overall-rank.txt").is_file());
    let rank: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("overall-rank.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(rank["format"], "peekrank");
}

#[test]
fn dotted_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let base = peek(dir.path(), &["build-dataset"]);
    let o = peek(dir.path(), &["--dataset.negatives", "0", "build-dataset"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("facts: 54 (54 positive, 0 negative)"));
    assert_ne!(run_dir(&o), run_dir(&base));
    let saved = fs::read_to_string(run_dir(&o).join("config.toml")).unwrap();
    assert!(saved.contains("negatives = 0"), "{saved}");
}

#[test]
fn unknown_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = peek(dir.path(), &["--dataset.bogus", "1", "build-dataset"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn api_key_in_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("mini.toml")).unwrap();
    let text = text.replace("[backend]\n", "[backend]\napi_key = \"sk-secret\"\n");
    let cfg = dir.path().join("leaky.toml");
    fs::write(&cfg, text).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_peek"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("build-dataset")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("api_key"), "{}", stderr(&o));
    assert!(!stderr(&o).contains("sk-secret"));
}

#[test]
fn missing_template_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = peek(dir.path(), &["--dataset.templates", "absent.tsv", "build-dataset"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.tsv"), "{}", stderr(&o));
}

fn http_flags(key_env: &str) -> Vec<&str> {
    vec![
        "--backend",
        "http",
        "--backend.api_key_env",
        key_env,
        "--backend.endpoint",
        "http://127.0.0.1:9/v1/chat/completions",
        "--backend.max_retries",
        "0",
    ]
}

fn probe_over_http(out: &Path, key_env: &str) -> Output {
    let mut args = http_flags(key_env);
    args.push("build-dataset");
    let built = peek(out, &args);
    assert!(built.status.success(), "{}", stderr(&built));
    args.pop();
    args.push("probe");
    peek(out, &args)
}

#[test]
fn unset_key_variable_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = probe_over_http(dir.path(), "PEEK_CLI_TEST_UNSET_KEY");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("PEEK_CLI_TEST_UNSET_KEY"));
}

#[test]
fn unreachable_endpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = probe_over_http(dir.path(), "");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("probe run failed"), "{}", stderr(&o));
}

#[test]
fn help_and_bad_subcommand() {
    let help = Command::new(env!("CARGO_BIN_EXE_peek")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("train-eval"));
    let bad = Command::new(env!("CARGO_BIN_EXE_peek")).arg("frobnicate").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
