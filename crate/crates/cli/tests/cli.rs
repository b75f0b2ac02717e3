use std::path::Path;
use std::process::{Command, Output};

fn sps(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sps"));
    cmd.args(args).env_remove("SPS_SEED");
    if let Some(s) = seed {
        cmd.env("SPS_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "data");
    let run = p(dir.path(), "run");

    let o = sps(&["gen-data", "--task", "vision", "--n", "10", "--out", &data], Some("4"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with('{'));

    let train = ["train", "--task", "vision", "--preset", "acceptance", "--iterations", "2", "--batch-size", "2", "--data", &data, "--out", &run];
    assert_eq!(code(&sps(&train, None)), 0);
    // Non-empty output directory without --force.
    assert_eq!(code(&sps(&train, None)), 2);
    assert_eq!(code(&sps(&["train", "--task", "vision", "--data", &data, "--out", &p(dir.path(), "x")], Some("abc"))), 2);
    assert_eq!(code(&sps(&["train", "--task", "vision", "--batch-size", "0", "--data", &data, "--out", &p(dir.path(), "y")], None)), 2);
    assert_eq!(code(&sps(&["eval", "--run", &run, "--data", &p(dir.path(), "missing")], None)), 2);
    assert!(!Path::new(&run).join("eval.json").exists());
    assert_eq!(code(&sps(&["sweep", "nonsense", "--out", &p(dir.path(), "sw")], None)), 2);
    assert_eq!(code(&sps(&["frobnicate"], None)), 2);

    let o = sps(&["eval", "--run", &run, "--data", &data], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(Path::new(&run).join("eval.json").is_file());
}

#[test]
fn config_file_errors_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let o = sps(&["train", "--config", &cfg.to_string_lossy(), "--out", &p(dir.path(), "r")], None);
    assert_eq!(code(&o), 2);
}
