use std::path::Path;
use std::process::{Command, Output};

fn ctxid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxid")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gradcheck_succeeds() {
    let out = ctxid(&["gradcheck", "--networks", "5", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("failures 0"));
}

#[test]
fn invalid_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(ctxid(&["eval", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    let unknown = write(dir.path(), "unknown.toml", "experiment = \"polynomial\"\nbogus = 1\n");
    assert_eq!(ctxid(&["eval", "--config", &unknown]).status.code(), Some(2));
    let bounds = write(dir.path(), "bounds.toml", "experiment = \"polynomial\"\n[polynomial]\nn_context = 0\n");
    assert_eq!(ctxid(&["eval", "--config", &bounds]).status.code(), Some(2));
    let poly = write(dir.path(), "poly.toml", "experiment = \"polynomial\"\n");
    let out = ctxid(&["mpc", "--config", &poly]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("drone_mpc"));
}

#[test]
fn numerical_failure_exits_with_3_and_keeps_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "nan.toml",
        "experiment = \"polynomial\"\nseeds = [1]\nmethods = [\"no_adapt\"]\n\
         [polynomial]\ntrain_tasks = 16\ntest_tasks = 4\n\
         [polynomial.noadapt]\nouter_lr = 1e200\nepochs = 3\nbatch_size = 4\n",
    );
    let out_dir = dir.path().join("out");
    let out = ctxid(&["eval", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("# config_digest: "));
    let report = std::fs::read_to_string(out_dir.join("report.toml")).unwrap();
    assert!(report.contains("seed 1"));
}

#[test]
fn gen_data_writes_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "experiment = \"polynomial\"\n[polynomial]\ntrain_tasks = 4\ntest_tasks = 2\n");
    let out_dir = dir.path().join("data");
    let out = ctxid(&["gen-data", "--config", &cfg, "--seed", "2", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out_dir.join("seed_2/manifest.toml").exists());
    let tasks = std::fs::read_to_string(out_dir.join("seed_2/tasks.csv")).unwrap();
    assert!(tasks.starts_with("# config_digest: "));
}
