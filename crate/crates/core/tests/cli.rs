//! The command-line contract: exit codes, layout, determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_overdamped");

const SMALL: &str = r#"
dim = 1
beta = 1.0
eps = [0.4, 0.2]
horizon = 0.2
n_traj = 3000
seed = 17
output_dt = 0.02

[potential]
terms = "1 1.0 0.0"

[initial]
momentum = "zero"

[[observable]]
label = "cos"
terms = "1 1.0 0.0"

[[ladder]]
times = [0.04, 0.1, 0.2]
phi = "cos"
f = "cos"
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p
}

fn overdamped(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn success_prints_the_artifact_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = overdamped(&["converge", "--config", path_arg(&cfg), "--out", path_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    assert!(dir.starts_with(out.join("converge")));
    for f in ["weak_error.csv", "manifest.toml", "config.toml"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(dir.join("weak_error.csv")).unwrap();
    assert!(csv.starts_with("eps,f,t,estimate,pooled_se\n"));
    assert!(!csv.contains('"') && !csv.contains('\r'));
}

#[test]
fn same_seed_any_worker_count_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let mut dirs = Vec::new();
    for (i, workers) in ["1", "3", "8"].into_iter().enumerate() {
        let out = tmp.path().join(format!("out{i}"));
        let o = overdamped(&["ladder", "--config", path_arg(&cfg), "--out", path_arg(&out), "--workers", workers]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dirs.push(PathBuf::from(String::from_utf8(o.stdout).unwrap().trim()));
    }
    for name in ["ladder.csv", "manifest.toml", "config.toml"] {
        let first = fs::read(dirs[0].join(name)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(first, fs::read(d.join(name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn seed_flag_overrides_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let run = |seed: &str| {
        let o = overdamped(&["converge", "--config", path_arg(&cfg), "--out", path_arg(&out), "--seed", seed]);
        assert!(o.status.success());
        PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
    };
    let (a, b) = (run("1"), run("2"));
    assert_ne!(a, b);
    let manifest: toml::Table = fs::read_to_string(b.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(2));
    assert_ne!(
        fs::read(a.join("weak_error.csv")).unwrap(),
        fs::read(b.join("weak_error.csv")).unwrap()
    );
}

#[test]
fn validation_failures_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), &SMALL.replace("[0.4, 0.2]", "[0.2, 0.4]"));
    let o = overdamped(&["converge", "--config", path_arg(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eps"));

    let o = overdamped(&["histogram", "--config", path_arg(&bad)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn heavy_tails_need_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "momentum = \"zero\"",
        "momentum = \"scaled\"\nmomentum_scale = 1.0\nmomentum_exponent = 1.0",
    );
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = overdamped(&["moments", "--config", path_arg(&cfg), "--out", path_arg(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--allow-heavy-tails"));
    let o = overdamped(&[
        "moments",
        "--config",
        path_arg(&cfg),
        "--out",
        path_arg(&out),
        "--allow-heavy-tails",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn runtime_failures_exit_with_1_and_leave_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("n_traj = 3000", "n_traj = 3000000\nmemory_limit_mb = 1");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = overdamped(&["simulate", "--config", path_arg(&cfg), "--out", path_arg(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fs::read_dir(out.join("simulate")).unwrap().count(), 0);

    let o = overdamped(&["converge", "--config", path_arg(&tmp.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_ensembles() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("n_traj = 3000", "n_traj = 3"));
    let out = tmp.path().join("out");
    let o = overdamped(&["simulate", "--config", path_arg(&cfg), "--out", path_arg(&out)]);
    assert!(o.status.success());
    let dir = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    let reference = fs::read_to_string(dir.join("overdamped.csv")).unwrap();
    assert!(reference.starts_with("traj,t,q1\n"));
    assert_eq!(reference.lines().count(), 1 + 3 * 11);
    let lang = fs::read_to_string(dir.join("langevin_eps1.csv")).unwrap();
    assert!(lang.starts_with("traj,t,q1,p1\n"));
}
