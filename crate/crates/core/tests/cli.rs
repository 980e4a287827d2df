use std::path::Path;
use std::process::{Command, Output};

fn jump_mppi(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_jump-mppi"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("JUMP_MPPI_THREADS", t),
        None => cmd.env_remove("JUMP_MPPI_THREADS"),
    };
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
task = "cartpole"
trials = 2
seed = 5
record_timing = false

[trial]
duration = 0.2

[mppi]
horizon = 10

[sweep]
nu = [0.1, 0.25, 0.5]
sigma_j = [1, 1.5, 2, 3]
samples = [16]
base_nu = 0.25
base_sigma_j = 2
"#;

#[test]
fn validate_accepts_defaults_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "task = \"cartpole\"\n");
    let out = dir.path().join("out");
    let o = jump_mppi(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "task = \"cartpole\"\n[mppi]\nsigmaJ = 3\n");
    let o = jump_mppi(&["validate", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigmaJ"));

    let cfg = write(dir.path(), "d.toml", "task = \"cartpole\"\n[sweep]\nnu = [10.0]\n");
    let o = jump_mppi(&["validate", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zero-one"));

    let o = jump_mppi(&["validate", "--config", "/nonexistent/x.toml"], None);
    assert_eq!(o.status.code(), Some(1));

    let cfg = write(dir.path(), "e.toml", "task = \"cartpole\"\n");
    let o = jump_mppi(&["validate", "--config", &cfg], Some("zero"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_writes_one_row_per_cell_and_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    let o = jump_mppi(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], Some("1"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6 * 2);
    let files = std::fs::read_dir(out.join("trajectories")).unwrap().count();
    assert_eq!(files, 12);

    let out2 = dir.path().join("out2");
    let o = jump_mppi(
        &["run", "--config", &cfg, "--out", out2.to_str().unwrap(), "--variant", "new", "--trials", "1"],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let summary = std::fs::read_to_string(out2.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 6);
    assert!(summary.lines().skip(1).all(|l| l.starts_with("cartpole,new,")));
}

#[test]
fn single_upright_start_without_noise_stays_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        r#"
task = "cartpole"
[trial]
initial_state = [0.0, 0.0, 3.141592653589793, 0.0]
duration = 2.0
hold_window = 2.0
[mppi]
sigma_d = 1e-12
horizon = 20
[sweep]
nu = [0.0]
sigma_j = [1e-12]
samples = [32]
"#,
    );
    let out = dir.path().join("out");
    let o = jump_mppi(&["single", "--config", &cfg, "--out", out.to_str().unwrap(), "--variant", "new"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("success=true"));
    let mut r = csv::Reader::from_path(out.join("single_new.csv")).unwrap();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let theta: f64 = rec[5].parse().unwrap();
        assert!((theta - std::f64::consts::PI).abs() < 0.2);
        rows += 1;
    }
    assert_eq!(rows, 100);
}

#[test]
fn bench_emits_a_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "task = \"cartpole\"\n[sweep]\nsamples = [32]\n");
    let out = dir.path().join("out");
    let o = jump_mppi(&["bench", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("median"), "{stdout}");
    let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let blocker = write(dir.path(), "file", "");
    let o = jump_mppi(&["run", "--config", &cfg, "--out", &format!("{blocker}/sub")], None);
    assert_eq!(o.status.code(), Some(2));
}
