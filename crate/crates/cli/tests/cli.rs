use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_gpcplast");

fn gpcplast(args: &[&str], dir: &Path, threads: &str) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env("GPCPLAST_THREADS", threads).output().expect("binary runs")
}

const SMALL: &str = "\
[mesh]
nx = 3
ny = 3

[loading]
steps = 4

[audit]
n_samples = 10
apriori_refinement = false

[output]
stride = 2
";

#[test]
fn demo_output_is_a_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = gpcplast(&["demo"], dir.path(), "0");
    assert!(out.status.success());
    fs::write(dir.path().join("demo.toml"), &out.stdout).unwrap();
    let check = gpcplast(&["check", "demo.toml"], dir.path(), "0");
    assert_eq!(check.status.code(), Some(0), "{}", String::from_utf8_lossy(&check.stderr));
    let echoed = String::from_utf8(check.stdout).unwrap();
    assert!(echoed.contains("[material]") && echoed.contains("kappa = 0.05"));
}

#[test]
fn run_writes_ledger_fields_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = gpcplast(&["run", "small.toml", "--strict", "--out", "res"], dir.path(), "0");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let res = dir.path().join("res");
    let ledger = fs::read_to_string(res.join("ledger.csv")).unwrap();
    let mut lines = ledger.lines();
    assert_eq!(
        lines.next(),
        Some("k,t,energy,diss_increment,var_cumulative,work_increment,balance_residual,outer_iters,grad_norm")
    );
    assert_eq!(lines.count(), 5);
    for k in [0, 2, 4] {
        let fields = fs::read_to_string(res.join(format!("fields_{k}.csv"))).unwrap();
        assert!(fields.starts_with("node_id,x,y,u_x,u_y,gamma\n"));
        assert_eq!(fields.lines().count(), 1 + 16);
    }
    assert!(!res.join("fields_1.csv").exists());
    let audit = fs::read_to_string(res.join("audit.txt")).unwrap();
    assert!(audit.contains("0 failed"), "{audit}");
    assert!(fs::read_to_string(res.join("audit.csv")).unwrap().starts_with("name,passed,measured,tolerance,details"));

    let reaudit = gpcplast(&["audit", "res", "--strict"], dir.path(), "0");
    assert_eq!(reaudit.status.code(), Some(0), "{}", String::from_utf8_lossy(&reaudit.stderr));
    assert_eq!(fs::read_to_string(res.join("audit.txt")).unwrap(), audit);
}

#[test]
fn ledger_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let a = gpcplast(&["run", "small.toml", "--out", "a"], dir.path(), "1");
    let b = gpcplast(&["run", "small.toml", "--out", "b"], dir.path(), "3");
    assert!(a.status.success() && b.status.success());
    for f in ["ledger.csv", "fields_4.csv", "audit.csv"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn invalid_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("inverted.toml"), "[mesh]\nlx = -1.0\n").unwrap();
    let out = gpcplast(&["run", "inverted.toml"], dir.path(), "0");
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lx must be > 0") && err.contains("line 2"), "{err}");

    fs::write(dir.path().join("kappa.toml"), "[material]\nkappa = -1\n").unwrap();
    let out = gpcplast(&["check", "kappa.toml"], dir.path(), "0");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kappa must be > 0"));

    let out = gpcplast(&["run", "missing.toml"], dir.path(), "0");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn hypothesis_violation_only_warns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("beta.toml"), "[material]\nbeta = 1.5\n").unwrap();
    let out = gpcplast(&["check", "beta.toml"], dir.path(), "0");
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: beta > n required"));
}

#[test]
fn strict_mode_turns_an_induced_stability_violation_into_exit_two() {
    // one steepest-descent iteration per step leaves the states far from
    // stationary; the probe's relaxation competitors expose it
    let cfg = "\
[mesh]
nx = 2
ny = 2

[loading]
steps = 2

[solver]
method = \"steepest\"
max_outer = 1
max_inner = 1

[audit]
radius = 1.0
n_samples = 20
apriori_refinement = false
rate_independence = false
";
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("coarse.toml"), cfg).unwrap();
    let strict = gpcplast(&["run", "coarse.toml", "--strict", "--out", "s"], dir.path(), "0");
    assert_eq!(strict.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&strict.stderr).contains("stability_k="));
    let lenient = gpcplast(&["run", "coarse.toml", "--out", "l"], dir.path(), "0");
    assert_eq!(lenient.status.code(), Some(0));
}
