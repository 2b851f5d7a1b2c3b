use std::path::Path;
use std::process::{Command, Output};

fn nsdde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsdde")).args(args).output().expect("run nsdde")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn selftest_passes_and_is_repeatable() {
    let a = nsdde(&["selftest"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(text.contains("6/6 suites passed"));
    assert_eq!(nsdde(&["selftest"]).stdout, a.stdout);
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "# small linear run\nsystem.name = linear\ngrid.T = 4\nensemble.N = 200\nensemble.seed = 3\n",
    );
    let o = nsdde(&["run", &cfg, "--workers", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let moments = std::fs::read_to_string(out.join("moments.csv")).unwrap();
    let mut lines = moments.lines();
    assert_eq!(lines.next(), Some("step,k_times_h,mean_sq,std_err"));
    assert_eq!(lines.count(), 41);
    let exps = std::fs::read_to_string(out.join("exponents.csv")).unwrap();
    assert!(exps.starts_with("ms_slope,ms_ci_lo,ms_ci_hi,as_q05,as_q50,as_q95"));
    let cert = std::fs::read_to_string(out.join("certificate.txt")).unwrap();
    for key in ["f_at_one = ", "C_bar = ", "C = ", "ms_rate = ", "as_rate = ", "empirical_K_bar = "] {
        assert!(cert.contains(key), "certificate lacks {key}");
    }
    assert!(out.join("assumptions.txt").is_file());
}

#[test]
fn strict_mode_flags_hypothesis_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "system.name = pure_noise\ngrid.T = 2\nensemble.N = 20\n");
    let o = nsdde(&["run", &cfg, "--strict", "--out", out.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(out.join("moments.csv").is_file());
}

#[test]
fn classic_cubic_divergence_exits_nonzero_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "system.name = cubic\nsegment.value = 10\nscheme.kind = classic\ngrid.T = 2\nensemble.N = 4\n",
    );
    let o = nsdde(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let moments = std::fs::read_to_string(out.join("moments.csv")).unwrap();
    assert!(moments.lines().count() < 22);
}

#[test]
fn config_errors_exit_one_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "system.name = linear\ngrid.T = 2.05\n");
    let o = nsdde(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));

    let cfg = write_config(dir.path(), "system.name = linear\nfoo = 1\n");
    let o = nsdde(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("foo"));

    let o = nsdde(&["run", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
