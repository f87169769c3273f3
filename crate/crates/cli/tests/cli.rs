use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neckspec"))
}

#[test]
fn lists_experiments() {
    let out = bin().arg("list-experiments").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["poisson-uniformity", "harmonic-bounds", "neck-expansion", "center-classification", "ni-table"] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn uniformity_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "poisson-uniformity", "--alpha", "0.5", "--L", "4,8", "--samples", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("poisson-uniformity.csv")).unwrap();
    assert!(csv.starts_with("alpha,source,L,observed_constant,residual"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["config"]["alphas"][0], 0.5);
}

#[test]
fn identical_configs_give_identical_csv() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, threads) in [(&a, "1"), (&b, "2")] {
        let st = bin()
            .env("NECKSPEC_THREADS", threads)
            .args(["run", "neck-expansion", "--lambdas", "1e-2,1e-3", "--source", "analytic", "--out"])
            .arg(d.path())
            .status()
            .unwrap();
        assert!(st.code().is_some_and(|c| c <= 1));
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("neck-expansion.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn failing_check_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "poisson-uniformity", "--L", "4,8", "--samples", "1", "--set", "tol.spread=1.0001", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], false);
    assert_eq!(summary["failing"][0], "spread");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "experiment = ni-table\nlambdas = 1e-3, 1e-2\n").unwrap();
    assert_eq!(bin().arg("validate-config").arg(&bad).status().unwrap().code(), Some(2));
    assert_eq!(bin().args(["run", "nope"]).status().unwrap().code(), Some(2));
    assert_eq!(bin().args(["run", "ni-table", "--lambdas", "abc"]).status().unwrap().code(), Some(2));
    assert_eq!(bin().args(["run", "ni-table", "--bogus"]).status().unwrap().code(), Some(2));
    let st = bin().env("NECKSPEC_THREADS", "zero").args(["run", "harmonic-bounds", "--samples", "1", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("# small sweep\nexperiment = harmonic-bounds\nsamples = 50\nL = 1, 2\nout = {}\n", dir.path().display())).unwrap();
    assert_eq!(bin().arg("validate-config").arg(&cfg).status().unwrap().code(), Some(0));
    let st = bin().args(["run", "--config"]).arg(&cfg).args(["--samples", "2"]).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("harmonic-bounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
}
