use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nlhom"))
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn constant_sweep_exits_zero_and_writes_outputs() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", configs().join("constant_sweep.json").to_str().unwrap(), "--deterministic", "--threads", "1"])
        .arg("--out")
        .arg(out.path())
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["report.json", "metrics.csv", "plotdata/err_L2_mu.dat"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with("eps_index,eps,seed_index,seed,metric,value\n"));
    // 4 eps × 2 seeds × 5 metrics
    assert_eq!(csv.lines().count(), 1 + 40);

    let again = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", configs().join("constant_sweep.json").to_str().unwrap(), "--deterministic"])
        .env("NLHOM_OUT_DIR", again.path())
        .status()
        .unwrap();
    assert!(status.success());
    let a = std::fs::read(out.path().join("report.json")).unwrap();
    let b = std::fs::read(again.path().join("report.json")).unwrap();
    assert_eq!(a, b);

    let plots = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["plotdata", out.path().join("report.json").to_str().unwrap(), "--out"])
        .arg(plots.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read_dir(plots.path()).unwrap().count(), 5);
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(configs().join("constant_sweep.json")).unwrap();
    std::fs::write(&path, text.replace("\"alpha\"", "\"alpa\"")).unwrap();
    let out = bin().args(["validate", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpa"));
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let out = bin().args(["validate", path.to_str().unwrap()]).output().unwrap();
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn failed_check_gives_nonzero_exit() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", configs().join("moments_pareto.json").to_str().unwrap(), "--deterministic", "--out"])
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}
