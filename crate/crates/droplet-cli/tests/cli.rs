use std::fs;
use std::process::Command;

fn droplet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_droplet"))
}

#[test]
fn theory_writes_the_bundle_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = droplet().args(["theory", "--delta", "1", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let lambda = summary["outcome"]["lambda"].as_f64().unwrap();
    assert!((lambda - 0.70151).abs() < 1e-5);
    let hash = summary["manifest"]["config_hash"].as_str().unwrap();
    for f in ["table.csv", "manifest.json"] {
        assert!(fs::read_to_string(dir.path().join(f)).unwrap().contains(hash));
    }
}

#[test]
fn oracle_flags_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = droplet()
        .args(["oracle", "--beta", "1", "--inner", "2x2", "--outer", "2x3", "--n", "2", "--print", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["outcome"]["pressure"].as_f64().unwrap() - 0.37086).abs() < 1e-5);
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "kind = \"gt-pressure\"\n[geometry]\neta = 0.0\n[kappa]\nsource = \"value\"\nkappa = 0.004\n").unwrap();
    let out = droplet().arg("validate").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("thermodynamic-limit"));
    let run = droplet().args(["gt-pressure", "--config"]).arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn config_kind_must_match_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.toml");
    fs::write(&path, "kind = \"theory\"\n").unwrap();
    let out = droplet().args(["oracle", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let ok = droplet().arg("validate").arg(&path).output().unwrap();
    assert!(ok.status.success());
}

#[test]
fn failing_check_gives_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    // no KP certificate close to the transition line
    let out = droplet()
        .args(["cluster", "--beta", "1", "--mu=-2.5", "--widths", "4,5,6", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}
