use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kl"))
        .args(args)
        .env_remove("KL_CACHE_DIR")
        .output()
        .expect("spawn kl")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn empty_configuration_scenario_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "empty.toml", "name = \"empty\"\ntask = \"evolve\"\nt_max = 0.5\n");
    let out = tmp.path().join("run");
    let o = kl(&["run", s(&sc), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["status"], "success");
    assert_eq!(m["scenario"]["name"], "empty");
    assert!(out.join("traj.csv").exists());
}

#[test]
fn overlapping_slits_are_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(
        tmp.path(),
        "bad.toml",
        "name = \"bad\"\ntask = \"evolve\"\nt_max = 0.5\nslits = [{ y = 1, x = 0, xr = 1 }, { y = 1, x = 0.5, xr = 2 }]\n",
    );
    let o = kl(&["run", s(&sc), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("config invalid") && err.contains("OverlapAtEqualHeight"), "{err}");
}

#[test]
fn stochastic_run_without_seed_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kl(&["skle", "--tmax", "0.1", "--dt", "1e-2", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn seeded_skle_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let slits = write(tmp.path(), "slits.json", r#"[{"y": 1.0, "x": -1.0, "xr": 1.0}]"#);
    let run = |name: &str, jobs: &str| {
        let out = tmp.path().join(name);
        let o = kl(&[
            "skle", "--slits", s(&slits), "--tmax", "0.2", "--dt", "1e-2", "--paths", "3", "--seed", "11", "--jobs",
            jobs, "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let a = run("a", "1");
    let b = run("b", "2");
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    assert_eq!(ma["scenario_hash"], mb["scenario_hash"]);
    for f in ["paths.csv", "summary.json", "path_0000.csv", "path_0002.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn csv_matches_the_serialized_trajectory_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let slits = write(tmp.path(), "slits.toml", "slits = [{ y = 1.0, x = -0.5, xr = 0.5 }]\n");
    let out = tmp.path().join("run");
    let o = kl(&["evolve", "--slits", s(&slits), "--xi", "0.3", "--tmax", "0.2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let traj: Value = serde_json::from_slice(&fs::read(out.join("traj.json")).unwrap()).unwrap();
    let text = fs::read_to_string(out.join("traj.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,y_1,x_1,xr_1,xi,R");
    let times = traj["times"].as_array().unwrap();
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), times.len());
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0].to_bits(), times[k].as_f64().unwrap().to_bits());
        assert_eq!(row[4].to_bits(), traj["xi"][k].as_f64().unwrap().to_bits());
        assert_eq!(row[5].to_bits(), traj["r"][k].as_f64().unwrap().to_bits());
    }
}

#[test]
fn manifests_verify_and_detect_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = kl(&["evolve", "--tmax", "0.1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = out.join("manifest.json");
    let o = kl(&["verify", "--manifest", s(&m)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    fs::write(out.join("traj.csv"), "t\n").unwrap();
    let o = kl(&["verify", "--manifest", s(&m)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("checksum mismatch"), "{}", stderr(&o));
}

#[test]
fn csv_out_path_names_the_main_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("k").join("psi.csv");
    let o = kl(&["kernel", "--grid", "3,2,-1,1,0.5,1", "--bmd", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("b_BMD = 0.0000000000000000e0"));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(tmp.path().join("k").join("manifest.json").exists());
}

#[test]
fn transform_reads_an_evolve_run() {
    let tmp = tempfile::tempdir().unwrap();
    let slits = write(tmp.path(), "slits.json", r#"{"slits": [{"y": 2.0, "x": -1.0, "xr": 1.0}]}"#);
    let run = tmp.path().join("evolve");
    let o = kl(&["evolve", "--slits", s(&slits), "--tmax", "0.1", "--out", s(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pts = write(tmp.path(), "pts.json", "[[0.5, 1.0]]");
    let out = tmp.path().join("iota");
    let o = kl(&["transform", "--run", s(&run.join("manifest.json")), "--points", s(&pts), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest(&out)["status"], "success");
    let text = fs::read_to_string(out.join("iota.csv")).unwrap();
    assert!(text.starts_with("t,U,iota1,iota2,a0,p0_re,p0_im\n"));
    assert!(text.lines().count() > 2);
}

#[test]
fn unknown_suite_is_an_error() {
    let o = kl(&["verify", "nonsense"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nonsense"), "{}", stderr(&o));
}

#[test]
fn kernel_suite_passes_and_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_kl"))
        .args(["verify", "kernel", "--out", s(tmp.path())])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&fs::read(tmp.path().join("report-kernel.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 2);
}

#[test]
fn kernel_cache_reuses_solutions() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let slits = write(tmp.path(), "slits.json", r#"[{"y": 1.0, "x": -1.0, "xr": 1.0}]"#);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_kl"))
            .args(["kernel", "--slits", s(&slits), "--xi", "0.2", "--grid", "4,3,-2,2,0.5,2", "--out", s(&out)])
            .env("KL_CACHE_DIR", &cache)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(out.join("kernel.csv")).unwrap()
    };
    let first = run("a");
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    assert_eq!(run("b"), first);
}
