use std::path::Path;
use std::process::{Command, Output};

fn drilmpc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drilmpc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const BENCH_TOML: &str = r#"
[algorithm]
theta = 5e-4
iterations = 3
"#;

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bench.toml"), BENCH_TOML).unwrap();
    for out in ["a", "b"] {
        let o = drilmpc(&["run", "--config", "bench.toml", "--seed", "7", "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["trajectories.csv", "summary.json", "obstacles.csv"] {
        assert_eq!(read(&dir.path().join("a").join(file)), read(&dir.path().join("b").join(file)), "{file}");
    }
    let header = String::from_utf8(read(&dir.path().join("a/trajectories.csv"))).unwrap();
    assert!(header.starts_with("iter,t,z,y,vz,vy,az,ay,stage_cost,collision\n"));

    let o = drilmpc(&["check", "--config", "bench.toml", "--out", "a"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn check_detects_an_edited_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = drilmpc(&["run", "--iterations", "1", "--seed", "2", "--out", "r"], dir.path());
    assert!(o.status.success());
    let path = dir.path().join("r/trajectories.csv");
    let text = String::from_utf8(read(&path)).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let k = lines.iter().position(|l| l.starts_with("1,2,")).unwrap();
    let mut fields: Vec<String> = lines[k].split(',').map(str::to_owned).collect();
    fields[2] = "4.5".into();
    lines[k] = fields.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = drilmpc(&["check", "--out", "r"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("violation"));
}

#[test]
fn sweep_writes_one_report_per_radius() {
    let dir = tempfile::tempdir().unwrap();
    let o = drilmpc(&["--jobs", "2", "sweep", "--iterations", "2", "--out", "s"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut subdirs: Vec<String> = std::fs::read_dir(dir.path().join("s"))
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    subdirs.sort();
    assert_eq!(subdirs, ["theta_5e-1", "theta_5e-2", "theta_5e-4", "theta_5e-6"]);
    for d in &subdirs {
        assert!(dir.path().join("s").join(d).join("trajectories.csv").is_file());
    }
    let table = String::from_utf8(read(&dir.path().join("s/sweep.csv"))).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn replicate_tabulates_safety_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let o = drilmpc(&["replicate", "--n", "200", "--iterations", "1", "--out", "m"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(read(&dir.path().join("m/replications.csv"))).unwrap();
    assert_eq!(table.lines().count(), 201);
    let json: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("m/replications.json"))).unwrap();
    let freq = json["safety_frequency"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&freq));
    assert!(String::from_utf8_lossy(&o.stdout).contains("safety frequency"));
}

#[test]
fn invalid_configuration_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[algorithm]\nhorizon = 5\ntheta = 1.5\n").unwrap();
    let o = drilmpc(&["run", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}
