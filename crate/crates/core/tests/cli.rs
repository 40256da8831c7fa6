use std::fs;
use std::path::Path;
use std::process::Command;

fn run(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_pathbellman"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs");
    out.status.code().expect("exit code")
}

fn small(cmd: &str) -> Vec<&str> {
    vec![cmd, "sim.n_paths=400", "sim.steps=16", "problem.name=controlled_drift", "initial.t=0.25"]
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for cmd in ["simulate", "bsde", "cascade", "verify"] {
        assert_eq!(run(a.path(), &small(cmd)), 0, "{cmd}");
        let mut single = small(cmd);
        single.extend(["--workers", "1"]);
        assert_eq!(run(b.path(), &single), 0, "{cmd}");
    }
    for name in ["simulate.csv", "bsde.csv", "cascade.csv", "verify.csv", "verify.txt"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
    let head = fs::read_to_string(a.path().join("cascade.csv")).unwrap();
    let lines: Vec<&str> = head.lines().collect();
    assert!(lines[0].starts_with("# pathbellman"));
    assert!(lines[1].starts_with("# seed: 1"));
    assert!(lines[2].starts_with("# input_hash: "));
    assert!(lines[3].starts_with("# config: {"));
    assert_eq!(lines[4], "m,value,diff,envelope,error,extrapolated");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("manifest-cascade.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert!(manifest["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 2);

    assert_eq!(run(a.path(), &["report"]), 0);
    let report = fs::read_to_string(a.path().join("report.csv")).unwrap();
    assert!(report.contains("cascade,ok,cascade.csv,"));
}

#[test]
fn seed_flag_changes_the_sample() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(a.path(), &small("simulate")), 0);
    let mut args = small("simulate");
    args.extend(["--seed", "2"]);
    assert_eq!(run(b.path(), &args), 0);
    assert_ne!(fs::read(a.path().join("simulate.csv")).unwrap(), fs::read(b.path().join("simulate.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &["bsde", "problem.name=nope"]), 2);
    assert_eq!(run(d.path(), &["bsde", "no_such_key=1"]), 2);
    assert_eq!(run(d.path(), &["bsde", "--config", "/nonexistent/cfg.toml"]), 2);
    assert_eq!(run(d.path(), &["dpp-check", "problem.name=delay_demo"]), 2);

    // a forced single substep breaks the explicit scheme's stability bound
    let args = ["cascade", "cascade.m=[1]", "cascade.grid.nodes=201", "cascade.grid.substeps=1"];
    assert_eq!(run(d.path(), &args), 3);
    let manifest = fs::read_to_string(d.path().join("manifest-cascade.json")).unwrap();
    assert!(manifest.contains("numerical_failure"));
    assert!(fs::read_to_string(d.path().join("cascade.txt")).unwrap().contains("numerical failure"));
}

#[test]
fn config_file_and_overrides() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "seed = 7\n[problem]\nname = \"asian\"\n[cascade]\nm = [1, 2]\n[cascade.grid]\nnodes = 41\n").unwrap();
    let out = d.path().join("out");
    let code = Command::new(env!("CARGO_BIN_EXE_pathbellman"))
        .args(["cascade", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("cascade.m=[1]")
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(0));
    let body = fs::read_to_string(out.join("cascade.csv")).unwrap();
    assert!(body.contains("# seed: 7"));
    let data: Vec<&str> = body.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 2);
    let value: f64 = data[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!(value.abs() < 1e-9, "{value}");
}

#[test]
fn tail_csv_is_monotone_and_manifest_has_results() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &["holder-tail", "sim.n_paths=2000", "sim.steps=64"]), 0);
    let body = fs::read_to_string(d.path().join("holder_tail.csv")).unwrap();
    let rows: Vec<Vec<f64>> = body
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').take(4).map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for w in rows.windows(2) {
        assert!(w[1][0] >= w[0][0] && w[1][1] <= w[0][1]);
    }

    assert_eq!(run(d.path(), &small("bsde")), 0);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("manifest-bsde.json")).unwrap()).unwrap();
    assert!(m["results"]["eps_num"].as_f64().unwrap() > 0.0);

    assert_eq!(run(d.path(), &["cascade", "cascade.m=[1,2]", "cascade.grid.nodes=21", "cascade.dump=true"]), 0);
    let grid = fs::read_to_string(d.path().join("cascade_grid_m2.csv")).unwrap();
    assert_eq!(grid.lines().filter(|l| !l.starts_with('#')).count(), 1 + 21 + 21 * 21);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            pathbellman::cli::ExperimentConfig::load(Some(&path), &[]).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
