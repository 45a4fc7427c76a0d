use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn catalog() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/hip_mag6.5.csv")
}

fn starid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starid"))
        .args(args)
        .env_remove("STARID_CATALOG")
        .output()
        .expect("spawn starid")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn build_db(dir: &Path) -> PathBuf {
    let db = dir.join("db.bin");
    let out = starid(&["build-db", "--catalog", path(&catalog()), "--mag-limit", "6", "--out", path(&db)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    db
}

fn simulate(db: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--db", path(db), "--count", "3", "--seed", "9", "--out", path(out)];
    args.extend_from_slice(extra);
    let o = starid(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_catalog_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = starid(&["build-db", "--catalog", "/no/such/file.csv", "--out", path(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file.csv"));
}

#[test]
fn nonpositive_nx_is_rejected() {
    let dir = TempDir::new().unwrap();
    for nx in ["0", "-0.01"] {
        let out = starid(&[
            "build-db",
            "--catalog",
            path(&catalog()),
            &format!("--nx={nx}"),
            "--out",
            path(&dir.path().join("x")),
        ]);
        assert_eq!(out.status.code(), Some(2), "nx {nx}");
    }
    assert!(!dir.path().join("x").exists());
}

#[test]
fn unknown_sweep_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = starid(&["bench", "--db", path(&dir.path().join("db.bin")), "--sweep", "brightness", "--levels", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulation_is_reproducible_and_identifiable() {
    let dir = TempDir::new().unwrap();
    let db = build_db(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    simulate(&db, &a, &[]);
    simulate(&db, &b, &[]);
    for i in 0..3 {
        let name = format!("scene_{i:05}.json");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }

    let out = starid(&["identify", "--db", path(&db), "--scene", path(&a.join("scene_00001.json")), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "success");
    assert_eq!(v["success"], true);
    assert!(v["matches"].as_array().unwrap().len() >= 3);
}

#[test]
fn empty_scene_reports_insufficient_stars() {
    let dir = TempDir::new().unwrap();
    let db = build_db(dir.path());
    let sc = dir.path().join("sc");
    simulate(&db, &sc, &["--keep", "0"]);
    let scene = sc.join("scene_00000.json");
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&scene).unwrap()).unwrap();
    assert_eq!(v["observed"].as_array().unwrap().len(), 0);

    for method in ["proposed", "triangle"] {
        let out = starid(&["identify", "--db", path(&db), "--scene", path(&scene), "--method", method, "--json"]);
        assert_eq!(out.status.code(), Some(0), "{method}");
        let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(r["status"], "insufficient_stars", "{method}");
    }
}

#[test]
fn bench_csv_is_deterministic_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    let db = build_db(dir.path());
    let run = |name: &str| {
        let csv = dir.path().join(name);
        let out = starid(&[
            "--threads", "1", "bench", "--db", path(&db), "--sweep", "false", "--levels", "0,0.4",
            "--frames", "6", "--seed", "3", "--out", path(&csv),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = fs::read_to_string(csv).unwrap();
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert_eq!(a[0], "method,level,frames,success_rate");
    // header plus two levels for each of the two methods
    assert_eq!(a.len(), 5);
}

#[test]
fn tune_runs_from_a_config_file() {
    let dir = TempDir::new().unwrap();
    build_db(dir.path());
    let config = dir.path().join("tune.toml");
    fs::write(
        &config,
        "database = \"db.bin\"\ntrace = \"trace.csv\"\n\n[tune]\nframes = 4\nbudget = 4\ninitial_design = 3\ngrid = 5\nsigma = 1.0\n",
    )
    .unwrap();
    let out = starid(&["--threads", "1", "tune", "--config", path(&config)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().filter(|l| !l.starts_with('#')).count() >= 5);

    fs::write(&config, "database = \"db.bin\"\n[tune]\nbogus = 1\n").unwrap();
    let out = starid(&["tune", "--config", path(&config)]);
    assert_eq!(out.status.code(), Some(2));
}
