use boltzscat::cli::{random_field, resolve, DataSpec, Experiment, RunConfig};
use boltzscat::maxwellian::GlobalMaxwellianParams;
use boltzscat::phase_field::PhaseGrid;
use proptest::prelude::*;
use serde_json::{json, Value};
use std::path::Path;
use std::process::Command;

fn base() -> Value {
    json!({
        "maxwellian": {"m": 1.0, "a": 1.0, "b": 0.0, "c": 1.0, "B": [[0, 0], [0, 0]], "x0": [0, 0], "v0": [0, 0], "D": 2},
        "mass_margin": 0.5,
        "grid": {"nv": 8, "vmax": 6.0, "nx": 8, "xmax": 6.0},
        "solver": {"nt": 5},
        "data": {"kind": "random", "amplitude": 0.05},
        "seed": 3
    })
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(dir: &Path, name: &str, config: &Value, args: &[&str]) -> Run {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_boltzscat"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join(name))
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8_lossy(&out.stdout).into(),
        stderr: String::from_utf8_lossy(&out.stderr).into(),
    }
}

fn summary(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name).join("summary.json")).unwrap()).unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "ok", &base(), &["validate"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(summary(dir.path(), "ok")["status"], "passed");

    let mut bad = base();
    bad["maxwellian"]["c"] = json!(0.0);
    let r = run(dir.path(), "bad", &bad, &["validate"]);
    assert_eq!(r.code, 2);
    let s = summary(dir.path(), "bad");
    assert_eq!(s["results"]["verdict"]["accepted"], false);

    // a heavy reference is admissible but draws a warning
    let mut heavy = base();
    heavy.as_object_mut().unwrap().remove("mass_margin");
    assert_eq!(run(dir.path(), "heavy", &heavy, &["validate"]).code, 0);
    assert_eq!(summary(dir.path(), "heavy")["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(run(dir.path(), "strict", &heavy, &["validate", "--strict"]).code, 2);
}

#[test]
fn configuration_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base();
    c["colour"] = json!("red");
    let r = run(dir.path(), "unknown", &c, &["fit"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("colour") && r.stderr.contains("line"), "{}", r.stderr);

    let mut c = base();
    c["kernel"] = json!({"beta": -3.0, "bhat": "constant:1", "D": 2});
    let r = run(dir.path(), "beta", &c, &["simulate"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("kernel") && r.stderr.contains("beta = -3"), "{}", r.stderr);

    let mut c = base();
    c["experiment"] = json!("scatter");
    let r = run(dir.path(), "mismatch", &c, &["simulate"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("experiment"), "{}", r.stderr);

    let mut c = base();
    c.as_object_mut().unwrap().remove("mass_margin");
    let r = run(dir.path(), "nu", &c, &["scatter"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("1/4") && r.stderr.contains("m <"), "{}", r.stderr);
    // bounds accepts the same reference
    let r = run(dir.path(), "nu_bounds", &json!({"maxwellian": c["maxwellian"], "samples": 64}), &["bounds"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn fit_from_explicit_moments_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = GlobalMaxwellianParams::centered(2, 0.7, 1.2, 0.3, 1.1, 0.25).unwrap();
    let mut c = base();
    c["moments"] = json!(p.analytic_moments().values);
    let r = run(dir.path(), "fit", &c, &["fit"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = summary(dir.path(), "fit");
    let b = s["results"]["params"]["b"].as_f64().unwrap();
    assert!((b - 0.3).abs() < 1e-8);
    assert!(r.stdout.contains("PASS fit residual"));

    let rep = Command::new(env!("CARGO_BIN_EXE_boltzscat"))
        .args(["report", "--out"])
        .arg(dir.path().join("fit"))
        .output()
        .unwrap();
    assert_eq!(rep.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&rep.stdout), r.stdout);

    let missing = Command::new(env!("CARGO_BIN_EXE_boltzscat")).args(["report", "--out"]).arg(dir.path().join("none")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn solver_experiments_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), "sim", &base(), &["simulate"]);
    assert_eq!(r.code, 0, "{}\n{}", r.stdout, r.stderr);
    let d = dir.path().join("sim");
    let csv = std::fs::read_to_string(d.join("timeseries.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,mass,") && header.ends_with(",H,entropy_production,sup_dev"), "{header}");
    assert_eq!(lines.count(), 5);
    assert!(std::fs::read_to_string(d.join("iteration.log")).unwrap().starts_with("# cauchy"));
    for stem in ["data", "asymptote_plus", "asymptote_minus"] {
        assert!(d.join(format!("{stem}.json")).exists() && d.join(format!("{stem}.bin")).exists());
    }

    // the dumped asymptote feeds the inverse wave operator
    let mut c = base();
    c["data"] = json!({"kind": "dump", "path": "sim/asymptote_plus.json"});
    c["direction"] = json!("plus");
    let r = run(dir.path(), "inv", &c, &["wave-inverse"]);
    assert_eq!(r.code, 0, "{}\n{}", r.stdout, r.stderr);
    let s = summary(dir.path(), "inv");
    assert!(s["results"]["round_trip"].as_f64().unwrap() < 1e-4);
    assert!(s["assertions"].as_array().unwrap().iter().all(|a| a["passed"] == true));
}

#[test]
fn seed_flag_changes_random_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base();
    c["dumps"] = json!(false);
    run(dir.path(), "a", &c, &["simulate"]);
    let r = run(dir.path(), "b", &c, &["simulate", "--seed", "4"]);
    assert_eq!(r.code, 0);
    let (a, b) = (summary(dir.path(), "a"), summary(dir.path(), "b"));
    assert_eq!(b["config"]["seed"], 4);
    assert_ne!(a["results"]["sup_dev"], b["results"]["sup_dev"]);
    assert!(!dir.path().join("a").join("data.json").exists());
}

#[test]
fn resolve_defaults() {
    let c: RunConfig = serde_json::from_value(base()).unwrap();
    let r = resolve(c, Experiment::Simulate, Path::new(".")).unwrap();
    assert_eq!(r.kernel.beta, 0.0);
    assert!((r.nu_bar.unwrap() - 0.125).abs() < 1e-12);
    assert!(matches!(r.config.data, DataSpec::Random { modes: 4, .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn random_field_has_the_requested_amplitude(amp in 0.0f64..0.5, modes in 1usize..6, seed in 0u64..1000) {
        let p = GlobalMaxwellianParams::standard(2, 0.02);
        let g = PhaseGrid::new(2, 6, 6.0, 6, 6.0, &p).unwrap();
        let f = random_field(&g, &p, amp, modes, seed);
        prop_assert!((f.sup_deviation(1.0) - amp).abs() <= 1e-14);
        prop_assert_eq!(f.h, random_field(&g, &p, amp, modes, seed).h);
    }
}
