use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use serde_json::Value;
use spregret_core::HorizonSystem;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spregret"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn gen_model(dir: &Path, name: &str, masses: usize, horizon: usize) -> PathBuf {
    let path = p(dir, name);
    ok(&run(&["gen-model", "--masses", &masses.to_string(), "--horizon", &horizon.to_string(), "-o", s(&path)]));
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Unit-weight finite-horizon LQR cost `Σ_t tr(P_t)`.
fn riccati(sys: &HorizonSystem) -> f64 {
    let (n, m) = (sys.state_dim, sys.input_dim);
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut total = p.trace();
    for t in (0..sys.horizon - 1).rev() {
        let (a, b) = (&sys.a_seq[t], &sys.b_seq[t]);
        let gain = (DMatrix::<f64>::identity(m, m) + b.transpose() * &p * b).try_inverse().unwrap() * b.transpose() * &p * a;
        p = DMatrix::<f64>::identity(n, n) + a.transpose() * &p * a - a.transpose() * &p * b * gain;
        total += p.trace();
    }
    total
}

#[test]
fn gen_model_dimensions_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_model(dir.path(), "a.json", 10, 30);
    let b = gen_model(dir.path(), "b.json", 10, 30);
    let sys = HorizonSystem::from_json(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!((sys.state_dim, sys.input_dim, sys.horizon), (20, 10, 30));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn invalid_numerics_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-model", "--masses", "1", "-o", s(&p(dir.path(), "m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["gen-model", "--ts", "-1", "-o", s(&p(dir.path(), "m.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_pattern_text_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let t = p(dir.path(), "s.txt");
    let j = p(dir.path(), "s.json");
    ok(&run(&["gen-pattern", "--masses", "3", "--horizon", "2", "-o", s(&t)]));
    ok(&run(&["gen-pattern", "--masses", "3", "--horizon", "2", "--json", "-o", s(&j)]));
    let a = spregret_core::SparsityPattern::from_text(&std::fs::read_to_string(&t).unwrap()).unwrap();
    let b = spregret_core::SparsityPattern::from_json(&std::fs::read_to_string(&j).unwrap()).unwrap();
    // The text form carries no block metadata, so compare entries only.
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.shape(), (6, 12));
}

#[test]
fn synth_spregret_on_chain_is_well_posed() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "m.json", 3, 4);
    let k = p(dir.path(), "k.json");
    ok(&run(&["synth", "--model", s(&model), "--method", "spregret", "--oracle", "nearest-qi", "-o", s(&k)]));
    let report = read_json(&p(dir.path(), "k.json.report.json"));
    let lambda = report["report"]["lambda_star"].as_f64().unwrap();
    assert!(lambda >= -1e-6, "{lambda}");
    assert_eq!(report["config"]["method"], "spregret");
    let controller = spregret_core::Controller::from_json(&std::fs::read_to_string(&k).unwrap()).unwrap();
    assert_eq!(controller.k.shape(), (12, 24));
}

#[test]
fn synth_h2_all_ones_matches_riccati() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "m.json", 2, 5);
    let k = p(dir.path(), "k.json");
    let report = p(dir.path(), "r.json");
    ok(&run(&["synth", "--model", s(&model), "--method", "h2", "--pattern", "all-ones", "-o", s(&k), "--report", s(&report)]));
    let value = read_json(&report)["value"].as_f64().unwrap();
    let sys = HorizonSystem::from_json(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let want = riccati(&sys);
    assert!((value - want).abs() <= 1e-6 * want, "{value} vs {want}");
}

#[test]
fn synth_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "m.json", 2, 3);
    for name in ["a.json", "b.json"] {
        ok(&run(&["synth", "--model", s(&model), "--method", "hinf", "-o", s(&p(dir.path(), name))]));
    }
    assert_eq!(std::fs::read(p(dir.path(), "a.json")).unwrap(), std::fs::read(p(dir.path(), "b.json")).unwrap());
    let ra = std::fs::read_to_string(p(dir.path(), "a.json.report.json")).unwrap();
    let rb = std::fs::read_to_string(p(dir.path(), "b.json.report.json")).unwrap();
    assert_eq!(ra.replace("a.json", ""), rb.replace("b.json", ""));
}

#[test]
fn missing_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--model", s(&p(dir.path(), "absent.json")), "-o", s(&p(dir.path(), "k.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_qi_oracle_pattern_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "m.json", 3, 3);
    let pattern = p(dir.path(), "s.txt");
    ok(&run(&["gen-pattern", "--masses", "3", "--horizon", "3", "-o", s(&pattern)]));
    let out = run(&[
        "synth", "--model", s(&model), "--oracle-pattern", s(&pattern), "-o", s(&p(dir.path(), "k.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("closure requires entry ("), "{err}");
}

#[test]
fn solver_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_model(dir.path(), "m.json", 2, 3);
    let out = run(&["synth", "--model", s(&model), "--method", "hinf", "--max-iter", "1", "-o", s(&p(dir.path(), "k.json"))]);
    assert_eq!(out.status.code(), Some(4));
}

fn two_controllers(dir: &Path, masses: usize, horizon: usize) -> (PathBuf, PathBuf, PathBuf) {
    let model = gen_model(dir, "m.json", masses, horizon);
    let h2 = p(dir, "h2.json");
    let hinf = p(dir, "hinf.json");
    ok(&run(&["synth", "--model", s(&model), "--method", "h2", "-o", s(&h2)]));
    ok(&run(&["synth", "--model", s(&model), "--method", "hinf", "-o", s(&hinf)]));
    (model, h2, hinf)
}

#[test]
fn affected_masses_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (model, h2, hinf) = two_controllers(dir.path(), 5, 3);
    let ctrl_a = format!("K_H2={}", s(&h2));
    let ctrl_b = format!("K_Hinf={}", s(&hinf));
    for prefix in ["a", "b"] {
        ok(&run(&[
            "experiment", "affected-masses", "--model", s(&model), "--controller", &ctrl_a, "--controller", &ctrl_b,
            "--draws", "200", "--iterations", "20", "--seed", "42", "--threads", "1", "-o", s(&p(dir.path(), prefix)),
        ]));
    }
    for ext in ["csv", "json", "svg"] {
        let a = std::fs::read(p(dir.path(), &format!("a.{ext}"))).unwrap();
        let b = std::fs::read(p(dir.path(), &format!("b.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext} differs");
    }
    let report = read_json(&p(dir.path(), "a.json"));
    assert_eq!(report["points"].as_array().unwrap().len(), 5);
    assert_eq!(report["config"]["seed"], 42);
    let csv = std::fs::read_to_string(p(dir.path(), "a.csv")).unwrap();
    assert!(csv.starts_with("# {"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 5 * 2);
}

#[test]
fn mass_count_resynthesizes_each_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "mc");
    ok(&run(&[
        "experiment", "mass-count", "--from", "3", "--to", "6", "--horizon", "2", "--draws", "20", "--iterations", "2",
        "-o", s(&out),
    ]));
    let report = read_json(&p(dir.path(), "mc.json"));
    let points = report["points"].as_array().unwrap();
    assert_eq!(points.len(), 4);
    let masses: Vec<u64> = points.iter().map(|p| p["masses"].as_u64().unwrap()).collect();
    assert_eq!(masses, vec![3, 4, 5, 6]);
    assert_eq!(report["controllers"].as_array().unwrap().len(), 4);
}

#[test]
fn experiment_validation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["experiment", "affected-masses", "--masses", "3", "--horizon", "2", "--draws", "0", "-o", s(&p(dir.path(), "e"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[
        "experiment", "affected-masses", "--masses", "3", "--horizon", "2", "--interval", "1", "0", "-o", s(&p(dir.path(), "e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn controller_model_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (_, h2, hinf) = two_controllers(dir.path(), 2, 3);
    let other = gen_model(dir.path(), "other.json", 3, 3);
    let out = run(&[
        "experiment", "affected-masses", "--model", s(&other), "--controller", &format!("a={}", s(&h2)), "--controller",
        &format!("b={}", s(&hinf)), "-o", s(&p(dir.path(), "e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_documents_flags() {
    let out = run(&["experiment", "--help"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--draws", "--iterations", "--seed", "--interval", "--threads", "SPREGRET_THREADS", "--from", "--to"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}
