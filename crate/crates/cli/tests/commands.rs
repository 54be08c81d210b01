use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hyperent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperent"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = hyperent(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map(|d| {
            d.map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default();
    names.sort();
    names
}

#[test]
fn unknown_state_name_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hyperent(tmp.path(), &["make-state", "--name", "phi+_nonsense", "--out-dir", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phi+_nonsense"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hyperent(
        tmp.path(),
        &["simulate", "--state", "absent.json", "--settings", "absent.json"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn bad_usage_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(hyperent(tmp.path(), &["bell", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(hyperent(tmp.path(), &["make-state"]).status.code(), Some(2));
}

#[test]
fn failures_leave_no_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "phi+_poln", "--out-dir", "s"]);
    // settings for a 6-dim photon do not fit a qubit state: fails after reading inputs
    ok(
        d,
        &[
            "settings-gen",
            "tomography",
            "--dofs",
            "poln,spatial",
            "--out-dir",
            "big",
        ],
    );
    let out = hyperent(
        d,
        &[
            "simulate",
            "--state",
            "s/state.json",
            "--settings",
            "big/settings.json",
            "--out-dir",
            "fail",
        ],
    );
    assert_ne!(out.status.code(), Some(0));
    assert!(files_in(&d.join("fail")).is_empty());

    // reconstruct stages rho.json and diagnostics.json together; a bad option aborts both
    ok(
        d,
        &[
            "settings-gen",
            "tomography",
            "--state",
            "s/state.json",
            "--out-dir",
            "b",
        ],
    );
    ok(
        d,
        &[
            "simulate",
            "--state",
            "s/state.json",
            "--settings",
            "b/settings.json",
            "--seed",
            "1",
            "--out-dir",
            "b",
        ],
    );
    let before = files_in(&d.join("b"));
    let out = hyperent(
        d,
        &["reconstruct", "--bundle", "b", "--tolerance", "-1", "--out-dir", "b"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(files_in(&d.join("b")), before);
}

#[test]
fn simulation_is_deterministic_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "fig2_fit", "--out-dir", "s"]);
    ok(
        d,
        &[
            "settings-gen",
            "tomography",
            "--state",
            "s/state.json",
            "--out-dir",
            "s",
        ],
    );
    let settings = json(&d.join("s/settings.json"));
    assert_eq!(settings.as_array().unwrap().len(), 1296);
    let run = |out: &str, threads: &str| {
        ok(
            d,
            &[
                "simulate",
                "--state",
                "s/state.json",
                "--settings",
                "s/settings.json",
                "--mean-counts",
                "10000",
                "--seed",
                "11",
                "--threads",
                threads,
                "--out-dir",
                out,
            ],
        );
        std::fs::read(d.join(out).join("counts.csv")).unwrap()
    };
    let one = run("t1", "1");
    let four = run("t4", "4");
    assert_eq!(one, four);
    let text = String::from_utf8(one).unwrap();
    assert_eq!(text.lines().next(), Some("setting_a,setting_b,counts,duration"));
    assert_eq!(text.lines().count(), 1297);
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "phi+_poln", "--out-dir", "s"]);
    ok(
        d,
        &[
            "settings-gen",
            "tomography",
            "--state",
            "s/state.json",
            "--out-dir",
            "s",
        ],
    );
    ok(
        d,
        &[
            "simulate",
            "--state",
            "s/state.json",
            "--settings",
            "s/settings.json",
            "--seed",
            "5",
            "--out-dir",
            "s",
        ],
    );
    ok(
        d,
        &[
            "reconstruct",
            "--bundle",
            "s",
            "--bootstrap",
            "5",
            "--seed",
            "3",
            "--out-dir",
            "r",
        ],
    );

    let manifest = json(&d.join("r/reconstruct.manifest.json"));
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);

    let elsewhere = tempfile::tempdir().unwrap();
    let out = ok(
        elsewhere.path(),
        &[
            "replay",
            d.join("r/reconstruct.manifest.json").to_str().unwrap(),
            "--out-dir",
            "again",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("byte for byte"));
    for name in ["rho.json", "diagnostics.json", "bootstrap.json"] {
        assert_eq!(
            std::fs::read(d.join("r").join(name)).unwrap(),
            std::fs::read(elsewhere.path().join("again").join(name)).unwrap()
        );
    }

    // tampering with a recorded output makes the comparison fail
    std::fs::write(d.join("r/rho.json"), "{}").unwrap();
    let out = hyperent(
        elsewhere.path(),
        &[
            "replay",
            d.join("r/reconstruct.manifest.json").to_str().unwrap(),
            "--out-dir",
            "third",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn depolarized_catalog_state_is_sixteen_dimensional() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["make-state", "--name", "fig3d", "--grid"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("dimension 16"));
    let state = json(&tmp.path().join("state.json"));
    assert_eq!(state["dims"], serde_json::json!([2, 2, 2, 2]));
    let grid = std::fs::read_to_string(tmp.path().join("state_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 257);
}

#[test]
fn optimized_bell_on_phi_plus_reaches_tsirelson() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "phi+_poln"]);
    ok(d, &["bell", "--state", "state.json", "--optimize"]);
    let r = json(&d.join("bell.json"));
    let s = r["S"].as_f64().unwrap();
    assert!((s - 2.0 * 2f64.sqrt()).abs() < 1e-6);
    assert!(r["settings"].is_object());
    assert!(r.get("sigma").is_none());
}

#[test]
fn counts_mode_reports_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "phi+_poln"]);
    ok(d, &["settings-gen", "chsh", "--optimize-from", "state.json"]);
    assert_eq!(json(&d.join("settings.json")).as_array().unwrap().len(), 16);
    ok(
        d,
        &[
            "simulate",
            "--state",
            "state.json",
            "--settings",
            "settings.json",
            "--mean-counts",
            "10000",
            "--seed",
            "2",
        ],
    );
    ok(d, &["bell", "--counts", "counts.csv"]);
    let r = json(&d.join("bell.json"));
    let (s, sigma) = (r["S"].as_f64().unwrap(), r["sigma"].as_f64().unwrap());
    assert!(sigma > 0.0 && sigma < 0.02, "sigma {sigma}");
    assert!((s - 2.0 * 2f64.sqrt()).abs() < 5.0 * sigma, "S {s} ± {sigma}");
}

#[test]
fn projecting_the_zero_mode_leaves_a_polarization_bell_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "eq1_poln_spa"]);
    ok(
        d,
        &[
            "bell",
            "--state",
            "state.json",
            "--dof",
            "poln",
            "--project",
            "spatial=g",
        ],
    );
    let s = json(&d.join("bell.json"))["S"].as_f64().unwrap();
    assert!((s - 2.0 * 2f64.sqrt()).abs() < 1e-9);
    // projecting onto |l⟩|l⟩ has zero probability in this state
    let out = hyperent(
        d,
        &[
            "bell",
            "--state",
            "state.json",
            "--dof",
            "poln",
            "--project",
            "spatial=l",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn spatial_analysis_uses_the_logical_encoding() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "phi+_spa"]);
    ok(d, &["bell", "--state", "state.json"]);
    let s = json(&d.join("bell.json"))["S"].as_f64().unwrap();
    assert!((s - 2.0 * 2f64.sqrt()).abs() < 1e-9, "S {s}");
}

#[test]
fn reconstruct_and_metrics_on_a_qubit_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "phi+_poln"]);
    ok(
        d,
        &["settings-gen", "tomography", "--state", "state.json", "--out-dir", "b"],
    );
    ok(
        d,
        &[
            "simulate",
            "--state",
            "state.json",
            "--settings",
            "b/settings.json",
            "--mean-counts",
            "10000",
            "--seed",
            "8",
            "--out-dir",
            "b",
        ],
    );
    ok(d, &["reconstruct", "--bundle", "b", "--grid", "--out-dir", "r"]);
    ok(
        d,
        &[
            "metrics",
            "--rho",
            "r/rho.json",
            "--target",
            "state.json",
            "--out-dir",
            "r",
        ],
    );
    let m = json(&d.join("r/metrics.json"));
    assert!(m["tangle"].as_f64().unwrap() > 0.97);
    assert!(m["fidelity"].as_f64().unwrap() > 0.99);
    let diag = json(&d.join("r/diagnostics.json"));
    assert_eq!(diag["converged"], true);
    assert_eq!(
        std::fs::read_to_string(d.join("r/rho_grid.csv"))
            .unwrap()
            .lines()
            .count(),
        17
    );

    // linear inversion of a pure state at finite counts is slightly non-physical:
    // the raw estimate is written with a warning and later refused as a state
    let out = ok(
        d,
        &["reconstruct", "--bundle", "b", "--method", "linear", "--out-dir", "lin"],
    );
    let diag = json(&d.join("lin/diagnostics.json"));
    assert_eq!(diag["method"], "linear");
    let min_eig = diag["min_eigenvalue"].as_f64().unwrap();
    if min_eig < -1e-6 {
        assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
        let refused = hyperent(d, &["metrics", "--rho", "lin/rho.json", "--out-dir", "lin"]);
        assert_eq!(refused.status.code(), Some(4));
    }
}

#[test]
fn fringe_scan_feeds_visibility() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "phi+_te"]);
    ok(d, &["bell", "--state", "state.json", "--optimize", "--fringe"]);
    ok(d, &["metrics", "--fringe", "fringe.csv"]);
    let v = json(&d.join("metrics.json"))["visibility"].as_f64().unwrap();
    assert!((v - 1.0).abs() < 1e-9);
}

#[test]
fn noiseless_loop_and_non_converged_warning() {
    use hyperent::source::{make_named_state, write_counts_csv, CountRecord};
    use hyperent::tomography::canonical_set;

    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["make-state", "--name", "fig3b"]);
    ok(
        d,
        &["settings-gen", "tomography", "--state", "state.json", "--out-dir", "b"],
    );
    // expected counts rounded at 1e12 stand in for noiseless data
    let rho = make_named_state("fig3b").unwrap();
    let settings = canonical_set(4).unwrap().settings(rho.layout()).unwrap();
    let records: Vec<CountRecord> = settings
        .iter()
        .map(|e| CountRecord {
            setting_a: e.setting_a.clone(),
            setting_b: e.setting_b.clone(),
            counts: (e.element(rho.layout()).unwrap().probability(&rho) * 1e12).round() as u64,
            duration: 1.0,
            expected: None,
        })
        .collect();
    let mut csv = Vec::new();
    write_counts_csv(&records, &mut csv).unwrap();
    std::fs::write(d.join("b/counts.csv"), csv).unwrap();

    ok(d, &["reconstruct", "--bundle", "b", "--out-dir", "r"]);
    ok(
        d,
        &[
            "metrics",
            "--rho",
            "r/rho.json",
            "--target",
            "state.json",
            "--out-dir",
            "r",
        ],
    );
    let f = json(&d.join("r/metrics.json"))["fidelity"].as_f64().unwrap();
    assert!(f >= 1.0 - 1e-6, "fidelity {f}");

    let out = ok(
        d,
        &[
            "reconstruct",
            "--bundle",
            "b",
            "--max-iterations",
            "1",
            "--bootstrap",
            "3",
            "--out-dir",
            "nc",
        ],
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("did not converge"), "{stderr}");
    assert_eq!(json(&d.join("nc/diagnostics.json"))["converged"], false);
    assert!(!d.join("nc/bootstrap.json").exists());
}
