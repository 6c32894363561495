use gpcplast_wasm::{demo_config, reverse_young_json, run_json, shear_curve_json};
use serde_json::Value;

const SMALL: &str = "[mesh]\nnx = 2\nny = 2\n[loading]\nsteps = 3\n";

#[test]
fn run_returns_every_frame_and_a_passing_audit() {
    let out: Value = serde_json::from_str(&run_json(SMALL).unwrap()).unwrap();
    assert_eq!(out["nodes"].as_array().unwrap().len(), 9);
    assert_eq!(out["elements"].as_array().unwrap().len(), 8);
    assert_eq!(out["ledger"].as_array().unwrap().len(), 4);
    let frames = out["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 4);
    assert_eq!(frames[3]["gamma"].as_array().unwrap().len(), 9);
    assert_eq!(out["audit_passed"], Value::Bool(true), "{}", out["audit"]);
}

#[test]
fn run_rejects_bad_input() {
    assert!(run_json("[material]\nkappa = -1\n").unwrap_err().contains("kappa must be > 0"));
    assert!(run_json("[mesh]\nnx = 40\nny = 40\n").unwrap_err().contains("too large"));
}

#[test]
fn demo_config_is_accepted() {
    assert!(demo_config().contains("[loading]"));
}

#[test]
fn shear_curve_yields_past_a_threshold() {
    let pts: Vec<Value> = serde_json::from_str(&shear_curve_json("", 1.0, 21).unwrap()).unwrap();
    assert_eq!(pts.len(), 21);
    let gamma: Vec<f64> = pts.iter().map(|p| p["gamma"].as_f64().unwrap()).collect();
    let elastic: Vec<f64> = pts.iter().map(|p| p["elastic"].as_f64().unwrap()).collect();
    let relaxed: Vec<f64> = pts.iter().map(|p| p["relaxed"].as_f64().unwrap()).collect();
    // no slip at zero shear, slip eventually
    assert_eq!(gamma[0], 0.0);
    assert!(gamma[20] > 0.1);
    for i in 0..21 {
        assert!(relaxed[i] <= elastic[i] + 1e-12);
    }
    assert!(shear_curve_json("", -1.0, 10).is_err());
}

#[test]
fn reverse_young_binding() {
    let c: Value = serde_json::from_str(&reverse_young_json(1.0, 1.0, 1.0, 2.0).unwrap()).unwrap();
    assert_eq!(c["passed"], Value::Bool(true));
    assert!(reverse_young_json(1.0, 1.0, 1.0, 0.5).is_err());
}
