//! Browser bindings for the gpcplast solver.
//!
//! Every exported function takes and returns plain strings or numbers; the
//! `*_json` functions are the native-testable cores of the bindings.

use gpcplast::config::{demo_toml, RunConfig};
use gpcplast::diagnostics::{
    constraint_audit, energy_inequality_audit, reverse_young_check, warm_start_audit, AuditReport,
};
use gpcplast::energy::{w1_total, w2_pointwise, Material};
use gpcplast::solver::run_evolution;
use gpcplast::tensor::{slip_matrix, SlipSystem, Tensor3};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest mesh the page accepts; keeps a run interactive.
pub const MAX_ELEMENTS: usize = 2 * 12 * 12;

#[derive(Serialize)]
struct Frame {
    k: usize,
    t: f64,
    y: Vec<[f64; 2]>,
    gamma: Vec<f64>,
}

#[derive(Serialize)]
struct RunOutput {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    ledger: Vec<gpcplast::solver::LedgerEntry>,
    frames: Vec<Frame>,
    audit: String,
    audit_passed: bool,
}

/// Parses a TOML configuration, runs the evolution and the cheap audits
/// (constraints, warm start, energy inequality) and returns every step.
pub fn run_json(config_toml: &str) -> Result<String, String> {
    let (cfg, _) = RunConfig::from_toml_str(config_toml).map_err(|e| e.to_string())?;
    if 2 * cfg.mesh.nx * cfg.mesh.ny > MAX_ELEMENTS {
        return Err(format!("mesh too large for the browser demo (at most {MAX_ELEMENTS} elements)"));
    }
    let model = cfg.build_model().map_err(|e| e.to_string())?;
    let traj = run_evolution(&model, &cfg.solver, cfg.loading.steps, None).map_err(|e| e.to_string())?;
    let mut report = AuditReport::default();
    report.extend(constraint_audit(&traj).map_err(|e| e.to_string())?);
    report.extend(warm_start_audit(&traj).map_err(|e| e.to_string())?);
    report.extend(energy_inequality_audit(&traj, &cfg.solver));
    let frames = traj
        .states
        .iter()
        .zip(&traj.times)
        .enumerate()
        .map(|(k, (q, &t))| Frame { k, t, y: q.y.clone(), gamma: q.z.gamma.clone() })
        .collect();
    let out = RunOutput {
        nodes: model.mesh.nodes().to_vec(),
        elements: model.mesh.elements().to_vec(),
        ledger: traj.ledger,
        frames,
        audit: report.to_text(),
        audit_passed: report.passed(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ShearPoint {
    shear: f64,
    /// Energy density with the slip frozen at zero.
    elastic: f64,
    /// Density plus dissipation at the optimal slip.
    relaxed: f64,
    gamma: f64,
}

fn point_objective(shear: f64, gamma: f64, mat: &Material, slip: &SlipSystem<2>) -> f64 {
    let f = slip_matrix(shear, slip);
    let fp_inv = slip_matrix(-gamma, slip);
    w1_total(&(f * fp_inv), &Tensor3::zeros(), mat) + w2_pointwise(gamma, &[], mat, slip) + mat.kappa * gamma.abs()
}

/// Minimizes a scalar function on `[lo, hi]`: grid scan, then golden section
/// around the best grid point.
fn minimize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 400;
    let h = (hi - lo) / n as f64;
    let best = (0..=n).map(|i| lo + h * i as f64).min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap_or(lo);
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    // the kink of |γ| at zero is the typical minimizer below yield
    let m = 0.5 * (a + b);
    if f(0.0) <= f(m) {
        0.0
    } else {
        m
    }
}

/// Homogeneous simple shear `F = I + s a⊗b` of a single material point,
/// `n` values of `s` in `[0, s_max]`. For each, the density with zero slip
/// and the one-step relaxed density `min_γ W(F F_p(γ)⁻¹) + κ|γ|`.
pub fn shear_curve_json(material_toml: &str, s_max: f64, n: usize) -> Result<String, String> {
    let (cfg, _) = RunConfig::from_toml_str(material_toml).map_err(|e| e.to_string())?;
    if !(s_max.is_finite() && s_max > 0.0) || !(2..=10_000).contains(&n) {
        return Err("need s_max > 0 and 2 <= n <= 10000".into());
    }
    let slip = SlipSystem::new(cfg.slip.a, cfg.slip.b).map_err(|e| e.to_string())?;
    let mat = &cfg.material;
    let points: Vec<ShearPoint> = (0..n)
        .map(|i| {
            let shear = s_max * i as f64 / (n - 1) as f64;
            let gamma = minimize_1d(|g| point_objective(shear, g, mat, &slip), -1.0, shear + 1.0);
            ShearPoint {
                shear,
                elastic: point_objective(shear, 0.0, mat, &slip),
                relaxed: point_objective(shear, gamma, mat, &slip),
                gamma,
            }
        })
        .collect();
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

pub fn reverse_young_json(a: f64, b: f64, delta: f64, r: f64) -> Result<String, String> {
    let check = reverse_young_check(a, b, delta, r).map_err(|e| e.to_string())?;
    serde_json::to_string(&check).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn demo_config() -> String {
    demo_toml()
}

#[wasm_bindgen]
pub fn run(config_toml: &str) -> Result<String, JsError> {
    run_json(config_toml).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn shear_curve(config_toml: &str, s_max: f64, n: usize) -> Result<String, JsError> {
    shear_curve_json(config_toml, s_max, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn reverse_young(a: f64, b: f64, delta: f64, r: f64) -> Result<String, JsError> {
    reverse_young_json(a, b, delta, r).map_err(|e| JsError::new(&e))
}
