//! A-posteriori audits of computed trajectories.
//!
//! Every audit returns an [`AuditReport`]; a failed check is a report entry,
//! not an error. Errors are reserved for invalid inputs and for solver
//! failures inside audits that rerun the evolution.

use std::fmt::Write as _;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dissipation::{diss_distance, variation, DissipationError};
use crate::energy::{EnergyError, Model, State};
use crate::solver::{run_evolution, Problem, SolverError, SolverOptions, Trajectory};
use crate::tensor::slip_matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Dissipation(#[from] DissipationError),
}

/// One audited relation. `measured` is a slack (pass when `>= -tolerance`)
/// or a discrepancy (pass when `<= tolerance`), as stated in `details`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub details: String,
}

impl Check {
    fn slack(name: &str, measured: f64, tolerance: f64, details: String) -> Self {
        Check { name: name.into(), passed: measured >= -tolerance, measured, tolerance, details }
    }

    fn discrepancy(name: &str, measured: f64, tolerance: f64, details: String) -> Self {
        Check { name: name.into(), passed: measured <= tolerance, measured, tolerance, details }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<Check>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn extend(&mut self, other: AuditReport) {
        self.checks.extend(other.checks);
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "[{}] {}: measured {:e}, tolerance {:e}\n    {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance,
                c.details
            );
        }
        let n_fail = self.failures().count();
        let _ = writeln!(out, "{} checks, {} failed", self.checks.len(), n_fail);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,passed,measured,tolerance,details\n");
        for c in &self.checks {
            let details = c.details.replace('"', "\"\"");
            let _ = writeln!(out, "{},{},{:e},{:e},\"{}\"", c.name, c.passed, c.measured, c.tolerance, details);
        }
        out
    }
}

/// Solver bias allowed in the discrete energy inequality: `e_tol·N + η·κ·|Ω|·N`
/// (with `κ_p` added when hardening is active).
pub fn energy_inequality_tolerance(traj: &Trajectory, opts: &SolverOptions) -> f64 {
    let mat = &traj.model.material;
    let kappa = mat.kappa + if mat.hardening_dim() > 0 { mat.kappa_p } else { 0.0 };
    let n = traj.steps() as f64;
    opts.e_tol * n + opts.eta * kappa * traj.model.mesh.area() * n
}

/// Worst slacks of the two-sided discrete energy inequality over all index
/// pairs `i < j`:
///
/// `-Σ Δr_k ℓ(y_k) ≤ I(t_j, q_j) + Var(t_i, t_j) − I(t_i, q_i) ≤ -Σ Δr_k ℓ(y_{k-1})`
///
/// with `Δr_k = ramp(t_k) − ramp(t_{k-1})` and the sums over `k = i+1..=j`.
/// The work integrals are exact because the load is a known ramp times a
/// functional linear in `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InequalitySlack {
    pub lower: f64,
    pub lower_pair: (usize, usize),
    pub upper: f64,
    pub upper_pair: (usize, usize),
}

pub fn energy_inequality_slack(traj: &Trajectory) -> InequalitySlack {
    let model = &traj.model;
    let n = traj.steps();
    let mut w_lo = vec![0.0; n + 1];
    let mut w_up = vec![0.0; n + 1];
    for k in 1..=n {
        let dr = model.loads.ramp(traj.times[k]) - model.loads.ramp(traj.times[k - 1]);
        w_lo[k] = w_lo[k - 1] + dr * model.load_functional(&traj.states[k].y);
        w_up[k] = w_up[k - 1] + dr * model.load_functional(&traj.states[k - 1].y);
    }
    let e: Vec<f64> = traj.ledger.iter().map(|l| l.energy).collect();
    let v: Vec<f64> = traj.ledger.iter().map(|l| l.var_cumulative).collect();
    let mut s = InequalitySlack { lower: f64::INFINITY, lower_pair: (0, 0), upper: f64::INFINITY, upper_pair: (0, 0) };
    for i in 0..=n {
        for j in i + 1..=n {
            let mid = e[j] + (v[j] - v[i]) - e[i];
            let lower = mid + (w_lo[j] - w_lo[i]);
            let upper = -(w_up[j] - w_up[i]) - mid;
            if lower < s.lower {
                s.lower = lower;
                s.lower_pair = (i, j);
            }
            if upper < s.upper {
                s.upper = upper;
                s.upper_pair = (i, j);
            }
        }
    }
    s
}

pub fn energy_inequality_audit(traj: &Trajectory, opts: &SolverOptions) -> AuditReport {
    let tol = energy_inequality_tolerance(traj, opts);
    let s = energy_inequality_slack(traj);
    AuditReport {
        checks: vec![
            Check::slack(
                "energy_inequality_lower",
                s.lower,
                tol,
                format!("worst slack at steps {:?}, work with the later state", s.lower_pair),
            ),
            Check::slack(
                "energy_inequality_upper",
                s.upper,
                tol,
                format!("worst slack at steps {:?}, work with the earlier state", s.upper_pair),
            ),
        ],
    }
}

/// Default stability tolerance `1e-8 · (1 + |I|)`.
pub fn stability_tolerance(energy: f64) -> f64 {
    1e-8 * (1.0 + energy.abs())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSettings {
    pub n_samples: usize,
    pub radius: f64,
    pub seed: u64,
}

/// Samples competitors `q̃` and reports `max I(t,q) − I(t,q̃) − 𝒟(z, z̃)`.
///
/// Random competitors cycle through perturbing all unknowns, only the
/// deformation and only the plastic state, with Gaussian entries of standard
/// deviation `radius`; Dirichlet nodes are left in place. Structured
/// competitors are the elastic relaxation of `q`, the plastic relaxation of
/// `q` anchored at `z`, and `previous` when given.
pub fn stability_probe(
    problem: &Problem,
    t: f64,
    q: &State,
    previous: Option<&State>,
    probe: &ProbeSettings,
    opts: &SolverOptions,
) -> Result<Check, DiagnosticsError> {
    let model = &problem.model;
    let energy = model.total_energy(t, q)?;
    if !energy.is_finite() {
        return Err(DiagnosticsError::Domain("stability probe needs a state of finite energy".into()));
    }
    if !(probe.radius > 0.0) {
        return Err(DiagnosticsError::Domain("probe radius must be > 0".into()));
    }
    let margin = |cand: &State| -> Result<f64, DiagnosticsError> {
        let e = model.total_energy(t, cand)?;
        if !e.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(energy - e - diss_distance(&q.z, &cand.z, &model.mesh, &problem.dissipation)?)
    };

    let mut worst = f64::NEG_INFINITY;
    let mut worst_label = String::from("none");
    let mut infeasible = 0;
    let mut record = |m: f64, label: String| {
        if m == f64::NEG_INFINITY {
            infeasible += 1;
        } else if m > worst {
            worst = m;
            worst_label = label;
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let normal = Normal::new(0.0, probe.radius).map_err(|e| DiagnosticsError::Domain(e.to_string()))?;
    for s in 0..probe.n_samples {
        let mut cand = q.clone();
        let kind = s % 3;
        if kind != 2 {
            for &i in &problem.dofs.free_nodes {
                cand.y[i][0] += normal.sample(&mut rng);
                cand.y[i][1] += normal.sample(&mut rng);
            }
        }
        if kind != 1 {
            for g in cand.z.gamma.iter_mut().chain(cand.z.p.iter_mut()) {
                *g += normal.sample(&mut rng);
            }
        }
        let label = ["mixed", "deformation", "plastic"][kind];
        record(margin(&cand)?, format!("random {label} sample {s}"));
    }

    let (elastic, _) = problem.elastic_substep(t, q, opts)?;
    record(margin(&elastic)?, "elastic relaxation".into());
    let (plastic, _) = problem.plastic_substep(t, q, &q.z, opts)?;
    record(margin(&plastic)?, "plastic relaxation".into());
    if let Some(prev) = previous {
        record(margin(prev)?, "previous state".into());
    }

    let tol = stability_tolerance(energy);
    let n = probe.n_samples + 2 + usize::from(previous.is_some());
    Ok(Check::discrepancy(
        &format!("stability_t={t}"),
        worst,
        tol,
        format!("max margin over {n} competitors ({infeasible} infeasible) attained by {worst_label}"),
    ))
}

/// Probes every stored state of `traj`, with `q^{k-1}` as structured competitor.
pub fn stability_audit(
    traj: &Trajectory,
    probe: &ProbeSettings,
    opts: &SolverOptions,
) -> Result<AuditReport, DiagnosticsError> {
    let problem = Problem::new(traj.model.clone());
    let mut report = AuditReport::default();
    for k in 0..traj.states.len() {
        let prev = if k > 0 { Some(&traj.states[k - 1]) } else { None };
        let settings = ProbeSettings { seed: probe.seed.wrapping_add(k as u64), ..*probe };
        let mut check = stability_probe(&problem, traj.times[k], &traj.states[k], prev, &settings, opts)?;
        check.name = format!("stability_k={k}");
        report.checks.push(check);
    }
    Ok(report)
}

/// Sup-in-time norms bounded uniformly in `τ` by the a-priori estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriNorms {
    /// Lumped `L^d` norm of `y` plus the `L^d` norm of `∇y`.
    pub deformation: f64,
    pub variation: f64,
    /// `W^{1,β}`-type norm of `F_p` (and `W^{1,ω}` of the hardening field).
    pub plastic: f64,
}

fn gradient_of(model: &Model, el: &[usize; 3], e: usize, f: impl Fn(usize) -> f64) -> [f64; 2] {
    let grads = &model.mesh.shape_gradients()[e];
    let mut g = [0.0; 2];
    for (a, &i) in el.iter().enumerate() {
        g[0] += f(i) * grads[a][0];
        g[1] += f(i) * grads[a][1];
    }
    g
}

fn state_norms(model: &Model, q: &State, lumped: &[f64]) -> (f64, f64) {
    let mat = &model.material;
    let mesh = &model.mesh;
    let d = mat.sobolev_exponent();
    let mut y_val = 0.0;
    let mut fp_val = 0.0;
    let mut p_val = 0.0;
    let m = model.hardening_dim();
    for (i, w) in lumped.iter().enumerate() {
        y_val += w * (q.y[i][0].powi(2) + q.y[i][1].powi(2)).sqrt().powf(d);
        fp_val += w * slip_matrix(q.z.gamma[i], &model.slip).norm().powf(mat.beta);
        for c in 0..m {
            p_val += w * q.z.p[i * m + c].abs().powf(mat.omega);
        }
    }
    let schmid = model.slip.schmid().norm();
    let mut dy = 0.0;
    let mut dfp = 0.0;
    let mut dp = 0.0;
    for (e, (el, area)) in mesh.elements().iter().zip(mesh.element_areas()).enumerate() {
        let gx = gradient_of(model, el, e, |i| q.y[i][0]);
        let gy = gradient_of(model, el, e, |i| q.y[i][1]);
        dy += area * (gx[0] * gx[0] + gx[1] * gx[1] + gy[0] * gy[0] + gy[1] * gy[1]).sqrt().powf(d);
        let gg = gradient_of(model, el, e, |i| q.z.gamma[i]);
        dfp += area * ((gg[0] * gg[0] + gg[1] * gg[1]).sqrt() * schmid).powf(mat.beta);
        for c in 0..m {
            let gp = gradient_of(model, el, e, |i| q.z.p[i * m + c]);
            dp += area * (gp[0] * gp[0] + gp[1] * gp[1]).sqrt().powf(mat.omega);
        }
    }
    let y_norm = y_val.powf(1.0 / d) + dy.powf(1.0 / d);
    let mut z_norm = fp_val.powf(1.0 / mat.beta) + dfp.powf(1.0 / mat.beta);
    if m > 0 {
        z_norm += p_val.powf(1.0 / mat.omega) + dp.powf(1.0 / mat.omega);
    }
    (y_norm, z_norm)
}

pub fn apriori_norms(traj: &Trajectory) -> AprioriNorms {
    let lumped = traj.model.mesh.nodal_areas();
    let mut out = AprioriNorms {
        deformation: 0.0,
        variation: traj.ledger.last().map_or(0.0, |l| l.var_cumulative),
        plastic: 0.0,
    };
    for q in &traj.states {
        let (y, z) = state_norms(&traj.model, q, lumped);
        out.deformation = out.deformation.max(y);
        out.plastic = out.plastic.max(z);
    }
    out
}

/// Finiteness of the a-priori norms and the ledger/recomputed `Var` cross-check.
pub fn apriori_audit(traj: &Trajectory) -> Result<AuditReport, DiagnosticsError> {
    let norms = apriori_norms(traj);
    let spec = crate::dissipation::DissipationSpec::from_material(&traj.model.material);
    let t_end = *traj.times.last().expect("trajectory has the initial time");
    let recomputed = variation(traj, 0.0, t_end, &spec)?;
    let finite = [norms.deformation, norms.variation, norms.plastic].iter().all(|v| v.is_finite());
    let mut report = AuditReport::default();
    report.checks.push(Check {
        name: "apriori_finite".into(),
        passed: finite,
        measured: norms.deformation.max(norms.plastic).max(norms.variation),
        tolerance: f64::INFINITY,
        details: format!(
            "sup deformation norm {:e}, Var {:e}, sup plastic norm {:e}",
            norms.deformation, norms.variation, norms.plastic
        ),
    });
    let diff = (recomputed - norms.variation).abs();
    report.checks.push(Check::discrepancy(
        "variation_cross_check",
        diff,
        1e-12 * (1.0 + norms.variation),
        format!("ledger Var {:e} vs recomputed {:e}", norms.variation, recomputed),
    ));
    Ok(report)
}

/// Compares the a-priori norms of two runs (typically `τ` and `τ/2`);
/// passes if every ratio lies within `factor`. Zero pairs count as ratio 1.
pub fn apriori_pair_audit(a: &AprioriNorms, b: &AprioriNorms, factor: f64) -> AuditReport {
    let ratio = |x: f64, y: f64| {
        if x == 0.0 && y == 0.0 {
            1.0
        } else {
            x.max(y) / x.min(y)
        }
    };
    let mut report = AuditReport::default();
    for (name, x, y) in [
        ("apriori_ratio_deformation", a.deformation, b.deformation),
        ("apriori_ratio_variation", a.variation, b.variation),
        ("apriori_ratio_plastic", a.plastic, b.plastic),
    ] {
        report.checks.push(Check::discrepancy(name, ratio(x, y), factor, format!("{x:e} vs {y:e}")));
    }
    report
}

/// Largest state-dof and `Var` discrepancies between two runs with the same
/// number of steps.
pub fn trajectory_discrepancy(a: &Trajectory, b: &Trajectory) -> Result<(f64, f64), DiagnosticsError> {
    if a.states.len() != b.states.len() {
        return Err(DiagnosticsError::Domain(format!(
            "trajectories have {} and {} states",
            a.states.len(),
            b.states.len()
        )));
    }
    let mut dof = 0.0f64;
    for (qa, qb) in a.states.iter().zip(&b.states) {
        for (ya, yb) in qa.y.iter().zip(&qb.y) {
            dof = dof.max((ya[0] - yb[0]).abs()).max((ya[1] - yb[1]).abs());
        }
        let za = qa.z.gamma.iter().chain(&qa.z.p);
        let zb = qb.z.gamma.iter().chain(&qb.z.p);
        for (x, y) in za.zip(zb) {
            dof = dof.max((x - y).abs());
        }
    }
    let var =
        a.ledger.iter().zip(&b.ledger).map(|(x, y)| (x.var_cumulative - y.var_cumulative).abs()).fold(0.0, f64::max);
    Ok((dof, var))
}

pub const RATE_INDEPENDENCE_TOL: f64 = 1e-10;

pub fn rate_independence_report(a: &Trajectory, b: &Trajectory) -> Result<AuditReport, DiagnosticsError> {
    let (dof, var) = trajectory_discrepancy(a, b)?;
    Ok(AuditReport {
        checks: vec![
            Check::discrepancy(
                "rate_independence_states",
                dof,
                RATE_INDEPENDENCE_TOL,
                "max state-dof difference between original and time-compressed run".into(),
            ),
            Check::discrepancy(
                "rate_independence_variation",
                var,
                RATE_INDEPENDENCE_TOL,
                "max Var difference between original and time-compressed run".into(),
            ),
        ],
    })
}

/// Reruns `model` with the ramp compressed to `[0, T/2]` and the same number
/// of steps, then compares with `original` (a run of `model` itself).
pub fn rate_independence_audit(original: &Trajectory, opts: &SolverOptions) -> Result<AuditReport, DiagnosticsError> {
    let model = &original.model;
    let compressed = model.with_loads(model.loads.time_compressed(2.0));
    let initial = original.states[0].clone();
    let rerun = run_evolution(&compressed, opts, original.steps(), Some(initial))?;
    rate_independence_report(original, &rerun)
}

/// Reverse Young inequality `a/b ≥ r δ^{r/(r−1)} a^{1/r} − (r−1) δ^{r²/(r−1)²} b^{1/(r−1)}`.
///
/// Both right-hand terms can overflow for `r` near 1, so the comparison is
/// made in logarithms. `measured` is the relative slack `(LHS − RHS)/(1 + |RHS|)`
/// (`+∞` when the right-hand side is not positive).
pub fn reverse_young_check(a: f64, b: f64, delta: f64, r: f64) -> Result<Check, DiagnosticsError> {
    if !(a > 0.0 && b > 0.0 && delta > 0.0) || !(a.is_finite() && b.is_finite() && delta.is_finite()) {
        return Err(DiagnosticsError::Domain(format!("a, b, delta must be positive, got {a}, {b}, {delta}")));
    }
    if !(r > 1.0) || !r.is_finite() {
        return Err(DiagnosticsError::Domain(format!("r must be > 1, got {r}")));
    }
    let lhs = a / b;
    let ln_x = r.ln() + r / (r - 1.0) * delta.ln() + a.ln() / r;
    let ln_y = (r - 1.0).ln() + (r / (r - 1.0)).powi(2) * delta.ln() + b.ln() / (r - 1.0);
    let tol = 1e-12;
    let (measured, passed, rhs_text) = if ln_x <= ln_y {
        (f64::INFINITY, true, "RHS <= 0".to_string())
    } else {
        // RHS = X (1 − Y/X) > 0
        let ln_rhs = ln_x + (-(ln_y - ln_x).exp_m1()).ln();
        let rhs = ln_rhs.exp();
        if rhs.is_finite() {
            let slack = (lhs - rhs) / (1.0 + rhs);
            (slack, lhs >= rhs - tol * (1.0 + rhs), format!("RHS = {rhs:e}"))
        } else {
            // RHS beyond f64 range; lhs is finite so compare logarithms
            let slack = lhs.ln() - ln_rhs;
            (slack, slack >= (1.0 - tol).ln(), format!("ln RHS = {ln_rhs:e}"))
        }
    };
    Ok(Check {
        name: "reverse_young".into(),
        passed,
        measured,
        tolerance: tol,
        details: format!("a={a}, b={b}, delta={delta}, r={r}: LHS = {lhs:e}, {rhs_text}"),
    })
}

/// Largest `|det F_p − 1|` over nodes and the smallest `det F_e` over elements
/// of all stored states.
pub fn constraint_audit(traj: &Trajectory) -> Result<AuditReport, DiagnosticsError> {
    let mut det_p = 0.0f64;
    let mut det_e = f64::INFINITY;
    for q in &traj.states {
        det_p = det_p.max(traj.model.max_plastic_det_error(q));
        det_e = det_e.min(traj.model.min_elastic_det(q)?);
    }
    Ok(AuditReport {
        checks: vec![
            Check::discrepancy("unimodularity", det_p, 1e-14, "max |det F_p - 1| over nodes and steps".into()),
            Check {
                name: "feasibility".into(),
                passed: det_e > 0.0,
                measured: det_e,
                tolerance: 0.0,
                details: "min det F_e over elements and steps, must be > 0".into(),
            },
        ],
    })
}

/// `I(t_k, q_k) + 𝒟(z_{k-1}, z_k) ≤ I(t_k, q_{k-1}) + 1e-10 (1 + |I|)` at every step.
pub fn warm_start_audit(traj: &Trajectory) -> Result<AuditReport, DiagnosticsError> {
    let problem = Problem::new(traj.model.clone());
    let mut worst = f64::INFINITY;
    let mut worst_k = 0;
    let mut passed = true;
    for k in 1..traj.states.len() {
        let t = traj.times[k];
        let prev = &traj.states[k - 1];
        let at_k = problem.incremental_objective(t, &traj.states[k], &prev.z)?;
        let at_prev = problem.incremental_objective(t, prev, &prev.z)?;
        let slack = at_prev - at_k;
        passed &= slack >= -1e-10 * (1.0 + at_prev.abs());
        if slack < worst {
            worst = slack;
            worst_k = k;
        }
    }
    Ok(AuditReport {
        checks: vec![Check {
            name: "warm_start_dominance".into(),
            passed,
            measured: worst,
            tolerance: 1e-10,
            details: format!("worst slack at step {worst_k}; tolerance scales with 1 + |I|"),
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{LoadProgram, Material};
    use crate::mesh::{build_rect_mesh, Side};
    use crate::tensor::SlipSystem;

    fn model(g: [f64; 2]) -> Model {
        let mesh = build_rect_mesh(3, 3, 1.0, 1.0, &[Side::Left], &[Side::Right]).unwrap();
        let loads = LoadProgram { g_max: g, ..LoadProgram::zero(1.0) };
        Model::new(mesh, Material::default(), SlipSystem::new([0.0, 1.0], [1.0, 0.0]).unwrap(), loads)
    }

    #[test]
    fn reverse_young_equality_case() {
        let c = reverse_young_check(1.0, 1.0, 1.0, 2.0).unwrap();
        assert!(c.passed);
        assert!(c.measured.abs() < 1e-15);
    }

    #[test]
    fn reverse_young_domain_errors() {
        assert!(reverse_young_check(0.0, 1.0, 1.0, 2.0).is_err());
        assert!(reverse_young_check(1.0, -1.0, 1.0, 2.0).is_err());
        assert!(reverse_young_check(1.0, 1.0, 0.0, 2.0).is_err());
        assert!(reverse_young_check(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(reverse_young_check(1.0, 1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn reverse_young_small_delta() {
        // RHS shrinks to 0 and the slack approaches LHS
        let c = reverse_young_check(2.0, 3.0, 1e-9, 3.0).unwrap();
        assert!(c.passed);
        assert!((c.measured - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn reverse_young_near_one_does_not_overflow() {
        let c = reverse_young_check(5.0, 0.01, 1.9, 1.0001).unwrap();
        assert!(c.passed, "{c:?}");
    }

    #[test]
    fn report_serializations() {
        let mut r = AuditReport::default();
        r.checks.push(Check::slack("a", 1.0, 0.1, "x \"quoted\"".into()));
        r.checks.push(Check::discrepancy("b", 1.0, 0.1, "y".into()));
        assert!(!r.passed());
        let text = r.to_text();
        assert!(text.contains("[PASS] a") && text.contains("[FAIL] b"));
        assert!(text.contains("2 checks, 1 failed"));
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("\"x \"\"quoted\"\"\""));
    }

    #[test]
    fn zero_load_inequality_is_tight() {
        let m = model([0.0, 0.0]);
        let opts = SolverOptions::default();
        let traj = run_evolution(&m, &opts, 4, None).unwrap();
        let s = energy_inequality_slack(&traj);
        assert_eq!(s.lower, 0.0);
        assert_eq!(s.upper, 0.0);
        assert!(energy_inequality_audit(&traj, &opts).passed());
    }

    #[test]
    fn single_step_reduces_to_warm_start_and_minimality() {
        let m = model([0.0, 0.05]);
        let opts = SolverOptions::default();
        let traj = run_evolution(&m, &opts, 1, None).unwrap();
        let s = energy_inequality_slack(&traj);
        let problem = Problem::new(m.clone());
        let (q0, q1) = (&traj.states[0], &traj.states[1]);
        // upper side: I(t1, q0) − I(t1, q1) − 𝒟(z0, z1)
        let upper = problem.incremental_objective(1.0, q0, &q0.z).unwrap()
            - problem.incremental_objective(1.0, q1, &q0.z).unwrap();
        // lower side: I(t0, q1) + 𝒟(z0, z1) − I(t0, q0)
        let lower = problem.incremental_objective(0.0, q1, &q0.z).unwrap() - m.total_energy(0.0, q0).unwrap();
        assert!((s.upper - upper).abs() < 1e-13, "{} vs {upper}", s.upper);
        assert!((s.lower - lower).abs() < 1e-13, "{} vs {lower}", s.lower);
        assert!(upper >= 0.0 && lower >= 0.0);
    }

    #[test]
    fn probe_at_reference_without_load_finds_no_violation() {
        let m = model([0.0, 0.0]);
        let opts = SolverOptions::default();
        let problem = Problem::new(m.clone());
        let q = crate::solver::initial_state(&problem, &opts).unwrap();
        let probe = ProbeSettings { n_samples: 30, radius: 1e-3, seed: 7 };
        let c = stability_probe(&problem, 0.0, &q, Some(&q), &probe, &opts).unwrap();
        assert!(c.passed, "{c:?}");
        // q itself as competitor gives margin exactly 0
        assert!(c.measured >= 0.0);
    }

    #[test]
    fn probe_is_deterministic() {
        let m = model([0.0, 0.03]);
        let opts = SolverOptions::default();
        let problem = Problem::new(m.clone());
        let q = m.reference_state();
        let probe = ProbeSettings { n_samples: 12, radius: 1e-2, seed: 3 };
        let a = stability_probe(&problem, 0.5, &q, None, &probe, &opts).unwrap();
        let b = stability_probe(&problem, 0.5, &q, None, &probe, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_trajectory_norms_equal_initial_values() {
        let m = model([0.0, 0.0]);
        let traj = run_evolution(&m, &SolverOptions::default(), 3, None).unwrap();
        let (y0, z0) = state_norms(&m, &traj.states[0], m.mesh.nodal_areas());
        let n = apriori_norms(&traj);
        assert_eq!(n.deformation, y0);
        assert_eq!(n.plastic, z0);
        assert_eq!(n.variation, 0.0);
        assert!(apriori_audit(&traj).unwrap().passed());
    }

    #[test]
    fn pair_audit_ratio() {
        let a = AprioriNorms { deformation: 1.0, variation: 0.0, plastic: 2.0 };
        let b = AprioriNorms { deformation: 1.5, variation: 0.0, plastic: 5.0 };
        let r = apriori_pair_audit(&a, &b, 2.0);
        assert!(r.checks[0].passed && r.checks[1].passed && !r.checks[2].passed);
    }

    #[test]
    fn discrepancy_requires_equal_lengths() {
        let m = model([0.0, 0.0]);
        let opts = SolverOptions::default();
        let a = run_evolution(&m, &opts, 2, None).unwrap();
        let b = run_evolution(&m, &opts, 3, None).unwrap();
        assert!(trajectory_discrepancy(&a, &b).is_err());
        assert_eq!(trajectory_discrepancy(&a, &a).unwrap(), (0.0, 0.0));
    }
}
