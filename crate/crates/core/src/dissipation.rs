//! Dissipation distance for single slip and the variation of a trajectory.
//!
//! For `δ(γ̇) = κ|γ̇|` the path infimum defining the distance collapses to
//! `𝒟(γ₁, γ₂) = ∫ κ|γ₁ − γ₂| dx`, integrated with lumped vertex quadrature
//! (each node carries a third of its adjacent element areas).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{Material, PlasticState};
use crate::mesh::Mesh;
use crate::solver::Trajectory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DissipationError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("time window [{t0}, {t1}] is outside the trajectory span [{start}, {end}]")]
    OutOfRange { t0: f64, t1: f64, start: f64, end: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationSpec {
    pub kappa: f64,
    pub kappa_p: f64,
    /// Hardening components per node.
    pub hardening_dim: usize,
}

impl DissipationSpec {
    pub fn from_material(mat: &Material) -> Self {
        DissipationSpec { kappa: mat.kappa, kappa_p: mat.kappa_p, hardening_dim: mat.hardening_dim() }
    }
}

fn check(z: &PlasticState, mesh: &Mesh, spec: &DissipationSpec) -> Result<(), DissipationError> {
    let n = mesh.num_nodes();
    if z.gamma.len() != n || z.p.len() != n * spec.hardening_dim {
        return Err(DissipationError::DimensionMismatch(format!(
            "plastic state has {} slip and {} hardening entries for {n} nodes",
            z.gamma.len(),
            z.p.len()
        )));
    }
    Ok(())
}

/// Nodal values of `γ₂ − γ₁` and `p₂ − p₁`, paired with the lumped areas.
fn nodal_jumps<'a>(
    z1: &'a PlasticState,
    z2: &'a PlasticState,
    mesh: &'a Mesh,
    m: usize,
) -> impl Iterator<Item = (f64, f64, &'a [f64], &'a [f64])> + 'a {
    mesh.nodal_areas().iter().enumerate().map(move |(i, &w)| {
        let dg = z2.gamma[i] - z1.gamma[i];
        (w, dg, &z1.p[i * m..(i + 1) * m], &z2.p[i * m..(i + 1) * m])
    })
}

fn diff_norm(p1: &[f64], p2: &[f64]) -> f64 {
    p1.iter().zip(p2).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
}

/// `𝒟(z₁, z₂) = ∫ κ|γ₁ − γ₂| dx (+ κ_p ∫ |p₁ − p₂| dx)` with lumped vertex
/// quadrature, so it vanishes only when the nodal values agree.
pub fn diss_distance(
    z1: &PlasticState,
    z2: &PlasticState,
    mesh: &Mesh,
    spec: &DissipationSpec,
) -> Result<f64, DissipationError> {
    check(z1, mesh, spec)?;
    check(z2, mesh, spec)?;
    let m = spec.hardening_dim;
    Ok(nodal_jumps(z1, z2, mesh, m)
        .map(|(w, dg, p1, p2)| {
            let hard = if m > 0 { spec.kappa_p * diff_norm(p1, p2) } else { 0.0 };
            w * (spec.kappa * dg.abs() + hard)
        })
        .sum())
}

/// Smoothed absolute value `ρ_η(x) = √(x² + η²) − η`.
pub fn smooth_abs(x: f64, eta: f64) -> f64 {
    (x * x + eta * eta).sqrt() - eta
}

/// The dissipation distance with `|·|` replaced by `ρ_η`; used inside the
/// minimizer only. Satisfies `𝒟 − η κ|Ω| ≤ 𝒟_η ≤ 𝒟`.
#[derive(Clone, Debug)]
pub struct SmoothedDissipation<'a> {
    pub mesh: &'a Mesh,
    pub spec: DissipationSpec,
    pub eta: f64,
    pub anchor: &'a PlasticState,
}

impl SmoothedDissipation<'_> {
    pub fn value(&self, z: &PlasticState) -> f64 {
        let m = self.spec.hardening_dim;
        nodal_jumps(self.anchor, z, self.mesh, m)
            .map(|(w, dg, p1, p2)| {
                let mut v = self.spec.kappa * smooth_abs(dg, self.eta);
                if m > 0 {
                    v += self.spec.kappa_p * smooth_abs(diff_norm(p1, p2), self.eta);
                }
                w * v
            })
            .sum()
    }

    /// Adds the gradient with respect to `γ` (length `n`) and `p` (length `n m`).
    pub fn add_gradient(&self, z: &PlasticState, g_gamma: &mut [f64], g_p: &mut [f64]) {
        let m = self.spec.hardening_dim;
        let eta2 = self.eta * self.eta;
        for (i, (w, dg, p1, p2)) in nodal_jumps(self.anchor, z, self.mesh, m).enumerate() {
            g_gamma[i] += w * self.spec.kappa * dg / (dg * dg + eta2).sqrt();
            if m > 0 {
                let r = (diff_norm(p1, p2).powi(2) + eta2).sqrt();
                for c in 0..m {
                    g_p[i * m + c] += w * self.spec.kappa_p * (p2[c] - p1[c]) / r;
                }
            }
        }
    }

    /// Adds the Hessian into `hess`, where `gamma_index(i)` and
    /// `p_index(i, c)` map node unknowns to matrix rows. Block diagonal per node.
    pub fn add_hessian<FG, FP>(&self, z: &PlasticState, hess: &mut nalgebra::DMatrix<f64>, gamma_index: FG, p_index: FP)
    where
        FG: Fn(usize) -> usize,
        FP: Fn(usize, usize) -> usize,
    {
        let m = self.spec.hardening_dim;
        let eta2 = self.eta * self.eta;
        for (i, (w, dg, p1, p2)) in nodal_jumps(self.anchor, z, self.mesh, m).enumerate() {
            let gi = gamma_index(i);
            hess[(gi, gi)] += w * self.spec.kappa * eta2 / (dg * dg + eta2).powf(1.5);
            if m > 0 {
                let r2 = diff_norm(p1, p2).powi(2) + eta2;
                let r = r2.sqrt();
                for a in 0..m {
                    for b in 0..m {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        let (da, db) = (p2[a] - p1[a], p2[b] - p1[b]);
                        hess[(p_index(i, a), p_index(i, b))] +=
                            w * self.spec.kappa_p * (delta / r - da * db / (r2 * r));
                    }
                }
            }
        }
    }
}

/// `Var(𝒟, z; [t0, t1])` of the piecewise-constant interpolant: the sum of
/// distances over the jumps at step times in `(t0, t1]`.
pub fn variation(traj: &Trajectory, t0: f64, t1: f64, spec: &DissipationSpec) -> Result<f64, DissipationError> {
    let (start, end) = (traj.times[0], *traj.times.last().unwrap_or(&traj.times[0]));
    if !(t0 <= t1) || t0 < start || t1 > end {
        return Err(DissipationError::OutOfRange { t0, t1, start, end });
    }
    let mesh = &traj.model.mesh;
    let mut total = 0.0;
    for k in 1..traj.times.len() {
        if traj.times[k] > t0 && traj.times[k] <= t1 {
            total += diss_distance(&traj.states[k - 1].z, &traj.states[k].z, mesh, spec)?;
        }
    }
    Ok(total)
}
