//! Stored energy, loading functional and the total energy `I(t, q)`.
//!
//! Discretization summary:
//! * `F = ∇y` is constant per element (P1 deformation).
//! * `F_p = I + γ̄ a⊗b` uses the element mean of the nodal slip.
//! * `H` is the element gradient of the nodal recovery of `A = cof(F) F_p^T`,
//!   which equals `cof(F_e)` since `det F_p = 1`.
//! * Volume integrals use one-point quadrature, except the pointwise part of
//!   `W₂` which uses vertex quadrature. The element mean of γ has a
//!   two-dimensional kernel on the structured triangulation (γ cycling through
//!   three values with `(i + j) mod 3`), and only nodal evaluation penalizes it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Mesh, MeshError};
use crate::tensor::{slip_matrix, Mat2, SlipSystem, Tensor3, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("energy is infinite at the requested point")]
    InfeasiblePoint,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Constitutive parameters.
///
/// The defaults are calibration choices for a nondimensionalized unit
/// square, not measured material data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Material {
    /// Lamé moduli of the Saint Venant–Kirchhoff law.
    pub lam: f64,
    pub mu: f64,
    /// Weight of `|H|^2`, the squared gradient of the elastic cofactor.
    pub c_h: f64,
    /// Weight and exponent of the barrier `det(F_e)^{-s}`.
    pub c_det: f64,
    pub s: f64,
    /// Plastic regularization weight.
    pub eps_p: f64,
    /// Growth exponent of the elastic energy (only used for hypothesis checks).
    pub alpha: f64,
    pub beta: f64,
    pub omega: f64,
    pub hardening_enabled: bool,
    /// Slip resistance.
    pub kappa: f64,
    /// Dissipation weight of the hardening variable.
    pub kappa_p: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            lam: 1.0,
            mu: 1.0,
            c_h: 0.01,
            c_det: 0.1,
            s: 2.0,
            eps_p: 1e-3,
            alpha: 4.0,
            beta: 6.0,
            omega: 6.0,
            hardening_enabled: false,
            kappa: 0.05,
            kappa_p: 0.05,
        }
    }
}

impl Material {
    /// Number of hardening components per node.
    pub fn hardening_dim(&self) -> usize {
        usize::from(self.hardening_enabled)
    }

    /// Hard invariants; the first violation is reported.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [("c_det", self.c_det), ("s", self.s), ("eps_p", self.eps_p), ("kappa", self.kappa)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be > 0"));
            }
        }
        let nonneg = [("lam", self.lam), ("mu", self.mu), ("c_h", self.c_h), ("kappa_p", self.kappa_p)];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("{name} must be >= 0"));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("omega", self.omega)] {
            if !(v >= 1.0) || !v.is_finite() {
                return Err(format!("{name} must be a finite exponent >= 1"));
            }
        }
        Ok(())
    }

    /// Integrability exponent `d = αβ/(α+β)` of the deformation.
    pub fn sobolev_exponent(&self) -> f64 {
        self.alpha * self.beta / (self.alpha + self.beta)
    }

    /// Exponent conditions under which the continuous problem is known to be
    /// well posed, for spatial dimension `n`. Violations are warnings only.
    pub fn hypothesis_warnings(&self, n: usize) -> Vec<String> {
        let n = n as f64;
        let d = self.sobolev_exponent();
        let mut w = Vec::new();
        if !(self.beta > n) {
            w.push(format!("beta > n required by the plastic growth condition (beta = {}, n = {n})", self.beta));
        }
        if !(self.omega > n) {
            w.push(format!("omega > n required by the hardening growth condition (omega = {}, n = {n})", self.omega));
        }
        if !(self.alpha > n - 1.0) {
            w.push(format!("alpha > n - 1 required for coercivity (alpha = {})", self.alpha));
        }
        if !(1.0 / d < 1.0 / (n - 1.0)) {
            w.push(format!("1/alpha + 1/beta < 1/(n-1) violated (d = {d})"));
        }
        if !(d > self.beta * (n - 1.0) / (self.beta - 1.0)) {
            w.push(format!("d > beta (n-1)/(beta-1) violated (d = {d})"));
        }
        w
    }
}

/// Elastic stored energy as a function of `F_e`.
pub trait ElasticLaw: Send + Sync + std::fmt::Debug {
    fn density(&self, fe: &Mat2) -> f64;
    /// `∂W/∂F_e`.
    fn first_piola(&self, fe: &Mat2) -> Mat2;
}

/// Isotropic Saint Venant–Kirchhoff material.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaintVenantKirchhoff {
    pub lam: f64,
    pub mu: f64,
}

impl SaintVenantKirchhoff {
    fn green_strain(fe: &Mat2) -> Mat2 {
        (fe.transpose() * *fe - Mat2::identity()).scale(0.5)
    }
}

impl ElasticLaw for SaintVenantKirchhoff {
    fn density(&self, fe: &Mat2) -> f64 {
        let e = Self::green_strain(fe);
        0.5 * self.lam * e.trace().powi(2) + self.mu * e.norm_sq()
    }

    fn first_piola(&self, fe: &Mat2) -> Mat2 {
        let e = Self::green_strain(fe);
        let s = Mat2::identity().scale(self.lam * e.trace()) + e.scale(2.0 * self.mu);
        *fe * s
    }
}

/// `½ λ (tr E)² + μ |E|²` with `E = ½(F_eᵀF_e − I)`.
pub fn w1_svk(fe: &Mat2, mat: &Material) -> f64 {
    SaintVenantKirchhoff { lam: mat.lam, mu: mat.mu }.density(fe)
}

/// Full elastic density: SVK + determinant barrier + cofactor-gradient term.
/// Returns `+∞` when `det F_e <= 0`.
pub fn w1_total(fe: &Mat2, h: &Tensor3<2>, mat: &Material) -> f64 {
    let det = fe.det();
    if !(det > 0.0) {
        return f64::INFINITY;
    }
    w1_svk(fe, mat) + mat.c_det * det.powf(-mat.s) + mat.c_h * h.norm_sq()
}

/// Plastic density: `ε|F_p|^β + ε|∇F_p|^β (+ ε(|p|^ω + |∇p|^ω))`, where
/// `∇F_p = ∇γ ⊗ (a⊗b)` so `|∇F_p| = |∇γ| |a⊗b|`.
pub fn w2(gamma: f64, gslip: [f64; 2], p: &[f64], pi: &[[f64; 2]], mat: &Material, slip: &SlipSystem<2>) -> f64 {
    w2_pointwise(gamma, p, mat, slip) + w2_gradient(gslip, pi, mat, slip)
}

/// Part of [`w2`] depending on nodal values only.
pub fn w2_pointwise(gamma: f64, p: &[f64], mat: &Material, slip: &SlipSystem<2>) -> f64 {
    let mut w = mat.eps_p * slip_matrix(gamma, slip).norm().powf(mat.beta);
    if mat.hardening_enabled {
        w += mat.eps_p * p.iter().map(|v| v * v).sum::<f64>().sqrt().powf(mat.omega);
    }
    w
}

/// Part of [`w2`] depending on gradients only.
pub fn w2_gradient(gslip: [f64; 2], pi: &[[f64; 2]], mat: &Material, slip: &SlipSystem<2>) -> f64 {
    let grad_fp = (gslip[0].powi(2) + gslip[1].powi(2)).sqrt() * slip.schmid().norm();
    let mut w = mat.eps_p * grad_fp.powf(mat.beta);
    if mat.hardening_enabled {
        w += mat.eps_p * pi.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().powf(mat.omega);
    }
    w
}

/// Shape of the time ramp multiplying the maximal loads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampKind {
    /// `t / T`
    Linear,
    /// `sin(π t / 2T)`
    Sinusoidal,
}

/// External loads `f(t) = ramp(t) f_max`, `g(t) = ramp(t) g_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProgram {
    pub f_max: [f64; 2],
    pub g_max: [f64; 2],
    pub t_final: f64,
    pub ramp: RampKind,
}

impl LoadProgram {
    pub fn zero(t_final: f64) -> Self {
        LoadProgram { f_max: [0.0; 2], g_max: [0.0; 2], t_final, ramp: RampKind::Linear }
    }

    pub fn ramp(&self, t: f64) -> f64 {
        let s = t / self.t_final;
        match self.ramp {
            RampKind::Linear => s,
            RampKind::Sinusoidal => (0.5 * std::f64::consts::PI * s).sin(),
        }
    }

    pub fn ramp_rate(&self, t: f64) -> f64 {
        let s = t / self.t_final;
        match self.ramp {
            RampKind::Linear => 1.0 / self.t_final,
            RampKind::Sinusoidal => 0.5 * std::f64::consts::PI / self.t_final * (0.5 * std::f64::consts::PI * s).cos(),
        }
    }

    /// The same load values reached `factor` times faster.
    pub fn time_compressed(&self, factor: f64) -> Self {
        LoadProgram { t_final: self.t_final / factor, ..self.clone() }
    }

    pub fn is_zero(&self) -> bool {
        self.f_max == [0.0; 2] && self.g_max == [0.0; 2]
    }
}

/// Plastic state `z = (γ, p)` with `p` stored node-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlasticState {
    pub gamma: Vec<f64>,
    pub p: Vec<f64>,
}

/// Full state `q = (y, z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub y: Vec<[f64; 2]>,
    pub z: PlasticState,
}

/// Energy split into its separately integrated pieces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBreakdown {
    /// `∫ W₁` including barrier and cofactor-gradient terms.
    pub elastic: f64,
    /// `∫ W₂`.
    pub plastic: f64,
    /// `L(t, y)`.
    pub loading: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.elastic + self.plastic - self.loading
    }
}

/// Gradient of `I(t, ·)` with respect to every nodal unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct StateGradient {
    pub y: Vec<[f64; 2]>,
    pub gamma: Vec<f64>,
    pub p: Vec<f64>,
}

/// Element-level kinematics shared by energy and gradient assembly.
#[derive(Clone, Copy, Debug)]
pub struct ElementKinematics {
    pub f: Mat2,
    pub gamma_mean: f64,
    pub fp: Mat2,
    pub fp_inv: Mat2,
    pub fe: Mat2,
    /// `cof(F) F_pᵀ`
    pub cof_elastic: Mat2,
    pub grad_gamma: [f64; 2],
}

/// Mesh, constitutive law, slip system, loads and Dirichlet data.
#[derive(Clone, Debug)]
pub struct Model {
    pub mesh: Mesh,
    pub material: Material,
    pub slip: SlipSystem<2>,
    pub loads: LoadProgram,
    /// Prescribed deformation on the Dirichlet nodes (reference positions).
    pub y0: Vec<[f64; 2]>,
    elastic: Arc<dyn ElasticLaw>,
}

impl Model {
    pub fn new(mesh: Mesh, material: Material, slip: SlipSystem<2>, loads: LoadProgram) -> Self {
        let y0 = mesh.nodes().to_vec();
        let elastic = Arc::new(SaintVenantKirchhoff { lam: material.lam, mu: material.mu });
        Model { mesh, material, slip, loads, y0, elastic }
    }

    /// Replaces the elastic law (the Saint Venant–Kirchhoff default).
    pub fn with_elastic_law(mut self, law: Arc<dyn ElasticLaw>) -> Self {
        self.elastic = law;
        self
    }

    pub fn with_loads(&self, loads: LoadProgram) -> Self {
        Model { loads, ..self.clone() }
    }

    pub fn elastic_law(&self) -> &dyn ElasticLaw {
        self.elastic.as_ref()
    }

    pub fn hardening_dim(&self) -> usize {
        self.material.hardening_dim()
    }

    /// Identity deformation, zero slip, zero hardening.
    pub fn reference_state(&self) -> State {
        let n = self.mesh.num_nodes();
        State { y: self.y0.clone(), z: PlasticState { gamma: vec![0.0; n], p: vec![0.0; n * self.hardening_dim()] } }
    }

    pub fn check_state(&self, q: &State) -> Result<(), EnergyError> {
        let n = self.mesh.num_nodes();
        let m = self.hardening_dim();
        if q.y.len() != n || q.z.gamma.len() != n || q.z.p.len() != n * m {
            return Err(EnergyError::DimensionMismatch(format!(
                "state has {} / {} / {} entries, mesh expects {n} nodes with {m} hardening components",
                q.y.len(),
                q.z.gamma.len(),
                q.z.p.len()
            )));
        }
        Ok(())
    }

    pub fn kinematics(&self, q: &State) -> Result<Vec<ElementKinematics>, EnergyError> {
        let schmid = self.slip.schmid();
        self.mesh
            .elements()
            .iter()
            .zip(self.mesh.shape_gradients())
            .map(|(el, grads)| {
                let mut f = Mat2::zeros();
                let mut gg = [0.0; 2];
                let mut gamma_mean = 0.0;
                for (a, &node) in el.iter().enumerate() {
                    for r in 0..2 {
                        for j in 0..2 {
                            f.0[r][j] += q.y[node][r] * grads[a][j];
                        }
                    }
                    gg[0] += q.z.gamma[node] * grads[a][0];
                    gg[1] += q.z.gamma[node] * grads[a][1];
                    gamma_mean += q.z.gamma[node];
                }
                gamma_mean /= 3.0;
                let fp = Mat2::identity() + schmid.scale(gamma_mean);
                let fp_inv = fp.inv_cramer()?;
                let fe = f * fp_inv;
                let cof_elastic = f.cof() * fp.transpose();
                Ok(ElementKinematics { f, gamma_mean, fp, fp_inv, fe, cof_elastic, grad_gamma: gg })
            })
            .collect()
    }

    /// `H` per element: gradient of the recovered nodal `cof(F) F_pᵀ` field.
    fn cofactor_gradients(&self, kin: &[ElementKinematics]) -> Vec<Tensor3<2>> {
        let nodal: Vec<Mat2> = self
            .mesh
            .patches()
            .iter()
            .map(|patch| {
                let mut a = Mat2::zeros();
                for &(k, w) in patch {
                    a += kin[k].cof_elastic.scale(w);
                }
                a
            })
            .collect();
        self.mesh
            .elements()
            .iter()
            .zip(self.mesh.shape_gradients())
            .map(|(el, grads)| {
                let mut h = Tensor3::zeros();
                for (a, &node) in el.iter().enumerate() {
                    for k in 0..2 {
                        for l in 0..2 {
                            for j in 0..2 {
                                h.0[k][l][j] += nodal[node].0[k][l] * grads[a][j];
                            }
                        }
                    }
                }
                h
            })
            .collect()
    }

    /// Gradient `∇p` of the hardening field on element `k`.
    fn hardening_gradient(&self, q: &State, k: usize) -> Vec<[f64; 2]> {
        let m = self.hardening_dim();
        let el = self.mesh.elements()[k];
        let grads = self.mesh.shape_gradients()[k];
        let mut pi = vec![[0.0; 2]; m];
        for (a, &node) in el.iter().enumerate() {
            for c in 0..m {
                let v = q.z.p[node * m + c];
                pi[c][0] += v * grads[a][0];
                pi[c][1] += v * grads[a][1];
            }
        }
        pi
    }

    fn nodal_hardening<'q>(&self, q: &'q State, node: usize) -> &'q [f64] {
        let m = self.hardening_dim();
        &q.z.p[node * m..(node + 1) * m]
    }

    /// Linear functional `ℓ(y) = ∫ f_max·y dx + ∫_{Γ₁} g_max·y dS`, so that
    /// `L(t, y) = ramp(t) ℓ(y)`.
    pub fn load_functional(&self, y: &[[f64; 2]]) -> f64 {
        let mesh = &self.mesh;
        let f = self.loads.f_max;
        let g = self.loads.g_max;
        let mut total = 0.0;
        if f != [0.0; 2] {
            for (el, area) in mesh.elements().iter().zip(mesh.element_areas()) {
                let mut ym = [0.0; 2];
                for &n in el {
                    ym[0] += y[n][0] / 3.0;
                    ym[1] += y[n][1] / 3.0;
                }
                total += area * (f[0] * ym[0] + f[1] * ym[1]);
            }
        }
        if g != [0.0; 2] {
            for facet in mesh.gamma1_facets() {
                let len = mesh.edge_length(facet);
                for &n in facet {
                    total += 0.5 * len * (g[0] * y[n][0] + g[1] * y[n][1]);
                }
            }
        }
        total
    }

    /// `L(t, y)`.
    pub fn loading(&self, t: f64, y: &[[f64; 2]]) -> f64 {
        let r = self.loads.ramp(t);
        if r == 0.0 {
            return 0.0;
        }
        r * self.load_functional(y)
    }

    pub fn energy_breakdown(&self, t: f64, q: &State) -> Result<EnergyBreakdown, EnergyError> {
        self.check_state(q)?;
        let kin = self.kinematics(q)?;
        let hs = self.cofactor_gradients(&kin);
        let mat = &self.material;
        let law = self.elastic_law();
        let mut elastic = 0.0;
        let mut plastic = 0.0;
        for (k, (ek, h)) in kin.iter().zip(&hs).enumerate() {
            let area = self.mesh.element_areas()[k];
            let det = ek.fe.det();
            if !(det > 0.0) {
                elastic = f64::INFINITY;
                continue;
            }
            elastic += area * (law.density(&ek.fe) + mat.c_det * det.powf(-mat.s) + mat.c_h * h.norm_sq());
            let pi = self.hardening_gradient(q, k);
            let nodal: f64 = self.mesh.elements()[k]
                .iter()
                .map(|&i| w2_pointwise(q.z.gamma[i], self.nodal_hardening(q, i), mat, &self.slip))
                .sum();
            plastic += area * (nodal / 3.0 + w2_gradient(ek.grad_gamma, &pi, mat, &self.slip));
        }
        Ok(EnergyBreakdown { elastic, plastic, loading: self.loading(t, &q.y) })
    }

    /// `I(t, q)`; `+∞` if any element is inverted.
    pub fn total_energy(&self, t: f64, q: &State) -> Result<f64, EnergyError> {
        let b = self.energy_breakdown(t, q)?;
        if !b.elastic.is_finite() {
            return Ok(f64::INFINITY);
        }
        Ok(b.total())
    }

    /// Analytic gradient of `I(t, ·)` with respect to all nodal unknowns
    /// (Dirichlet nodes included; callers mask them).
    pub fn gradient(&self, t: f64, q: &State) -> Result<StateGradient, EnergyError> {
        self.check_state(q)?;
        let mesh = &self.mesh;
        let mat = &self.material;
        let law = self.elastic_law();
        let m = self.hardening_dim();
        let kin = self.kinematics(q)?;
        let hs = self.cofactor_gradients(&kin);
        let schmid = self.slip.schmid();
        let schmid_norm = schmid.norm();

        let n = mesh.num_nodes();
        let mut gy = vec![[0.0; 2]; n];
        let mut gg = vec![0.0; n];
        let mut gp = vec![0.0; n * m];
        // dE/dÂ at nodes, dE/dF and dE/dγ̄ per element
        let mut d_nodal_a = vec![Mat2::zeros(); n];
        let mut d_f = vec![Mat2::zeros(); kin.len()];
        let mut d_gamma_mean = vec![0.0; kin.len()];

        for (k, (ek, h)) in kin.iter().zip(&hs).enumerate() {
            let area = mesh.element_areas()[k];
            let el = mesh.elements()[k];
            let grads = mesh.shape_gradients()[k];
            let det = ek.fe.det();
            if !(det > 0.0) {
                return Err(EnergyError::InfeasiblePoint);
            }
            // elastic part through F_e = F F_p^{-1}
            let piola = law.first_piola(&ek.fe) + ek.fe.cof().scale(-mat.s * mat.c_det * det.powf(-mat.s - 1.0));
            let piola = piola.scale(area);
            d_f[k] += piola * ek.fp_inv.transpose();
            let d_fp_inv = ek.f.transpose() * piola;
            // d(F_p^{-1})/dγ̄ = -F_p^{-1} S F_p^{-1}
            d_gamma_mean[k] -= d_fp_inv.ddot(&(ek.fp_inv * schmid * ek.fp_inv));

            // c_H |H|^2 back to the recovered nodal field
            for (a, &node) in el.iter().enumerate() {
                for kk in 0..2 {
                    for l in 0..2 {
                        let mut s = 0.0;
                        for j in 0..2 {
                            s += h.0[kk][l][j] * grads[a][j];
                        }
                        d_nodal_a[node].0[kk][l] += 2.0 * mat.c_h * area * s;
                    }
                }
            }

            // plastic density: vertex quadrature for the pointwise part
            for &node in &el {
                let fp = slip_matrix(q.z.gamma[node], &self.slip);
                gg[node] +=
                    area / 3.0 * mat.eps_p * mat.beta * fp.norm_sq().powf(0.5 * mat.beta - 1.0) * fp.ddot(&schmid);
                let p = self.nodal_hardening(q, node);
                let p_sq: f64 = p.iter().map(|v| v * v).sum();
                if p_sq > 0.0 {
                    let c = area / 3.0 * mat.eps_p * mat.omega * p_sq.powf(0.5 * mat.omega - 1.0);
                    for comp in 0..m {
                        gp[node * m + comp] += c * p[comp];
                    }
                }
            }
            let g_sq = ek.grad_gamma[0].powi(2) + ek.grad_gamma[1].powi(2);
            if g_sq > 0.0 {
                let c = area * mat.eps_p * mat.beta * schmid_norm.powf(mat.beta) * g_sq.powf(0.5 * mat.beta - 1.0);
                for (a, &node) in el.iter().enumerate() {
                    gg[node] += c * (ek.grad_gamma[0] * grads[a][0] + ek.grad_gamma[1] * grads[a][1]);
                }
            }
            if m > 0 {
                let pi = self.hardening_gradient(q, k);
                let pi_sq: f64 = pi.iter().flatten().map(|v| v * v).sum();
                if pi_sq > 0.0 {
                    let c = area * mat.eps_p * mat.omega * pi_sq.powf(0.5 * mat.omega - 1.0);
                    for (a, &node) in el.iter().enumerate() {
                        for comp in 0..m {
                            gp[node * m + comp] += c * (pi[comp][0] * grads[a][0] + pi[comp][1] * grads[a][1]);
                        }
                    }
                }
            }
        }

        // recovery is linear: dE/dA_e = Σ_i w_ie dE/dÂ_i
        let mut d_elem_a = vec![Mat2::zeros(); kin.len()];
        for (node, patch) in mesh.patches().iter().enumerate() {
            for &(k, w) in patch {
                d_elem_a[k] += d_nodal_a[node].scale(w);
            }
        }

        for (k, ek) in kin.iter().enumerate() {
            // A = cof(F) F_pᵀ
            let da = d_elem_a[k];
            let d_cof = da * ek.fp;
            let d_fp = da.transpose() * ek.f.cof();
            // in 2D cof is linear and d/dF [G : cof F] = cof G
            d_f[k] += d_cof.cof();
            d_gamma_mean[k] += d_fp.ddot(&schmid);
        }

        for (k, el) in mesh.elements().iter().enumerate() {
            let grads = mesh.shape_gradients()[k];
            for (a, &node) in el.iter().enumerate() {
                for r in 0..2 {
                    gy[node][r] += d_f[k].0[r][0] * grads[a][0] + d_f[k].0[r][1] * grads[a][1];
                }
                gg[node] += d_gamma_mean[k] / 3.0;
            }
        }

        let ramp = self.loads.ramp(t);
        if ramp != 0.0 {
            let f = self.loads.f_max;
            let g = self.loads.g_max;
            for (el, area) in mesh.elements().iter().zip(mesh.element_areas()) {
                for &node in el {
                    gy[node][0] -= ramp * area * f[0] / 3.0;
                    gy[node][1] -= ramp * area * f[1] / 3.0;
                }
            }
            for facet in mesh.gamma1_facets() {
                let len = mesh.edge_length(facet);
                for &node in facet {
                    gy[node][0] -= ramp * 0.5 * len * g[0];
                    gy[node][1] -= ramp * 0.5 * len * g[1];
                }
            }
        }

        Ok(StateGradient { y: gy, gamma: gg, p: gp })
    }

    /// Minimum of `det F_e` over all elements.
    pub fn min_elastic_det(&self, q: &State) -> Result<f64, EnergyError> {
        Ok(self.kinematics(q)?.iter().map(|k| k.fe.det()).fold(f64::INFINITY, f64::min))
    }

    /// Maximum of `|det F_p - 1|` over all nodes.
    pub fn max_plastic_det_error(&self, q: &State) -> f64 {
        q.z.gamma.iter().map(|&g| (slip_matrix(g, &self.slip).det() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Identity of the multiplicative split: per element the difference between
/// `cof(F) F_pᵀ` and `cof(F F_p^{-1})`.
pub fn split_identity_defect(model: &Model, q: &State) -> Result<f64, EnergyError> {
    Ok(model.kinematics(q)?.iter().map(|k| k.cof_elastic.max_abs_diff(&k.fe.cof())).fold(0.0, f64::max))
}
