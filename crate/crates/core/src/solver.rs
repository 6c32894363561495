//! Time-incremental minimization.
//!
//! Each step solves `min_q I(t_k, q) + 𝒟(z_{k-1}, z)` by alternating an
//! elastic block (deformation, plastic state frozen) and a plastic block
//! (plastic state, deformation frozen). The plastic block replaces `|·|` in
//! the dissipation by `ρ_η`; candidates produced with the smoothed objective
//! are always compared on the exact objective before being accepted, so the
//! exact objective never increases across an outer iteration.
//!
//! Only local minimizers are computed. Global minimality, which the energetic
//! formulation asks for, is probed a posteriori by
//! [`crate::diagnostics::stability_probe`].

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dissipation::{diss_distance, DissipationError, DissipationSpec, SmoothedDissipation};
use crate::energy::{EnergyError, Model, PlasticState, State};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("{block} block: no feasible decreasing step at iteration {iteration} (value {value:e}, gradient norm {grad_norm:e})")]
    LineSearchFailure { block: Block, iteration: usize, value: f64, grad_norm: f64 },
    #[error("starting point has infinite energy")]
    InfeasibleStart,
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("step {step} (t = {time}): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<SolverError>,
    },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Dissipation(#[from] DissipationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Elastic,
    Plastic,
    Joint,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Block::Elastic => "elastic",
            Block::Plastic => "plastic",
            Block::Joint => "joint",
        })
    }
}

/// Search direction used by the block minimizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescentMethod {
    /// Negative gradient.
    Steepest,
    /// Regularized Newton step on a finite-difference Hessian of the analytic gradient.
    Newton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Cap on elastic/plastic alternations per step.
    pub max_outer: usize,
    /// Cap on descent iterations per block solve.
    pub max_inner: usize,
    /// Gradient-norm tolerance of the block solves.
    pub g_tol: f64,
    /// Outer loop stops once the exact objective decreases by less than this.
    pub e_tol: f64,
    /// Smoothing parameter of the dissipation.
    pub eta: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub method: DescentMethod,
    /// Number of starting points per step (extra starts perturb the warm start).
    pub n_starts: usize,
    /// Step of the finite-difference Hessian.
    pub fd_step: f64,
    /// Plastic increments below `snap_factor * eta` are candidates for snapping back to the previous state.
    pub snap_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_outer: 50,
            max_inner: 500,
            g_tol: 1e-8,
            e_tol: 1e-12,
            eta: 1e-8,
            armijo_c: 1e-4,
            shrink: 0.5,
            method: DescentMethod::Newton,
            n_starts: 1,
            fd_step: 1e-6,
            snap_factor: 100.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_outer == 0 || self.max_inner == 0 || self.n_starts == 0 {
            return Err("max_outer, max_inner and n_starts must be >= 1".into());
        }
        for (name, v) in [("g_tol", self.g_tol), ("e_tol", self.e_tol), ("eta", self.eta), ("fd_step", self.fd_step)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be > 0"));
            }
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err("armijo_c must lie in (0, 1)".into());
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err("shrink must lie in (0, 1)".into());
        }
        if !(self.snap_factor >= 0.0) {
            return Err("snap_factor must be >= 0".into());
        }
        Ok(())
    }
}

/// A smooth objective over a flat vector of unknowns; `+∞` marks infeasibility.
pub trait Objective: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>>;
    fn hessian(&self, x: &[f64], h: f64) -> Option<DMatrix<f64>>;
}

/// Symmetrized central-difference Jacobian of `grad`.
pub fn fd_hessian<G>(grad: G, x: &[f64], h: f64) -> Option<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Option<Vec<f64>> + Sync,
{
    let n = x.len();
    let column = |j: usize| -> Option<Vec<f64>> {
        let mut xp = x.to_vec();
        xp[j] += h;
        let gp = grad(&xp)?;
        xp[j] = x[j] - h;
        let gm = grad(&xp)?;
        Some(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    };
    #[cfg(feature = "parallel")]
    let cols: Vec<Option<Vec<f64>>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(column).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let cols: Vec<Option<Vec<f64>>> = (0..n).map(column).collect();

    let mut hess = DMatrix::zeros(n, n);
    for (j, col) in cols.into_iter().enumerate() {
        let col = col?;
        for i in 0..n {
            hess[(i, j)] = col[i];
        }
    }
    Some((&hess + hess.transpose()) * 0.5)
}

/// Result of one block minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct Descent {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted iterate, starting with the initial value.
    pub history: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn newton_direction(hess: DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let rhs = -DVector::from_column_slice(g);
    let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..40 {
        let mut h = hess.clone();
        for i in 0..n {
            h[(i, i)] += shift;
        }
        if let Some(chol) = h.cholesky() {
            let d = chol.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d.as_slice().to_vec());
            }
        }
        shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
    }
    None
}

/// Barrier-aware descent with Armijo backtracking. Trial points with infinite
/// value are rejected like any insufficient decrease.
pub fn descend<O: Objective>(obj: &O, x0: &[f64], opts: &SolverOptions, block: Block) -> Result<Descent, SolverError> {
    let mut x = x0.to_vec();
    let mut f = obj.value(&x);
    if !f.is_finite() {
        return Err(SolverError::InfeasibleStart);
    }
    let mut g = obj.gradient(&x).ok_or(SolverError::InfeasibleStart)?;
    let mut history = vec![f];
    let mut step_guess = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_inner {
        let gn = norm(&g);
        if gn <= opts.g_tol {
            converged = true;
            break;
        }
        let (mut d, newton) = match opts.method {
            DescentMethod::Newton => match obj.hessian(&x, opts.fd_step).and_then(|h| newton_direction(h, &g)) {
                Some(d) => (d, true),
                None => (g.iter().map(|v| -v).collect(), false),
            },
            DescentMethod::Steepest => (g.iter().map(|v| -v).collect(), false),
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let mut alpha = if newton { 1.0 } else { step_guess };
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let ft = obj.value(&trial);
            if ft.is_finite() && ft <= f + opts.armijo_c * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= opts.shrink;
        }
        let Some((trial, ft)) = accepted else {
            // decrease below round-off: nothing more to gain
            if slope.abs() <= 1e3 * f64::EPSILON * (1.0 + f.abs()) {
                break;
            }
            return Err(SolverError::LineSearchFailure { block, iteration: iterations, value: f, grad_norm: gn });
        };
        iterations += 1;
        if !newton {
            step_guess = (alpha / opts.shrink).min(1e6);
        }
        let gt = obj.gradient(&trial).ok_or(SolverError::InfeasibleStart)?;
        let stalled = ft == f;
        x = trial;
        f = ft;
        g = gt;
        history.push(f);
        if stalled {
            break;
        }
    }
    let grad_norm = norm(&g);
    converged |= grad_norm <= opts.g_tol;
    debug_assert!(history.windows(2).all(|w| w[1] <= w[0]), "{block} block energy increased");
    trace!("{block} block: {iterations} iterations, value {f:e}, gradient norm {grad_norm:e}");
    Ok(Descent { x, value: f, grad_norm, iterations, converged, history })
}

/// Indices of the unknowns that are actually optimized.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub free_nodes: Vec<usize>,
    pub num_nodes: usize,
    pub hardening_dim: usize,
}

impl DofMap {
    pub fn new(model: &Model) -> Self {
        let mesh = &model.mesh;
        DofMap {
            free_nodes: (0..mesh.num_nodes()).filter(|&i| !mesh.is_dirichlet(i)).collect(),
            num_nodes: mesh.num_nodes(),
            hardening_dim: model.hardening_dim(),
        }
    }

    pub fn num_elastic(&self) -> usize {
        2 * self.free_nodes.len()
    }

    pub fn num_plastic(&self) -> usize {
        self.num_nodes * (1 + self.hardening_dim)
    }

    pub fn pack_y(&self, y: &[[f64; 2]]) -> Vec<f64> {
        self.free_nodes.iter().flat_map(|&i| y[i]).collect()
    }

    pub fn unpack_y(&self, x: &[f64], y: &mut [[f64; 2]]) {
        for (k, &i) in self.free_nodes.iter().enumerate() {
            y[i] = [x[2 * k], x[2 * k + 1]];
        }
    }

    pub fn pack_z(&self, z: &PlasticState) -> Vec<f64> {
        let mut x = z.gamma.clone();
        x.extend(&z.p);
        x
    }

    pub fn unpack_z(&self, x: &[f64]) -> PlasticState {
        PlasticState { gamma: x[..self.num_nodes].to_vec(), p: x[self.num_nodes..].to_vec() }
    }
}

/// `y ↦ I(t, (y, z))` over the free nodes.
struct ElasticBlock<'a> {
    model: &'a Model,
    dofs: &'a DofMap,
    t: f64,
    base: &'a State,
}

impl ElasticBlock<'_> {
    fn state(&self, x: &[f64]) -> State {
        let mut q = self.base.clone();
        self.dofs.unpack_y(x, &mut q.y);
        q
    }
}

impl Objective for ElasticBlock<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.model.total_energy(self.t, &self.state(x)).unwrap_or(f64::INFINITY)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let g = self.model.gradient(self.t, &self.state(x)).ok()?;
        Some(self.dofs.pack_y(&g.y))
    }

    fn hessian(&self, x: &[f64], h: f64) -> Option<DMatrix<f64>> {
        fd_hessian(|x| self.gradient(x), x, h)
    }
}

/// `z ↦ I(t, (y, z)) + 𝒟_η(z_prev, z)`.
struct PlasticBlock<'a> {
    model: &'a Model,
    dofs: &'a DofMap,
    t: f64,
    base: &'a State,
    smooth: SmoothedDissipation<'a>,
}

impl PlasticBlock<'_> {
    fn state(&self, x: &[f64]) -> State {
        State { y: self.base.y.clone(), z: self.dofs.unpack_z(x) }
    }

    fn energy_gradient(&self, q: &State) -> Option<Vec<f64>> {
        let g = self.model.gradient(self.t, q).ok()?;
        let mut out = g.gamma;
        out.extend(g.p);
        Some(out)
    }
}

impl Objective for PlasticBlock<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let q = self.state(x);
        match self.model.total_energy(self.t, &q) {
            Ok(e) if e.is_finite() => e + self.smooth.value(&q.z),
            _ => f64::INFINITY,
        }
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let q = self.state(x);
        let mut g = self.energy_gradient(&q)?;
        let n = self.dofs.num_nodes;
        let (gg, gp) = g.split_at_mut(n);
        self.smooth.add_gradient(&q.z, gg, gp);
        Some(g)
    }

    fn hessian(&self, x: &[f64], h: f64) -> Option<DMatrix<f64>> {
        let mut hess = fd_hessian(|x| self.energy_gradient(&self.state(x)), x, h)?;
        let n = self.dofs.num_nodes;
        let m = self.dofs.hardening_dim;
        self.smooth.add_hessian(&self.dofs.unpack_z(x), &mut hess, |i| i, |i, c| n + i * m + c);
        Some(hess)
    }
}

/// `(y, z) ↦ I(t, (y, z)) + 𝒟_η(z_prev, z)` over all free unknowns.
struct JointBlock<'a> {
    model: &'a Model,
    dofs: &'a DofMap,
    t: f64,
    base: &'a State,
    smooth: SmoothedDissipation<'a>,
}

impl JointBlock<'_> {
    fn state(&self, x: &[f64]) -> State {
        let ne = self.dofs.num_elastic();
        let mut q = State { y: self.base.y.clone(), z: self.dofs.unpack_z(&x[ne..]) };
        self.dofs.unpack_y(&x[..ne], &mut q.y);
        q
    }

    fn pack(&self, q: &State) -> Vec<f64> {
        let mut x = self.dofs.pack_y(&q.y);
        x.extend(self.dofs.pack_z(&q.z));
        x
    }

    fn energy_gradient(&self, q: &State) -> Option<Vec<f64>> {
        let g = self.model.gradient(self.t, q).ok()?;
        let mut out = self.dofs.pack_y(&g.y);
        out.extend(g.gamma);
        out.extend(g.p);
        Some(out)
    }
}

impl Objective for JointBlock<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let q = self.state(x);
        match self.model.total_energy(self.t, &q) {
            Ok(e) if e.is_finite() => e + self.smooth.value(&q.z),
            _ => f64::INFINITY,
        }
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let q = self.state(x);
        let mut g = self.energy_gradient(&q)?;
        let ne = self.dofs.num_elastic();
        let (gg, gp) = g[ne..].split_at_mut(self.dofs.num_nodes);
        self.smooth.add_gradient(&q.z, gg, gp);
        Some(g)
    }

    fn hessian(&self, x: &[f64], h: f64) -> Option<DMatrix<f64>> {
        let mut hess = fd_hessian(|x| self.energy_gradient(&self.state(x)), x, h)?;
        let ne = self.dofs.num_elastic();
        let n = self.dofs.num_nodes;
        let m = self.dofs.hardening_dim;
        let z = self.dofs.unpack_z(&x[ne..]);
        self.smooth.add_hessian(&z, &mut hess, |i| ne + i, |i, c| ne + n + i * m + c);
        Some(hess)
    }
}

/// Alternations per round; every round ends with a joint Newton polish.
const ALTERNATIONS_PER_ROUND: usize = 3;

/// Model plus the derived data every step needs.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: Model,
    pub dissipation: DissipationSpec,
    pub dofs: DofMap,
}

impl Problem {
    pub fn new(model: Model) -> Self {
        let dissipation = DissipationSpec::from_material(&model.material);
        let dofs = DofMap::new(&model);
        Problem { model, dissipation, dofs }
    }

    /// `I(t, q) + 𝒟(z_prev, z)` with the exact distance.
    pub fn incremental_objective(&self, t: f64, q: &State, z_prev: &PlasticState) -> Result<f64, SolverError> {
        let e = self.model.total_energy(t, q)?;
        if !e.is_finite() {
            return Ok(f64::INFINITY);
        }
        Ok(e + diss_distance(z_prev, &q.z, &self.model.mesh, &self.dissipation)?)
    }

    /// Minimizes over the deformation with the plastic state frozen.
    pub fn elastic_substep(&self, t: f64, q: &State, opts: &SolverOptions) -> Result<(State, Descent), SolverError> {
        let block = ElasticBlock { model: &self.model, dofs: &self.dofs, t, base: q };
        let d = descend(&block, &self.dofs.pack_y(&q.y), opts, Block::Elastic)?;
        Ok((block.state(&d.x), d))
    }

    /// Minimizes over the plastic state with the deformation frozen, then
    /// keeps whichever of the start, the smoothed minimizer and the snapped
    /// minimizer has the lowest exact objective.
    pub fn plastic_substep(
        &self,
        t: f64,
        q: &State,
        z_prev: &PlasticState,
        opts: &SolverOptions,
    ) -> Result<(State, Descent), SolverError> {
        let smooth =
            SmoothedDissipation { mesh: &self.model.mesh, spec: self.dissipation, eta: opts.eta, anchor: z_prev };
        let block = PlasticBlock { model: &self.model, dofs: &self.dofs, t, base: q, smooth };
        let d = descend(&block, &self.dofs.pack_z(&q.z), opts, Block::Plastic)?;
        let smoothed = block.state(&d.x);

        let snapped = self.snap(&smoothed, z_prev, opts);

        let mut best = q.clone();
        let mut best_value = self.incremental_objective(t, q, z_prev)?;
        for cand in [smoothed, snapped] {
            let v = self.incremental_objective(t, &cand, z_prev)?;
            // gains below e_tol are round-off on the yield surface
            if v < best_value - opts.e_tol {
                best = cand;
                best_value = v;
            }
        }
        Ok((best, d))
    }

    /// Resets plastic increments below `snap_factor * eta` to the previous state.
    fn snap(&self, q: &State, z_prev: &PlasticState, opts: &SolverOptions) -> State {
        let snap_tol = opts.snap_factor * opts.eta;
        let mut snapped = q.clone();
        for (g, g0) in snapped.z.gamma.iter_mut().zip(&z_prev.gamma) {
            if (*g - g0).abs() <= snap_tol {
                *g = *g0;
            }
        }
        let m = self.dofs.hardening_dim;
        if m > 0 {
            for i in 0..self.dofs.num_nodes {
                let r = &mut snapped.z.p[i * m..(i + 1) * m];
                let r0 = &z_prev.p[i * m..(i + 1) * m];
                if r.iter().zip(r0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() <= snap_tol {
                    r.copy_from_slice(r0);
                }
            }
        }
        snapped
    }

    /// Newton on all unknowns at once, for the strongly coupled regime where
    /// alternation crawls. The result is kept only if it lowers the exact
    /// objective; the snapped variant gets its deformation re-relaxed.
    pub fn joint_polish(
        &self,
        t: f64,
        q: &State,
        z_prev: &PlasticState,
        opts: &SolverOptions,
    ) -> Result<(State, Descent), SolverError> {
        let smooth =
            SmoothedDissipation { mesh: &self.model.mesh, spec: self.dissipation, eta: opts.eta, anchor: z_prev };
        let block = JointBlock { model: &self.model, dofs: &self.dofs, t, base: q, smooth };
        let joint_opts = SolverOptions { method: DescentMethod::Newton, ..opts.clone() };
        let d = descend(&block, &block.pack(q), &joint_opts, Block::Joint)?;
        let smoothed = block.state(&d.x);
        let mut candidates = vec![smoothed.clone()];
        let snapped = self.snap(&smoothed, z_prev, opts);
        if snapped.z != smoothed.z {
            candidates.push(self.elastic_substep(t, &snapped, opts)?.0);
        }
        let mut best = q.clone();
        let mut best_value = self.incremental_objective(t, q, z_prev)?;
        for cand in candidates {
            let v = self.incremental_objective(t, &cand, z_prev)?;
            if v < best_value - opts.e_tol {
                best = cand;
                best_value = v;
            }
        }
        Ok((best, d))
    }

    /// One incremental problem, warm-started from `q_prev`.
    pub fn incremental_step(&self, t: f64, q_prev: &State, opts: &SolverOptions) -> Result<StepResult, SolverError> {
        let start_value = self.incremental_objective(t, q_prev, &q_prev.z)?;
        if !start_value.is_finite() {
            return Err(SolverError::InfeasibleStart);
        }
        let mut best = self.solve_from(t, q_prev.clone(), &q_prev.z, opts)?;
        for s in 1..opts.n_starts {
            let start = self.perturbed_start(q_prev, s as u64, t);
            if !self.incremental_objective(t, &start, &q_prev.z)?.is_finite() {
                continue;
            }
            let cand = self.solve_from(t, start, &q_prev.z, opts)?;
            if cand.objective < best.objective {
                best = cand;
            }
        }
        if best.objective > start_value {
            // never worse than the warm start
            best.state = q_prev.clone();
            best.objective = start_value;
        }
        Ok(best)
    }

    /// Seeded by the load level, so time-reparameterized runs see the same starts.
    fn perturbed_start(&self, q: &State, seed: u64, t: f64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ self.model.loads.ramp(t).to_bits());
        let normal = Normal::new(0.0, 1e-3).expect("valid normal");
        let mut start = q.clone();
        for &i in &self.dofs.free_nodes {
            start.y[i][0] += normal.sample(&mut rng);
            start.y[i][1] += normal.sample(&mut rng);
        }
        start
    }

    fn solve_from(
        &self,
        t: f64,
        start: State,
        z_prev: &PlasticState,
        opts: &SolverOptions,
    ) -> Result<StepResult, SolverError> {
        let mut q = start;
        let mut value = self.incremental_objective(t, &q, z_prev)?;
        let mut stats = StepStats::default();
        let mut outer = 0;
        'rounds: while outer < opts.max_outer {
            for _ in 0..ALTERNATIONS_PER_ROUND {
                let (qe, de) = self.elastic_substep(t, &q, opts)?;
                let (qp, dp) = self.plastic_substep(t, &qe, z_prev, opts)?;
                let new_value = self.incremental_objective(t, &qp, z_prev)?;
                outer += 1;
                stats.inner_iterations += de.iterations + dp.iterations;
                let decrease = value - new_value;
                debug_assert!(decrease >= 0.0, "outer objective increased by {}", -decrease);
                q = qp;
                value = new_value;
                if decrease < opts.e_tol {
                    break;
                }
                if outer >= opts.max_outer {
                    break 'rounds;
                }
            }
            let (qj, dj) = self.joint_polish(t, &q, z_prev, opts)?;
            stats.inner_iterations += dj.iterations;
            let new_value = self.incremental_objective(t, &qj, z_prev)?;
            let decrease = value - new_value;
            q = qj;
            value = new_value;
            if decrease < opts.e_tol {
                stats.converged = true;
                break;
            }
        }
        stats.outer_iterations = outer;
        stats.grad_norm = self.stationarity(t, &q, z_prev, opts.eta)?;
        debug!(
            "t = {t}: {} outer / {} inner iterations, objective {value:e}, gradient norm {:e}",
            stats.outer_iterations, stats.inner_iterations, stats.grad_norm
        );
        Ok(StepResult { state: q, objective: value, stats })
    }

    /// Stationarity residual of the incremental objective over all free
    /// unknowns: the smoothed gradient, except that a slip dof sitting exactly
    /// at its previous value only counts the part of its driving force that
    /// exceeds its lumped resistance `κ m_i`.
    pub fn stationarity(&self, t: f64, q: &State, z_prev: &PlasticState, eta: f64) -> Result<f64, SolverError> {
        let g = self.model.gradient(t, q)?;
        let mut gg = g.gamma.clone();
        let mut gp = g.p;
        SmoothedDissipation { mesh: &self.model.mesh, spec: self.dissipation, eta, anchor: z_prev }
            .add_gradient(&q.z, &mut gg, &mut gp);
        let lumped = self.model.mesh.nodal_areas();
        for i in 0..gg.len() {
            if q.z.gamma[i] == z_prev.gamma[i] {
                gg[i] = (g.gamma[i].abs() - self.dissipation.kappa * lumped[i]).max(0.0);
            }
        }
        let gy = self.dofs.pack_y(&g.y);
        Ok((gy.iter().chain(&gg).chain(&gp).map(|v| v * v).sum::<f64>()).sqrt())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: State,
    /// Exact incremental objective at `state`.
    pub objective: f64,
    pub stats: StepStats,
}

/// Per-step bookkeeping of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub k: usize,
    pub t: f64,
    /// `I(t_k, q_k)`
    pub energy: f64,
    /// `𝒟(z_{k-1}, z_k)`
    pub diss_increment: f64,
    pub var_cumulative: f64,
    /// `∫_{t_{k-1}}^{t_k} L̇(t, y_{k-1}) dt`
    pub work_increment: f64,
    /// `I(t_k, q_k) + Var[0, t_k] − I(0, q_0) + ∫_0^{t_k} L̇(t, q_τ(t)) dt`
    pub balance_residual: f64,
    pub stats: StepStats,
}

/// Piecewise-constant-in-time solution together with its ledger.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub model: Model,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub ledger: Vec<LedgerEntry>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn tau(&self) -> f64 {
        self.model.loads.t_final / self.steps() as f64
    }
}

/// Default initial condition: the `t = 0` incremental problem solved from the
/// identity map with zero slip. Clamped corners carry stress concentrations
/// even without loads, so the purely elastic `t = 0` solution with `γ ≡ 0` is
/// in general not stable; the incremental minimizer is.
pub fn initial_state(problem: &Problem, opts: &SolverOptions) -> Result<State, SolverError> {
    let q = problem.model.reference_state();
    if !problem.model.total_energy(0.0, &q)?.is_finite() {
        return Err(SolverError::InfeasibleStart);
    }
    Ok(problem.incremental_step(0.0, &q, opts)?.state)
}

/// Runs `steps` incremental problems on the uniform grid `t_k = k T / steps`.
pub fn run_evolution(
    model: &Model,
    opts: &SolverOptions,
    steps: usize,
    initial: Option<State>,
) -> Result<Trajectory, SolverError> {
    opts.validate().map_err(SolverError::InvalidOptions)?;
    if steps == 0 {
        return Err(SolverError::InvalidOptions("number of steps must be >= 1".into()));
    }
    let problem = Problem::new(model.clone());
    let q0 = match initial {
        Some(q) => {
            model.check_state(&q)?;
            q
        }
        None => initial_state(&problem, opts)?,
    };
    let tau = model.loads.t_final / steps as f64;
    let e0 = model.total_energy(0.0, &q0)?;
    if !e0.is_finite() {
        return Err(SolverError::InfeasibleStart);
    }
    let mut traj = Trajectory {
        model: model.clone(),
        times: vec![0.0],
        states: vec![q0],
        ledger: vec![LedgerEntry {
            k: 0,
            t: 0.0,
            energy: e0,
            diss_increment: 0.0,
            var_cumulative: 0.0,
            work_increment: 0.0,
            balance_residual: 0.0,
            stats: StepStats { converged: true, ..StepStats::default() },
        }],
    };
    let mut work_total = 0.0;
    for k in 1..=steps {
        let t = k as f64 * tau;
        let t_prev = traj.times[k - 1];
        let q_prev = &traj.states[k - 1];
        let step = problem.incremental_step(t, q_prev, opts).map_err(|e| SolverError::Step {
            step: k,
            time: t,
            source: Box::new(e),
        })?;
        let energy = model.total_energy(t, &step.state)?;
        let diss = diss_distance(&q_prev.z, &step.state.z, &model.mesh, &problem.dissipation)?;
        let work = (model.loads.ramp(t) - model.loads.ramp(t_prev)) * model.load_functional(&q_prev.y);
        work_total += work;
        let prev = traj.ledger.last().expect("ledger has the initial entry");
        let var = prev.var_cumulative + diss;
        let entry = LedgerEntry {
            k,
            t,
            energy,
            diss_increment: diss,
            var_cumulative: var,
            work_increment: work,
            balance_residual: energy + var - e0 + work_total,
            stats: step.stats,
        };
        debug!("step {k}: energy {energy:e}, dissipation {diss:e}, residual {:e}", entry.balance_residual);
        traj.times.push(t);
        traj.states.push(step.state);
        traj.ledger.push(entry);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{LoadProgram, Material};
    use crate::mesh::{build_rect_mesh, Side};
    use crate::tensor::SlipSystem;

    fn model(nx: usize, g: [f64; 2]) -> Model {
        let mesh = build_rect_mesh(nx, nx, 1.0, 1.0, &[Side::Left], &[Side::Right]).unwrap();
        let loads = LoadProgram { g_max: g, ..LoadProgram::zero(1.0) };
        Model::new(mesh, Material::default(), SlipSystem::new([0.0, 1.0], [1.0, 0.0]).unwrap(), loads)
    }

    struct Quadratic;
    impl Objective for Quadratic {
        fn value(&self, x: &[f64]) -> f64 {
            if x[0] < -5.0 {
                return f64::INFINITY;
            }
            (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2)
        }
        fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
            Some(vec![2.0 * (x[0] - 1.0), 20.0 * (x[1] + 2.0)])
        }
        fn hessian(&self, x: &[f64], h: f64) -> Option<DMatrix<f64>> {
            fd_hessian(|x| self.gradient(x), x, h)
        }
    }

    #[test]
    fn descent_methods_converge_on_a_quadratic() {
        for method in [DescentMethod::Newton, DescentMethod::Steepest] {
            let opts = SolverOptions { method, ..SolverOptions::default() };
            let d = descend(&Quadratic, &[0.0, 0.0], &opts, Block::Elastic).unwrap();
            assert!(d.converged);
            assert!((d.x[0] - 1.0).abs() < 1e-8 && (d.x[1] + 2.0).abs() < 1e-8);
            assert!(d.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn descent_rejects_infeasible_start() {
        let r = descend(&Quadratic, &[-6.0, 0.0], &SolverOptions::default(), Block::Elastic);
        assert_eq!(r.unwrap_err(), SolverError::InfeasibleStart);
    }

    #[test]
    fn options_validation() {
        assert!(SolverOptions::default().validate().is_ok());
        assert!(SolverOptions { shrink: 1.0, ..SolverOptions::default() }.validate().is_err());
        assert!(SolverOptions { armijo_c: 0.0, ..SolverOptions::default() }.validate().is_err());
        assert!(SolverOptions { eta: -1.0, ..SolverOptions::default() }.validate().is_err());
    }

    #[test]
    fn stationary_state_is_returned_unchanged() {
        let m = model(3, [0.0, 0.0]);
        let p = Problem::new(m);
        let opts = SolverOptions::default();
        let q0 = initial_state(&p, &opts).unwrap();
        let (q1, d) = p.elastic_substep(0.0, &q0, &opts).unwrap();
        assert_eq!(d.iterations, 0);
        assert_eq!(q1, q0);
        let step = p.incremental_step(0.5, &q0, &opts).unwrap();
        assert_eq!(step.state, q0);
    }

    #[test]
    fn plastic_substep_at_reference_keeps_zero_slip() {
        let m = model(3, [0.0, 0.0]);
        let p = Problem::new(m);
        let q = p.model.reference_state();
        let (qz, _) = p.plastic_substep(0.0, &q, &q.z, &SolverOptions::default()).unwrap();
        assert!(qz.z.gamma.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn elastic_response_is_monotone_in_traction() {
        let opts = SolverOptions::default();
        let mut tip = Vec::new();
        for g in [0.002, 0.004, 0.008] {
            let p = Problem::new(model(3, [0.0, g]));
            let q = p.model.reference_state();
            let (qe, d) = p.elastic_substep(1.0, &q, &opts).unwrap();
            assert!(d.history.windows(2).all(|w| w[1] <= w[0]));
            let corner = p.model.mesh.num_nodes() - 1;
            tip.push(qe.y[corner][1] - p.model.mesh.nodes()[corner][1]);
        }
        assert!(tip[0] > 0.0 && tip[1] > tip[0] && tip[2] > tip[1], "{tip:?}");
    }

    #[test]
    fn huge_resistance_freezes_slip() {
        let mut m = model(3, [0.0, 0.15]);
        m.material.kappa = 1e6;
        let p = Problem::new(m);
        let opts = SolverOptions::default();
        let q0 = initial_state(&p, &opts).unwrap();
        let step = p.incremental_step(1.0, &q0, &opts).unwrap();
        let drift = step.state.z.gamma.iter().zip(&q0.z.gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-10);
        let moved = step.state.y.iter().zip(&q0.y).map(|(a, b)| (a[1] - b[1]).abs()).fold(0.0, f64::max);
        assert!(moved > 1e-3);
    }
}
