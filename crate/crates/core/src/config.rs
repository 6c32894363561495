//! Run configuration: a TOML file with one table per block.
//!
//! Omitted keys take their defaults. Hard invariants are checked at load and
//! reported with the line of the offending key; violated well-posedness
//! hypotheses only produce warnings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{LoadProgram, Material, Model, RampKind};
use crate::mesh::{build_rect_mesh, MeshError, Side};
use crate::solver::SolverOptions;
use crate::tensor::{SlipSystem, TensorError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid configuration{}: {invariant}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Validation { invariant: String, line: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Sides where the deformation is clamped to the identity.
    pub gamma0: Vec<Side>,
    /// Sides carrying the traction.
    pub gamma1: Vec<Side>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { nx: 8, ny: 8, lx: 1.0, ly: 1.0, gamma0: vec![Side::Left], gamma1: vec![Side::Right] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlipConfig {
    /// Slip direction.
    pub a: [f64; 2],
    /// Slip-plane normal.
    pub b: [f64; 2],
}

impl Default for SlipConfig {
    fn default() -> Self {
        SlipConfig { a: [0.0, 1.0], b: [1.0, 0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadingConfig {
    pub f_max: [f64; 2],
    pub g_max: [f64; 2],
    pub t_final: f64,
    pub ramp: RampKind,
    pub steps: usize,
}

impl Default for LoadingConfig {
    fn default() -> Self {
        LoadingConfig { f_max: [0.0, 0.0], g_max: [0.0, 0.05], t_final: 1.0, ramp: RampKind::Linear, steps: 20 }
    }
}

impl LoadingConfig {
    pub fn program(&self) -> LoadProgram {
        LoadProgram { f_max: self.f_max, g_max: self.g_max, t_final: self.t_final, ramp: self.ramp }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub energy_inequality: bool,
    pub stability: bool,
    pub apriori: bool,
    /// Also rerun with half the time step and compare the a-priori norms.
    pub apriori_refinement: bool,
    pub rate_independence: bool,
    pub n_samples: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            energy_inequality: true,
            stability: true,
            apriori: true,
            apriori_refinement: true,
            rate_independence: true,
            n_samples: 100,
            radius: 0.01,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Field dumps are written every `stride` steps (and at the last step).
    pub stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("gpcplast-out"), stride: 10 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub material: Material,
    pub slip: SlipConfig,
    pub loading: LoadingConfig,
    pub solver: SolverOptions,
    pub audit: AuditConfig,
    pub output: OutputConfig,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Line of `key = ...` inside `[table]`, if the key is present in the source.
fn locate(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl RunConfig {
    /// Parses and validates; returns the config and the hypothesis warnings.
    pub fn from_toml_str(src: &str) -> Result<(RunConfig, Vec<String>), ConfigError> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
            ConfigError::Parse { line, column, message: e.message().to_string() }
        })?;
        cfg.validate()
            .map_err(|(table, key, invariant)| ConfigError::Validation { invariant, line: locate(src, table, key) })?;
        Ok((cfg.clone(), cfg.warnings()))
    }

    pub fn warnings(&self) -> Vec<String> {
        self.material.hypothesis_warnings(2)
    }

    /// The first violated invariant as `(table, key, message)`.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        let m = &self.mesh;
        if m.nx == 0 {
            return Err(("mesh", "nx", "nx must be >= 1".into()));
        }
        if m.ny == 0 {
            return Err(("mesh", "ny", "ny must be >= 1".into()));
        }
        if !(m.lx > 0.0) || !m.lx.is_finite() {
            return Err((
                "mesh",
                "lx",
                format!("lx must be > 0 (got {}); a nonpositive length inverts the mesh", m.lx),
            ));
        }
        if !(m.ly > 0.0) || !m.ly.is_finite() {
            return Err((
                "mesh",
                "ly",
                format!("ly must be > 0 (got {}); a nonpositive length inverts the mesh", m.ly),
            ));
        }
        if m.gamma0.is_empty() {
            return Err(("mesh", "gamma0", "gamma0 must name at least one side".into()));
        }
        if let Some(s) = m.gamma0.iter().find(|s| m.gamma1.contains(s)) {
            return Err(("mesh", "gamma1", format!("side {s:?} cannot belong to both gamma0 and gamma1")));
        }
        if let Err(msg) = self.material.validate() {
            const KEYS: [&str; 12] = [
                "lam",
                "mu",
                "c_h",
                "c_det",
                "s",
                "eps_p",
                "alpha",
                "beta",
                "omega",
                "kappa_p",
                "kappa",
                "hardening_enabled",
            ];
            let key = KEYS.iter().find(|k| msg.split_whitespace().next() == Some(**k)).copied().unwrap_or("");
            return Err(("material", key, msg));
        }
        if let Err(e) = SlipSystem::new(self.slip.a, self.slip.b) {
            return Err(("slip", "a", format!("slip vectors must be orthonormal: {e}")));
        }
        let l = &self.loading;
        if !(l.t_final > 0.0) || !l.t_final.is_finite() {
            return Err(("loading", "t_final", "t_final must be > 0".into()));
        }
        if l.steps == 0 {
            return Err(("loading", "steps", "steps must be >= 1".into()));
        }
        if !l.f_max.iter().chain(&l.g_max).all(|v| v.is_finite()) {
            return Err(("loading", "g_max", "load amplitudes must be finite".into()));
        }
        if let Err(msg) = self.solver.validate() {
            const KEYS: [&str; 11] = [
                "max_outer",
                "max_inner",
                "g_tol",
                "e_tol",
                "eta",
                "armijo_c",
                "shrink",
                "n_starts",
                "fd_step",
                "snap_factor",
                "method",
            ];
            let key = KEYS.iter().find(|k| msg.starts_with(**k)).copied().unwrap_or("");
            return Err(("solver", key, msg));
        }
        if !(self.audit.radius > 0.0) || !self.audit.radius.is_finite() {
            return Err(("audit", "radius", "radius must be > 0".into()));
        }
        if self.output.stride == 0 {
            return Err(("output", "stride", "stride must be >= 1".into()));
        }
        Ok(())
    }

    /// The effective configuration with every default spelled out.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn build_model(&self) -> Result<Model, ConfigError> {
        let m = &self.mesh;
        let mesh = build_rect_mesh(m.nx, m.ny, m.lx, m.ly, &m.gamma0, &m.gamma1)
            .map_err(|e: MeshError| ConfigError::Validation { invariant: e.to_string(), line: None })?;
        let slip = SlipSystem::new(self.slip.a, self.slip.b)
            .map_err(|e: TensorError| ConfigError::Validation { invariant: e.to_string(), line: None })?;
        Ok(Model::new(mesh, self.material.clone(), slip, self.loading.program()))
    }

    /// The shipped demonstration setup: a unit square clamped on the left and
    /// sheared by a traction on the right, with slip along the shear direction.
    pub fn demo() -> RunConfig {
        RunConfig::default()
    }
}

pub fn parse_config(path: &Path) -> Result<(RunConfig, Vec<String>), ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    RunConfig::from_toml_str(&src)
}

/// Commented demo configuration, as written by the `demo` subcommand.
pub fn demo_toml() -> String {
    let body = RunConfig::demo().echo();
    format!(
        "# gpcplast demo: unit square, clamped on the left, sheared by a traction\n\
         # on the right; single slip system aligned with the shear.\n\
         # Material defaults are calibration values, not measured data.\n\n{body}"
    )
}
