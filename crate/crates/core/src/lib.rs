//! Energetic time-incremental solver for finite-strain elastoplasticity with
//! gradient-polyconvex stored energies, specialized to single-slip crystal
//! plasticity on 2D P1 meshes.

// `!(x > 0.0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod diagnostics;
pub mod dissipation;
pub mod energy;
pub mod mesh;
pub mod run;
pub mod solver;
pub mod tensor;
