//! Thermodynamic model of softmax attention.
//!
//! * [`infogeom`]: amplitude map and Fisher information on the simplex.
//! * [`equilibrium`]: partition function, free energy, specific heat, and
//!   dynamical relaxation onto the softmax fixed point.
//! * [`langevin`]: overdamped Langevin ensembles in a logarithmic
//!   Coleman–Weinberg potential under annealing.
//! * [`rope`]: rotary embeddings as phase rotations and the flat/massive
//!   curvature split of the potential trough.
//! * [`nn`]: reverse-mode autodiff, a small decoder Transformer and AdamW.
//! * [`grokking`]: modular-addition training harness with per-epoch
//!   fluctuation instrumentation.
//! * [`scaling`]: cross-modulus power-law fit of specific-heat peaks.
//! * [`rundir`]: run directories and manifests.
//! * [`plot`]: SVG figures.
//! * [`cli`]: the `attn-thermo` command.

// `!(x > 0.0)` is used deliberately so NaN inputs are rejected by the same test.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod grokking;
pub mod infogeom;
pub mod langevin;
pub mod nn;
pub mod plot;
pub mod rope;
pub mod rundir;
pub mod scaling;

pub use error::{Error, Result};
