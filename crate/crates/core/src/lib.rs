//! Discrete phase-space toolkit for systems of pseudodifferential operators.
//!
//! Everything lives on a cell-centred lattice in `(x, ξ)` (one base
//! dimension) times a uniform time grid. The pipeline is
//!
//! ```text
//! f(t, x, ξ) ──► sign partition X± / X₀ ──► signed distance δ₀
//!            ──► weights H^{-1/2}, M, m ──► pseudo-sign ρ_T, B_T = δ₀ + ρ_T
//!            ──► Wick multiplier b_T^w ──► Im⟨P₀u, b_T^w u⟩ over a trial corpus
//! ```
//!
//! plus pointwise matrix-symbol classification in [`system`].

// `!(x > 0.0)` guards are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod psi;
pub mod pseudo_sign;
pub mod quantization;
pub mod system;
pub mod weights;

pub use error::{Error, Result};
pub use exec::Exec;
pub use grid::{MatrixField, PhaseGrid, ScalarField, TimeGrid};

pub use num_complex::Complex64;

/// Crate version, embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
