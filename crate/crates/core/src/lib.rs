//! Multilevel P1 finite elements for the parametric diffusion problem on
//! `[0,1]^2`, with a damped-Richardson multigrid solver and an exactly
//! equivalent convolutional formulation of every building block.
//!
//! The crate is organised around the nested dyadic grid hierarchy:
//!
//! * [`grid`] -- levels, vertex indexing, prolongation/restriction oracles
//! * [`fields`] -- the four benchmark coefficient families and parameter sampling
//! * [`fe`] -- per-vertex triangle integrals and the stencil operator `A_kappa`
//! * [`multigrid`] -- Richardson smoothing, V-cycles, the multilevel solve schedule
//! * [`convnet`] -- convolution kernels realising the same operations, the
//!   approximate multiplication unit, and network weight counting
//! * [`mldata`] -- multilevel training samples, corrections, losses
//! * [`metrics`] -- mean-relative error metrics
//!
//! The crate is `no_std` (with `alloc`) so the numerical core stays free of
//! platform dependencies; all IO lives in the companion CLI crate.

#![no_std]
// index-arithmetic loops mirror the stencil formulas on purpose, and the
// negated float comparisons are NaN guards
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::manual_is_multiple_of)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub(crate) mod num;

pub mod convnet;
pub mod fe;
pub mod fields;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod mldata;
pub mod multigrid;
pub mod rng;

pub use fields::{FieldKind, FieldSpec, ParamVector};
pub use grid::{ExtendPolicy, ExtendedField, Field, GridHierarchy, GridLevel};
