//! Projection-norm variable selection for sparse additive models.
//!
//! The crate is organised around the trigonometric spaces V_j ([`basis`]),
//! the population geometry of those spaces ([`geometry`]), the penalised
//! selection criterion ([`selection`]), concentration diagnostics and
//! explicit bounds ([`diagnostics`]), a seeded simulation harness
//! ([`simulate`]) and a split-sample component estimator ([`estimate`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod law;
pub mod linalg;
pub mod rng;
pub mod selection;
pub mod simulate;
pub mod subsets;

pub use error::{Error, Result};
