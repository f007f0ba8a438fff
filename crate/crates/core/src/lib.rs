//! Numerical laboratory for the limiting QuickSort comparison-count distribution.
//!
//! The crate computes the limit density `f` of `Z = lim (X_n - E X_n) / n` by
//! iterating its integral equation on a uniform grid, simulates the finite-`n`
//! comparison count, and checks explicit tail inequalities, derivative bounds
//! and moment identities against the computed density.
//!
//! Module map:
//!
//! * [`toll`] and [`moments`]: the toll function `g`, limit constants, exact
//!   finite-`n` moments.
//! * [`sim`]: Monte Carlo sampling of `X_n`, `Z_n` and of the fixed-point tree.
//! * [`density`]: the [`DensityGrid`] substrate (integration, CDF, minima,
//!   derivatives, tail sup norms).
//! * [`solver`]: fixed-point iteration of the integral operator.
//! * [`tails`]: tail lemma instantiation and envelope fits.
//! * [`deriv`]: Landau-Kolmogorov checks, characteristic function and
//!   derivative bounds.
//! * [`report`]: configuration, pipeline orchestration and report files.

// `!(x > 0.0)` style guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod deriv;
pub mod error;
pub mod moments;
pub mod quadrature;
pub mod report;
pub mod sim;
pub mod solver;
pub mod stats;
pub mod tails;
pub mod toll;

pub use density::{DensityGrid, GridMeta, NormProfile, Side};
pub use error::{Error, Result};
pub use moments::MomentTable;
pub use sim::SampleSet;
pub use solver::SolverConfig;
pub use tails::LemmaReport;
pub use toll::Constants;
