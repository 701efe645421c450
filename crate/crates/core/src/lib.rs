//! Numerical laboratory for the parabolic obstacle problem
//! `H u = f χ_{u>0}`, `u ≥ 0`, `∂t u ≥ 0` with `H = Δ − ∂t`.
//!
//! The crate solves the problem as a chain of linear complementarity
//! problems on structured space-time grids, instruments solutions with
//! Gaussian-weighted monotonicity functionals (H, D, W, φ, φ^γ),
//! classifies free-boundary points into regular and singular ones, and
//! estimates the parabolic box dimension of the singular set.

// validation guards use negated comparisons (`!(x > 0.0)`) on purpose:
// they must reject NaN, which plain `<=` would let through
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fixtures;
pub mod functionals;
pub mod mesh;
pub mod monitor;
pub mod pardim;
pub mod singular;
pub mod solver;

pub use error::Error;
pub use fixtures::{ClosedForm, PolyP};
pub use functionals::{CutoffSpec, FunctionalSample, GaussQuad};
pub use mesh::{ScalarField, SpaceTimeGrid, StencilField};
pub use monitor::{CheckReport, FunctionalTrace};
pub use pardim::{DimensionEstimate, ParPointSet};
pub use singular::{BlowupProfile, PointClass, QuadraticProfile};
pub use solver::{Scenario, SolveReport, SolvedField};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
