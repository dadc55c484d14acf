//! Slow-fast systems with a turning point at the axis: simulation in the
//! exponential lens, C-trajectories, and the two-patch inflation model.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod approx;
pub mod ctraj;
pub mod katriel;
pub mod ode;
pub mod par;
pub mod piecewise;
pub mod props;
pub mod quad;
pub mod sim;

pub use piecewise::{PiecewiseFunction, SignChange};
