//! Monotone inclusions on R^d: resolvent-based solvers for Skorohod-type
//! problems, reflected and multivalued SDEs, backward variational inequalities
//! on binomial trees, and Fitzpatrick-function residuals to verify them.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backward_tree;
pub mod error;
pub mod fitzpatrick;
pub mod forward_sde;
pub mod gsp;
pub mod linalg;
pub mod operators;
pub mod paths;
pub mod variational;

pub use error::{Error, Result};
