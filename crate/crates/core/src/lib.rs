//! Mean-parametrized Conway-Maxwell-Poisson distributions and regression models
//! for over- and underdispersed counts.
// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod distribution;
pub mod fit;
pub mod inference;
pub mod io;
pub mod simulate;
pub mod special;
