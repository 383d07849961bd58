//! Large deviations for occupation times of finite Markov chains with killing.
//!
//! The crate is organised around a validated generator type, [`QMatrix`], and
//! the computations built on it:
//!
//! - [`nlsolver`]: the positive nonlinear system with rational terms and its
//!   use for diagonal balancing of a generator against a positive weight.
//! - [`tilt`]: exponentially tilted (conservative) generators and the path
//!   weights that relate them to the killed chain.
//! - [`rate`]: the occupation-measure rate function `I(mu)` by three routes,
//!   and the variational formula for the survival exponent.
//! - [`simulate`]: path sampling, occupation measures and Monte Carlo
//!   estimates checked against exact semigroup values.
//! - [`cli`]: the `ldp` command line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > y)` deliberately rejects NaN
#![allow(clippy::needless_range_loop)] // index loops mirror the formulas they implement

pub mod cli;
pub mod error;
pub mod instances;
pub mod nlsolver;
pub mod qcore;
pub mod rate;
pub mod selfcheck;
pub mod simulate;
pub mod tilt;

pub use error::{Error, Result};
pub use qcore::{
    expm_apply, principal_eigenvalue, stationary_distribution, validate_q_matrix, Generator, PositiveVector,
    ProbabilityMeasure, QMatrix,
};
