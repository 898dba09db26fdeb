//! First hitting times of finite-state continuous-time Markov chains.
//!
//! Joint densities, tail and equality probabilities of the times at which a
//! chain first enters each of several target sets, plus a path simulator to
//! check them against.

// NaN must fail range checks, so `!(x >= y)` is intended
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// quadrature nodes and Padé constants are kept as published
#![allow(clippy::excessive_precision)]

pub mod cli;
pub mod error;
pub mod expmat;
pub mod fixtures;
pub mod hitting;
pub mod mcore;
pub mod modelfile;
pub mod partitions;
pub mod simkit;
pub mod tails;

pub use error::{Error, Result};
