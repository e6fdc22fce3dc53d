//! Parabolic Anderson model with Pareto potential on critical Galton-Watson
//! trees conditioned to survive.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod gw_tree;
pub mod pam_solver;
pub mod potential;
pub mod rng;
pub mod rw_sim;
pub mod scales;
pub mod spectral;

pub use error::{Error, Result};
