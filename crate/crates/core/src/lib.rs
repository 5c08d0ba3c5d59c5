// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeffs;
pub mod app;
pub mod config;
pub mod density;
pub mod error;
pub mod fourier;
pub mod grid;
pub mod kernel;
pub mod malliavin;
pub mod noise;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod stats;
pub mod taylor;

pub use error::{Error, Result};
