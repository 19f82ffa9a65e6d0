//! Reference, vacuum and scattering-limit covariances for the Klein-Gordon equation
//! on 1+1 dimensional asymptotically static spacetimes with circular Cauchy surface.

extern crate ndarray_linalg;

pub mod basis;
pub mod config;
pub mod diagonalization;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod linalg;
pub mod microlocal;
pub mod operator;
pub mod pipeline;
pub mod report;
pub mod riccati;
pub mod scenarios;
pub mod states;

pub use error::{Error, Result};
