//! Critical bond percolation on the square lattice.
//!
//! The crate builds discrete Dobrushin domains, samples bond configurations,
//! traces the exploration path through the medial lattice and estimates the
//! parafermionic observable attached to it. Around that core sit arm-event
//! estimators, random-walk and Dirichlet tools for the continuum comparison,
//! and a Loewner toolkit for extracting driving functions from curves.

pub mod arms;
pub mod exploration;
pub mod harmonic;
pub mod lattice;
pub mod loewner;
pub mod observables;
pub mod percolation;
pub mod rng;
pub mod stats;

mod error;
mod unionfind;

pub use error::{Error, Result};
pub use num_complex::Complex64;
