//! Estimation of link travel times and platform waiting times in urban rail
//! networks from fare-collection (tap-in/tap-out) records.
//!
//! The pipeline: [`afc`] aggregates trip records into mean OD travel times
//! per entry interval; [`paths`] enumerates candidate routes on the
//! [`network`]; [`vectorize`] turns routes into a sparse incidence matrix over
//! the unknown times; [`estimator`] fits those times with a logit
//! route-choice forward pass and a frozen-probability gradient under
//! projected AdaGrad. [`completion`] fills missing OD cells beforehand and
//! [`synth`] generates synthetic networks and records with known truth.

pub mod afc;
pub mod completion;
pub mod error;
pub mod estimator;
pub mod network;
pub mod paths;
pub mod rng;
pub mod synth;
pub mod vectorize;

pub use error::{Error, Result};
