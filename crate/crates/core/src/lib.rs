//! Safe batch policy improvement with diverse candidate generation.
//!
//! The library iteratively deploys a set of confirmed policies, evaluates
//! freshly learned candidates off-policy with importance sampling and
//! one-sided lower confidence bounds, controls the false discovery rate
//! across the candidate batch, and only ever replaces the deployed set
//! with candidates certified to beat the current performance baseline.
//! Alongside the loop live the benchmark domains, the batch learners, a
//! numeric laboratory for the sample-allocation theory, and the experiment
//! harness behind the `de-harness` binary.

pub mod env;
pub mod error;
pub mod exec;
pub mod harness;
pub mod improve;
pub mod learn;
pub mod mdp;
pub mod ope;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
