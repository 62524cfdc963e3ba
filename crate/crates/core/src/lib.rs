//! Bayesian nonparametric species sensitivity distributions.
//!
//! The crate covers the full estimation pipeline for a single contaminant and
//! the cross-contaminant post-processing:
//!
//! * [`data_model`] reads concentration records, aggregates replicate values
//!   per species and standardizes the log concentrations.
//! * [`nrmi_mixture`] samples the posterior of a normalized stable process
//!   mixture of normals, with left, right and interval censoring.
//! * [`baselines`] holds the normal and kernel density comparison models.
//! * [`risk_metrics`] turns chains and fits into HC5 summaries, CPO/LOO
//!   values, and runs the simulation study.
//! * [`clustering`] estimates a partition of the species from the posterior.
//! * [`tensor_factorization`] stacks per-contaminant partitions into an
//!   association tensor and factorizes it with masked non-negative PARAFAC.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod clustering;
pub mod data_model;
pub mod error;
pub mod nrmi_mixture;
pub mod risk_metrics;
pub mod special;
pub mod tensor_factorization;

pub use error::{Error, Result};
