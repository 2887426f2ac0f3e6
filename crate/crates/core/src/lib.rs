//! Schema-driven synthetic tabular data generation and evaluation.
//!
//! The crate is organized around a typed table model ([`schema`]) consumed by
//! four pillars:
//!
//! - [`generate`]: the four conditioning strategies (naive, schema-constrained,
//!   conditional, group-based) over a pluggable backend, including a
//!   deterministic offline statistical reference backend.
//! - [`fidelity`]: per-feature KL divergence between real and synthetic data,
//!   with per-group breakdowns.
//! - [`utility`]: a from-scratch gradient-boosted tree classifier plus
//!   AUROC/AUPRC with bootstrap intervals, for within-dataset and
//!   train-on-synthetic/test-on-real evaluation.
//! - [`privacy`]: membership inference attacks against models trained on
//!   synthetic data.
//!
//! [`llm`] talks to remote text-generation endpoints and turns their output
//! into validated rows; [`harness`] orchestrates declarative experiment
//! sweeps over all of the above; [`sim`] builds simulated ground-truth
//! datasets for offline benchmarking.

pub mod fidelity;
pub mod generate;
pub mod harness;
pub mod llm;
pub mod privacy;
pub mod schema;
pub mod sim;
pub mod utility;
