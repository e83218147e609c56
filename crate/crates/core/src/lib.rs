//! Causal action structure learning and causally reweighted planning for
//! two-agent cooperative cooking.
//!
//! Pipeline: collect trajectories in the [`kitchen`] simulator, factorize
//! them with a [`schema::FeatureSchema`], fit the gated per-action networks
//! in [`sca`], distill the learned gates into a [`matrix::CausalActionMatrix`],
//! and let [`planner`] use that matrix to reweight (or replace) the candidate
//! actions produced by a [`proposer`].

pub mod error;
pub mod harness;
pub mod kitchen;
pub mod matrix;
pub mod oracle;
pub mod planner;
pub mod policy;
pub mod proposer;
pub mod sca;
pub mod schema;
pub mod seed;
pub mod trajectory;

pub use error::{Error, Result};
