//! Out-of-distribution node classification on graphs.
//!
//! The pipeline has three stages:
//!
//! 1. [`attr`]: disentangle node attributes into semantic and variation
//!    factors and resample the variation factor to synthesize new attribute
//!    distributions.
//! 2. [`topo`]: edit edges with `K` softmax policies trained by REINFORCE to
//!    maximize the variance of per-graph losses.
//! 3. [`train`]: fit a GCN classifier by minimizing the variance plus a
//!    weighted mean of per-domain risks.
//!
//! [`harness`] wires these into a leave-one-domain-out experiment runner.

pub mod attr;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod harness;
pub mod instrument;
pub mod nn;
pub mod rng;
pub mod topo;
pub mod train;

pub use error::{Error, Result};
