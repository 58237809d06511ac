//! Amortised inference for binary Bayesian networks.
//!
//! A single feed-forward network (the universal marginalizer) is trained on
//! masked ancestral samples to predict every node's posterior marginal under
//! arbitrary evidence. Its outputs then drive importance-sampling proposals:
//! sequentially, one network call per node, or as a hybrid mixture with the
//! network's own conditionals. An exact enumeration oracle provides ground
//! truth on small networks.
//!
//! Module map:
//! - [`bn`]: networks, CPTs, ancestral sampling, JSON format
//! - [`exact`]: exact posteriors and conditionals by enumeration
//! - [`dataset`]: masking, input encodings, training batches
//! - [`um`]: the network, its training loop and model files
//! - [`proposals`]: importance-sampling engines and effective sample size
//! - [`harness`]: metrics, test sets and experiment sweeps

pub mod bn;
pub mod dataset;
pub mod error;
pub mod exact;
pub mod harness;
pub mod io_util;
pub mod parallel;
pub mod proposals;
pub mod rng;
pub mod um;

pub use bn::{BayesianNetwork, FullAssignment, NodeId, NodeState, PartialState};
pub use error::{Error, Result};
pub use exact::MarginalVector;
pub use parallel::Workers;
