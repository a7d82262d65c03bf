//! Adaptive auxiliary-loss weighting for transfer learning on graph neural
//! networks.
//!
//! A GNN encoder is trained jointly on a target task and `K` self-supervised
//! auxiliary tasks. Each task's loss is scaled by a weight produced by a small
//! weighting network that looks at the cosine similarity between the task's
//! gradient and the target gradient (over shared encoder parameters), the raw
//! loss value and a learned task-type embedding. The weighting network is
//! itself trained by a one-step look-ahead: it is moved so that a virtual
//! gradient step on the weighted joint loss lowers the target loss on held-out
//! target data.

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod record;
pub mod tasks;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
