//! Small differentiable models over synthetic clustered data.
//!
//! Agents hold shards of class-conditional Gaussian blobs; every cluster sees
//! the same blobs rotated by its own angle. An agent's empirical
//! cross-entropy over its shard is exposed as an [`Objective`](crate::objectives::Objective).

mod data;
mod model;
mod sgd;

pub use data::{ClusteredDataset, DatasetManifest, DatasetSpec, Shard};
pub use model::{Architecture, EmpiricalLoss, Layer};
pub use sgd::{local_update, sgd_step};
