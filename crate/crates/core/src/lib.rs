//! Batch-aware coreset selection engine.
//!
//! Per training batch the engine stratifies samples by loss, allocates
//! per-stratum selection quotas by weighted sampling with normalized
//! exp(loss) probabilities, and fills each quota greedily so the minimum
//! pairwise L2 distance between per-sample gradient features is maximized.
//! Features are second-moment-preconditioned output-layer gradients. Four
//! baseline policies (random, online hard, CCS, InfoBatch) share the same
//! policy interface, and a FLOPs cost model accounts for the savings from
//! pruning the backward pass.

pub mod costmodel;
pub mod diversify;
pub mod error;
pub mod features;
pub mod io;
pub mod matrix;
pub mod rng;
pub mod selector;
pub mod stratify;

pub use error::{Result, SlapError};
pub use rng::{RandomStream, Xoshiro256PlusPlus};
