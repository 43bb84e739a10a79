//! Desk-scale on-policy training simulator.
//!
//! A linear softmax model over synthetic clustered data produces real losses
//! and output-layer gradients every step; a selection policy prunes each
//! batch before the gradient update. Comparing policies across keep rates
//! and seeds reproduces the directional behavior of batch pruning at toy
//! scale.

pub mod compare;
pub mod dataset;
pub mod model;
pub mod plot;
pub mod train;
