#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Learning binary decision trees by differentiating through a relaxed
//! traversal-and-pruning quadratic program.

pub mod cluster;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod oracles;
pub mod rewards;
pub mod solver;
pub mod studies;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
pub use tree::{NodeId, TreeTopology};
