//! Round-based simulator for Byzantine-resilient gossip learning over
//! dynamic peer-sampled graphs.

pub mod adversary;
pub mod aggregation;
pub mod apt;
pub mod graph;
pub mod learning;
pub mod metrics;
pub mod model;
pub mod sampling;
pub mod sim;
