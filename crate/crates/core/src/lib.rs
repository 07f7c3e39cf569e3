//! Cascade reconstruction across chat groups, estimation of complete-cascade
//! breadth and depth from sparse samples, and downstream statistics.

pub mod impact;
pub mod ingest;
pub mod model;
pub mod netsim;
pub mod pipeline;
pub mod reconstruct;
pub mod rng;
pub mod stats;
pub mod treefit;
