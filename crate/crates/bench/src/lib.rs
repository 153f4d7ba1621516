//! Workloads and measurement harness for dynflow clusters: latency
//! microbenchmarks, an RL-style simulate/policy loop, a dynamic tree search,
//! a task flood, and random DAGs, each with a single-threaded reference.

pub mod dag;
pub mod flood;
pub mod micro;
pub mod report;
pub mod rl;
pub mod tree;

use dynflow::{ApiError, ClusterError, FunctionRegistry};
use thiserror::Error;

pub use report::{BenchReport, Summary};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("need at least 2 nodes, cluster has {0}")]
    InsufficientNodes(u32),
    #[error("no node other than node 0 declares a gpu")]
    NoGpuNode,
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("result mismatch: {0}")]
    Mismatch(String),
}

impl BenchError {
    /// 2 for bad parameters, 3 for anything the cluster did.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::InvalidParameter(_) | BenchError::InsufficientNodes(_) | BenchError::NoGpuNode => 2,
            BenchError::Api(ApiError::InvalidArgument(_)) => 2,
            _ => 3,
        }
    }
}

/// Every kernel the workloads use.
pub fn registry() -> FunctionRegistry {
    let mut r = FunctionRegistry::new();
    micro::register(&mut r);
    rl::register(&mut r);
    tree::register(&mut r);
    dag::register(&mut r);
    r
}

/// A 64-bit mixer, used wherever a workload needs a deterministic score.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
