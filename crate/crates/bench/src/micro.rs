//! Latency microbenchmarks: task creation, retrieval of a finished result,
//! and end-to-end round trips to the local node and to a remote one.

use std::time::{Duration, Instant};

use dynflow::{Cluster, FunctionRegistry, Mode, NodeId, RemoteOptions, Resources, Value};

use crate::report::{BenchReport, Summary};
use crate::BenchError;

const WARMUP: usize = 200;
const T: Option<Duration> = Some(Duration::from_secs(30));

pub fn register(r: &mut FunctionRegistry) {
    r.register("empty", |_, _| Ok(vec![Value::List(vec![])]));
}

/// The first non-driver node that declares a gpu.
pub fn remote_target(cluster: &Cluster) -> Result<NodeId, BenchError> {
    let cfg = cluster.config();
    if cfg.num_nodes < 2 {
        return Err(BenchError::InsufficientNodes(cfg.num_nodes));
    }
    (1..cfg.num_nodes).find(|i| cfg.node_resources(*i).gpu >= 1).map(NodeId).ok_or(BenchError::NoGpuNode)
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

pub fn bench_micro(cluster: &Cluster, iterations: usize) -> Result<BenchReport, BenchError> {
    if iterations == 0 {
        return Err(BenchError::InvalidParameter("iterations must be at least 1".into()));
    }
    if cluster.mode() != Mode::Process {
        return Err(BenchError::InvalidParameter("micro needs a process-mode cluster".into()));
    }
    remote_target(cluster)?;
    let d = cluster.driver();
    let pinned = RemoteOptions::default().demand(Resources::new(0, 1));
    let mut creation = Vec::with_capacity(iterations);
    let mut retrieval = Vec::with_capacity(iterations);
    let mut local = Vec::with_capacity(iterations);
    let mut remote = Vec::with_capacity(iterations);
    for i in 0..WARMUP + iterations {
        let t = Instant::now();
        let o = d.remote("empty", vec![])?;
        let c = t.elapsed();
        d.wait(&[o], 1, T)?;
        let t = Instant::now();
        d.get(o, T)?;
        let g = t.elapsed();

        let t = Instant::now();
        let o = d.remote("empty", vec![])?;
        d.get(o, T)?;
        let l = t.elapsed();

        let t = Instant::now();
        let o = d.remote_with("empty", vec![], pinned)?[0];
        d.get(o, T)?;
        let r = t.elapsed();
        if i >= WARMUP {
            creation.push(micros(c));
            retrieval.push(micros(g));
            local.push(micros(l));
            remote.push(micros(r));
        }
    }
    let mut report = BenchReport::new("micro", cluster.config());
    report
        .add("creation", Summary::from_samples(&creation, "us"))
        .add("retrieval", Summary::from_samples(&retrieval, "us"))
        .add("local_round_trip", Summary::from_samples(&local, "us"))
        .add("remote_round_trip", Summary::from_samples(&remote, "us"));
    Ok(report)
}
