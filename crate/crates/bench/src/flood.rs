//! Floods a cluster with empty tasks and measures completions per second.

use std::time::{Duration, Instant};

use dynflow::{ClusterConfig, Cluster, Mode, ObjectId, Resources};

use crate::BenchError;

/// Four nodes of eight workers in simulated mode, each control shard
/// spending `service_ticks` per request.
pub fn flood_config(shards: u32, service_ticks: u64) -> ClusterConfig {
    let mut cfg = ClusterConfig::simulated(4);
    cfg.workers_per_node = 8;
    cfg.node_resources = Resources::cpu(8);
    cfg.num_control_shards = shards;
    cfg.shard_service_ticks = service_ticks;
    cfg
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloodOutcome {
    pub tasks: usize,
    /// Driver-clock time from the first submission until the control plane
    /// recorded the last DONE.
    pub cluster_us: u64,
    /// Host time spent running the flood.
    pub host: Duration,
}

impl FloodOutcome {
    /// Completions per second of cluster time.
    pub fn throughput(&self) -> f64 {
        self.tasks as f64 / (self.cluster_us.max(1) as f64 / 1e6)
    }

    pub fn host_throughput(&self) -> f64 {
        self.tasks as f64 / self.host.as_secs_f64().max(1e-9)
    }
}

/// Submits `tasks` empty tasks, waits for every result, and reads back when
/// each completion was recorded.
pub fn run_flood(cluster: &Cluster, tasks: usize) -> Result<FloodOutcome, BenchError> {
    if tasks == 0 {
        return Err(BenchError::InvalidParameter("flood needs at least one task".into()));
    }
    let d = cluster.driver();
    let host = Instant::now();
    let start = d.now();
    let outs: Vec<ObjectId> = (0..tasks).map(|_| d.remote("empty", vec![])).collect::<Result<_, _>>()?;
    let timeout = match cluster.mode() {
        Mode::Simulated => None,
        Mode::Process => Some(Duration::from_secs(300)),
    };
    for chunk in outs.chunks(1024) {
        let (ready, _) = d.wait(chunk, chunk.len(), timeout)?;
        if ready.len() != chunk.len() {
            return Err(BenchError::Api(dynflow::ApiError::Timeout));
        }
    }
    let done: Vec<u64> = d.events()?.iter().filter(|e| e.transition == "DONE").map(|e| e.timestamp).collect();
    if done.len() != tasks {
        return Err(BenchError::Mismatch(format!("{} DONE records for {tasks} tasks", done.len())));
    }
    let last = done.into_iter().max().unwrap_or(start);
    Ok(FloodOutcome { tasks, cluster_us: last.saturating_sub(start), host: host.elapsed() })
}
