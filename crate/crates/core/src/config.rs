//! Cluster configuration, parsed from flat `key=value` text.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::ClusterError;
use crate::object_store::DEFAULT_CAPACITY;
use crate::runtime::{Tick, Timing, Topology, TICKS_PER_MS};
use crate::task::Resources;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulated,
    Process,
}

impl FromStr for Mode {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sim" | "simulated" => Ok(Mode::Simulated),
            "proc" | "process" => Ok(Mode::Process),
            other => Err(ClusterError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulated => "SIMULATED",
            Mode::Process => "PROCESS",
        })
    }
}

/// Per-node override of the cluster-wide defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeOverride {
    pub cpu: Option<u32>,
    pub gpu: Option<u32>,
    pub workers: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub num_nodes: u32,
    pub workers_per_node: u32,
    pub node_resources: Resources,
    pub node_overrides: BTreeMap<u32, NodeOverride>,
    pub num_control_shards: u32,
    pub num_global_schedulers: u32,
    /// `None` means twice the node's worker count.
    pub spillover_threshold: Option<usize>,
    pub mode: Mode,
    pub seed: u64,
    pub object_store_capacity_bytes: u64,
    /// First listening port in process mode; 0 lets the OS pick each port.
    pub base_port: u16,
    pub intra_node_latency: Tick,
    pub inter_node_latency: Tick,
    /// Simulated time a shard spends on each request; 0 means free.
    pub shard_service_ticks: Tick,
    pub heartbeat_period_ms: u64,
    pub heartbeat_timeout_ms: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            num_nodes: 1,
            workers_per_node: 4,
            node_resources: Resources::cpu(4),
            node_overrides: BTreeMap::new(),
            num_control_shards: 1,
            num_global_schedulers: 1,
            spillover_threshold: None,
            mode: Mode::Simulated,
            seed: 0,
            object_store_capacity_bytes: DEFAULT_CAPACITY,
            base_port: 0,
            intra_node_latency: 1,
            inter_node_latency: 10,
            shard_service_ticks: 0,
            heartbeat_period_ms: 100,
            heartbeat_timeout_ms: 500,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ClusterError> {
    v.parse().map_err(|_| ClusterError::InvalidConfig(format!("{key}: cannot parse {v:?}")))
}

impl ClusterConfig {
    pub fn simulated(num_nodes: u32) -> Self {
        ClusterConfig { num_nodes, ..Default::default() }
    }

    pub fn process(num_nodes: u32) -> Self {
        ClusterConfig { num_nodes, mode: Mode::Process, ..Default::default() }
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, ClusterError> {
        let mut cfg = ClusterConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ClusterError::InvalidConfig(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ClusterError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ClusterError> {
        match key {
            "num_nodes" => self.num_nodes = parse_num(key, v)?,
            "workers_per_node" => self.workers_per_node = parse_num(key, v)?,
            "node_resources.cpu" => self.node_resources.cpu = parse_num(key, v)?,
            "node_resources.gpu" => self.node_resources.gpu = parse_num(key, v)?,
            "num_control_shards" => self.num_control_shards = parse_num(key, v)?,
            "num_global_schedulers" => self.num_global_schedulers = parse_num(key, v)?,
            "spillover_threshold" => self.spillover_threshold = Some(parse_num(key, v)?),
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "object_store_capacity_bytes" => self.object_store_capacity_bytes = parse_num(key, v)?,
            "base_port" => self.base_port = parse_num(key, v)?,
            "intra_node_latency" => self.intra_node_latency = parse_num(key, v)?,
            "inter_node_latency" => self.inter_node_latency = parse_num(key, v)?,
            "shard_service_ticks" => self.shard_service_ticks = parse_num(key, v)?,
            "heartbeat_period_ms" => self.heartbeat_period_ms = parse_num(key, v)?,
            "heartbeat_timeout_ms" => self.heartbeat_timeout_ms = parse_num(key, v)?,
            other => {
                let parts: Vec<&str> = other.split('.').collect();
                match parts.as_slice() {
                    ["node", idx, field] => {
                        let idx: u32 = parse_num(key, idx)?;
                        let o = self.node_overrides.entry(idx).or_default();
                        match *field {
                            "cpu" => o.cpu = Some(parse_num(key, v)?),
                            "gpu" => o.gpu = Some(parse_num(key, v)?),
                            "workers" => o.workers = Some(parse_num(key, v)?),
                            _ => return Err(ClusterError::InvalidConfig(format!("unknown key {other:?}"))),
                        }
                    }
                    _ => return Err(ClusterError::InvalidConfig(format!("unknown key {other:?}"))),
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |m: &str| Err(ClusterError::InvalidConfig(m.to_owned()));
        if self.num_nodes == 0 {
            return bad("num_nodes must be at least 1");
        }
        if self.workers_per_node == 0 {
            return bad("workers_per_node must be at least 1");
        }
        if self.num_control_shards == 0 {
            return bad("num_control_shards must be at least 1");
        }
        if self.num_global_schedulers == 0 {
            return bad("num_global_schedulers must be at least 1");
        }
        if self.heartbeat_period_ms == 0 || self.heartbeat_timeout_ms < self.heartbeat_period_ms {
            return bad("heartbeat timeout must be at least one period");
        }
        for (idx, o) in &self.node_overrides {
            if *idx >= self.num_nodes {
                return bad(&format!("override for node {idx} but only {} nodes", self.num_nodes));
            }
            if o.workers == Some(0) {
                return bad(&format!("node {idx} needs at least one worker"));
            }
        }
        Ok(())
    }

    pub fn node_resources(&self, idx: u32) -> Resources {
        let o = self.node_overrides.get(&idx).copied().unwrap_or_default();
        Resources::new(o.cpu.unwrap_or(self.node_resources.cpu), o.gpu.unwrap_or(self.node_resources.gpu))
    }

    pub fn node_workers(&self, idx: u32) -> u32 {
        self.node_overrides.get(&idx).and_then(|o| o.workers).unwrap_or(self.workers_per_node)
    }

    pub fn spillover_threshold_for(&self, idx: u32) -> usize {
        self.spillover_threshold.unwrap_or(2 * self.node_workers(idx) as usize)
    }

    pub fn topology(&self) -> Topology {
        Topology {
            num_nodes: self.num_nodes,
            num_shards: self.num_control_shards,
            num_globals: self.num_global_schedulers,
        }
    }

    pub fn timing(&self) -> Timing {
        Timing {
            heartbeat_period: self.heartbeat_period_ms * TICKS_PER_MS,
            heartbeat_timeout: self.heartbeat_timeout_ms * TICKS_PER_MS,
            monitor_period: self.heartbeat_period_ms * TICKS_PER_MS,
        }
    }

    /// Renders the config back to `key=value` text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("num_nodes", self.num_nodes.to_string());
        kv("workers_per_node", self.workers_per_node.to_string());
        kv("node_resources.cpu", self.node_resources.cpu.to_string());
        kv("node_resources.gpu", self.node_resources.gpu.to_string());
        kv("num_control_shards", self.num_control_shards.to_string());
        kv("num_global_schedulers", self.num_global_schedulers.to_string());
        if let Some(t) = self.spillover_threshold {
            kv("spillover_threshold", t.to_string());
        }
        kv("mode", self.mode.to_string().to_lowercase());
        kv("seed", self.seed.to_string());
        kv("object_store_capacity_bytes", self.object_store_capacity_bytes.to_string());
        kv("base_port", self.base_port.to_string());
        kv("intra_node_latency", self.intra_node_latency.to_string());
        kv("inter_node_latency", self.inter_node_latency.to_string());
        kv("shard_service_ticks", self.shard_service_ticks.to_string());
        kv("heartbeat_period_ms", self.heartbeat_period_ms.to_string());
        kv("heartbeat_timeout_ms", self.heartbeat_timeout_ms.to_string());
        for (idx, o) in &self.node_overrides {
            if let Some(c) = o.cpu {
                kv(&format!("node.{idx}.cpu"), c.to_string());
            }
            if let Some(g) = o.gpu {
                kv(&format!("node.{idx}.gpu"), g.to_string());
            }
            if let Some(w) = o.workers {
                kv(&format!("node.{idx}.workers"), w.to_string());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let cfg = ClusterConfig::parse(
            "# two nodes\nnum_nodes=2\nworkers_per_node = 8\nnode_resources.cpu=8\nnode.1.gpu=1\nnode.1.cpu=0\nmode=proc\n",
        )
        .unwrap();
        assert_eq!(cfg.num_nodes, 2);
        assert_eq!(cfg.mode, Mode::Process);
        assert_eq!(cfg.node_resources(0), Resources::cpu(8));
        assert_eq!(cfg.node_resources(1), Resources::new(0, 1));
        assert_eq!(cfg.spillover_threshold_for(0), 16);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ClusterConfig::parse("num_nodes=0").is_err());
        assert!(ClusterConfig::parse("bogus=1").is_err());
        assert!(ClusterConfig::parse("num_nodes=x").is_err());
        assert!(ClusterConfig::parse("num_nodes").is_err());
        assert!(ClusterConfig::parse("node.3.cpu=1").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ClusterConfig::simulated(3);
        cfg.spillover_threshold = Some(5);
        cfg.node_overrides.insert(2, NodeOverride { cpu: None, gpu: Some(2), workers: Some(1) });
        assert_eq!(ClusterConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
