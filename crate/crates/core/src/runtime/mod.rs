//! The seam between component logic and the two transports. Every component
//! is a message handler over [`Env`]; the simulated and process runtimes
//! differ only in how they implement it.

pub mod process;
pub mod sim;

use crate::control::shard_of;
use crate::ids::{NodeId, ObjectId, TaskId};
use crate::message::{Addr, Message};
use crate::task::TaskSpec;
use crate::value::Value;

/// Simulated clock unit. One tick is one microsecond in both modes.
pub type Tick = u64;

pub const TICKS_PER_MS: Tick = 1_000;
pub const TICKS_PER_SEC: Tick = 1_000_000;

/// A task handed to a worker, with its arguments already resolved.
#[derive(Debug, Clone)]
pub struct Job {
    pub worker: u32,
    pub epoch: u64,
    pub spec: TaskSpec,
    pub args: Vec<Value>,
}

pub trait Env {
    fn now(&self) -> Tick;
    fn me(&self) -> Addr;
    fn send(&mut self, to: Addr, msg: Message);
    /// Delivers `msg` back to this component after `delay` ticks.
    fn timer(&mut self, delay: Tick, msg: Message);
    /// Runs a job on one of this node's workers. Completion arrives as a
    /// `TaskFinished` message.
    fn execute(&mut self, job: Job);
}

pub trait Component: Send {
    fn start(&mut self, env: &mut dyn Env);
    fn handle(&mut self, from: Addr, msg: Message, env: &mut dyn Env);
}

/// Fixed cluster shape every component needs for routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub num_nodes: u32,
    pub num_shards: u32,
    pub num_globals: u32,
}

impl Topology {
    pub fn shard_for(&self, key: &[u8; 16]) -> Addr {
        Addr::Shard(shard_of(key, self.num_shards))
    }

    pub fn task_shard(&self, id: &TaskId) -> Addr {
        self.shard_for(&id.0)
    }

    pub fn object_shard(&self, id: &ObjectId) -> Addr {
        self.shard_for(&id.0)
    }

    /// The global scheduler instance that owns a spilled task.
    pub fn global_for_task(&self, id: &TaskId) -> Addr {
        Addr::Global(shard_of(&id.0, self.num_globals))
    }

    pub fn global_for_object(&self, id: &ObjectId) -> Addr {
        Addr::Global(shard_of(&id.0, self.num_globals))
    }

    /// The global scheduler that handles a node's death.
    pub fn global_for_node(&self, node: NodeId) -> u32 {
        node.0 % self.num_globals
    }

    pub fn shards(&self) -> impl Iterator<Item = Addr> {
        (0..self.num_shards).map(Addr::Shard)
    }

    pub fn globals(&self) -> impl Iterator<Item = Addr> {
        (0..self.num_globals).map(Addr::Global)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.num_nodes).map(NodeId)
    }
}

/// Failure-detector and heartbeat periods, in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub heartbeat_period: Tick,
    pub heartbeat_timeout: Tick,
    pub monitor_period: Tick,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { heartbeat_period: 100 * TICKS_PER_MS, heartbeat_timeout: 500 * TICKS_PER_MS, monitor_period: 100 * TICKS_PER_MS }
    }
}
