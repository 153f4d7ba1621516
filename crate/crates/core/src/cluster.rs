//! Assembles shards, global schedulers, and nodes into a running cluster
//! over either transport, and exposes the driver and fault-injection hooks.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::config::{ClusterConfig, Mode};
use crate::control::Shard;
use crate::driver::{Backend, Driver, DriverShared};
use crate::error::{ApiError, ClusterError};
use crate::global_scheduler::GlobalScheduler;
use crate::ids::{NodeId, ObjectId};
use crate::message::{Addr, ComponentKind, Message};
use crate::node::{Node, NodeConfig};
use crate::object_store::ObjectStore;
use crate::runtime::process::{EndpointSpec, ProcessRuntime};
use crate::runtime::sim::{Latency, Sim, SimBackend};
use crate::runtime::Tick;
use crate::worker::FunctionRegistry;

enum Transport {
    Sim(Arc<Mutex<Sim>>),
    Process(Arc<ProcessRuntime>),
}

/// Message counts and clock of a simulated run.
#[derive(Debug, Clone, Default)]
pub struct SimStats {
    pub now: Tick,
    pub tasks_executed: u64,
    pub delivered: BTreeMap<(Addr, &'static str), u64>,
}

impl SimStats {
    pub fn count(&self, to: Addr, label: &str) -> u64 {
        self.delivered.iter().filter(|((a, l), _)| *a == to && *l == label).map(|(_, n)| n).sum()
    }
}

pub struct Cluster {
    cfg: ClusterConfig,
    transport: Transport,
    driver: Driver,
    stores: BTreeMap<NodeId, Arc<ObjectStore>>,
    down: AtomicBool,
}

impl Cluster {
    pub fn start(cfg: ClusterConfig, registry: FunctionRegistry) -> Result<Cluster, ClusterError> {
        cfg.validate()?;
        let registry = Arc::new(registry);
        let topo = cfg.topology();
        let timing = cfg.timing();
        let shared = Arc::new(DriverShared::default());
        let mut stores = BTreeMap::new();
        let mut endpoints: Vec<EndpointSpec> = Vec::new();
        for i in 0..cfg.num_control_shards {
            endpoints.push(EndpointSpec { addr: Addr::Shard(i), component: Box::new(Shard::new(i, topo.num_shards)), workers: 0 });
        }
        for i in 0..cfg.num_global_schedulers {
            endpoints.push(EndpointSpec {
                addr: Addr::Global(i),
                component: Box::new(GlobalScheduler::new(i, topo, timing)),
                workers: 0,
            });
        }
        for n in topo.nodes() {
            let store = Arc::new(ObjectStore::new(cfg.object_store_capacity_bytes));
            stores.insert(n, store.clone());
            let workers = cfg.node_workers(n.0);
            let node = Node::new(
                NodeConfig {
                    id: n,
                    workers,
                    resources: cfg.node_resources(n.0),
                    spillover_threshold: cfg.spillover_threshold_for(n.0),
                    topology: topo,
                    timing,
                },
                store,
            );
            endpoints.push(EndpointSpec { addr: Addr::Node(n), component: Box::new(node), workers });
        }

        let (transport, backend): (Transport, Arc<dyn Backend>) = match cfg.mode {
            Mode::Simulated => {
                let latency = Latency { intra: cfg.intra_node_latency, inter: cfg.inter_node_latency };
                let mut sim = Sim::new(registry.clone(), shared.clone(), latency, cfg.shard_service_ticks);
                for e in endpoints {
                    sim.add(e.addr, e.component);
                }
                let sim = Arc::new(Mutex::new(sim));
                (Transport::Sim(sim.clone()), Arc::new(SimBackend::new(sim, shared)))
            }
            Mode::Process => {
                let rt = Arc::new(ProcessRuntime::start(endpoints, registry.clone(), shared, Addr::Driver(0), cfg.base_port)?);
                (Transport::Process(rt.clone()), rt)
            }
        };
        let driver = Driver::new(backend, registry, topo, cfg.seed);
        Ok(Cluster { cfg, transport, driver, stores, down: AtomicBool::new(false) })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn store(&self, node: NodeId) -> Option<&Arc<ObjectStore>> {
        self.stores.get(&node)
    }

    fn control(&self, to: Addr, msg: Message) -> Result<(), ClusterError> {
        match &self.transport {
            Transport::Sim(sim) => {
                sim.lock().inject(Addr::Driver(0), to, msg);
                Ok(())
            }
            Transport::Process(rt) => Ok(rt.send(Addr::Driver(0), to, msg)?),
        }
    }

    fn check_node(&self, node: NodeId) -> Result<(), ClusterError> {
        if node.0 >= self.cfg.num_nodes {
            return Err(ApiError::InvalidArgument(format!("no such node {node}")).into());
        }
        Ok(())
    }

    /// Kills a node: its scheduler, workers, and object store vanish at once.
    /// Node 0 hosts the driver and cannot be killed.
    pub fn kill_node(&self, node: NodeId) -> Result<(), ClusterError> {
        self.check_node(node)?;
        if node.0 == 0 {
            return Err(ApiError::InvalidArgument("node 0 hosts the driver".into()).into());
        }
        match &self.transport {
            Transport::Sim(sim) => sim.lock().kill(Addr::Node(node)),
            Transport::Process(rt) => rt.kill(Addr::Node(node)),
        }
        self.stores[&node].clear();
        Ok(())
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        match &self.transport {
            Transport::Sim(sim) => sim.lock().is_alive(Addr::Node(node)),
            Transport::Process(rt) => rt.is_alive(Addr::Node(node)),
        }
    }

    /// Restarts a stateless component. `index` is the node id for workers
    /// and local schedulers and the instance index for global schedulers.
    pub fn restart_component(&self, kind: ComponentKind, index: u32, worker: u32) -> Result<(), ClusterError> {
        let to = match kind {
            ComponentKind::GlobalScheduler => {
                if index >= self.cfg.num_global_schedulers {
                    return Err(ApiError::InvalidArgument(format!("no global scheduler {index}")).into());
                }
                Addr::Global(index)
            }
            ComponentKind::Worker | ComponentKind::LocalScheduler => {
                self.check_node(NodeId(index))?;
                Addr::Node(NodeId(index))
            }
        };
        self.control(to, Message::Restart { kind, worker })
    }

    /// Deletes one copy of an object from a node's store.
    pub fn drop_object(&self, object: ObjectId, node: NodeId) -> Result<(), ClusterError> {
        self.check_node(node)?;
        self.control(Addr::Node(node), Message::DropObject { object })
    }

    /// Runs `f` against the simulator. `None` in process mode.
    pub fn with_sim<R>(&self, f: impl FnOnce(&mut Sim) -> R) -> Option<R> {
        match &self.transport {
            Transport::Sim(sim) => Some(f(&mut sim.lock())),
            Transport::Process(_) => None,
        }
    }

    pub fn sim_stats(&self) -> Option<SimStats> {
        self.with_sim(|s| SimStats { now: s.now(), tasks_executed: s.tasks_executed(), delivered: s.delivered().clone() })
    }

    /// Stops everything. Idempotent.
    pub fn shutdown(&self) {
        if self.down.swap(true, Ordering::SeqCst) {
            return;
        }
        if let Transport::Process(rt) = &self.transport {
            rt.shutdown();
        }
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        self.shutdown();
    }
}
