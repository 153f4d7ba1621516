//! Cluster-level placement of spilled tasks, node failure detection, and
//! reconstruction of lost objects.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use crate::control::{ObjectTableEntry, TaskTableEntry};
use crate::fault::ReconstructionTracker;
use crate::ids::{NodeId, ObjectId, TaskId};
use crate::message::{Addr, ComponentKind, Message, Table, TimerKind};
use crate::runtime::{Component, Env, Tick, Timing, Topology};
use crate::task::{Resources, StateKind, TaskSpec, TaskState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeView {
    pub total: Resources,
    pub available: Resources,
    pub queue_len: u32,
    pub last_heartbeat: Tick,
    /// Set when a send to the node failed; cleared by its next heartbeat.
    pub unreachable: bool,
}

/// What one global scheduler believes about the nodes. Advisory only.
#[derive(Debug, Clone, Default)]
pub struct ClusterView {
    nodes: BTreeMap<NodeId, NodeView>,
    timeout: Tick,
}

impl ClusterView {
    pub fn new(timeout: Tick) -> Self {
        ClusterView { nodes: BTreeMap::new(), timeout }
    }

    pub fn heartbeat(&mut self, node: NodeId, total: Resources, available: Resources, queue_len: u32, now: Tick) {
        self.nodes.insert(node, NodeView { total, available, queue_len, last_heartbeat: now, unreachable: false });
    }

    pub fn get(&self, node: NodeId) -> Option<&NodeView> {
        self.nodes.get(&node)
    }

    pub fn is_live(&self, node: NodeId, now: Tick) -> bool {
        self.nodes.get(&node).is_some_and(|v| !v.unreachable && now.saturating_sub(v.last_heartbeat) <= self.timeout)
    }

    pub fn mark_unreachable(&mut self, node: NodeId) {
        if let Some(v) = self.nodes.get_mut(&node) {
            v.unreachable = true;
        }
    }

    pub fn dead_nodes(&self, now: Tick) -> Vec<NodeId> {
        self.nodes.keys().copied().filter(|n| !self.is_live(*n, now)).collect()
    }

    pub fn note_placement(&mut self, node: NodeId) {
        if let Some(v) = self.nodes.get_mut(&node) {
            v.queue_len = v.queue_len.saturating_add(1);
        }
    }

    /// Picks a node for `demand`: among live nodes whose total covers it,
    /// the one holding the most argument bytes, then the shortest queue,
    /// then the smallest id.
    pub fn place(&self, demand: &Resources, locality: &BTreeMap<NodeId, u64>, now: Tick) -> Option<NodeId> {
        self.nodes
            .iter()
            .filter(|(n, v)| self.is_live(**n, now) && demand.fits_in(&v.total))
            .max_by_key(|(n, v)| (locality.get(n).copied().unwrap_or(0), Reverse(v.queue_len), Reverse(**n)))
            .map(|(n, _)| *n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlaceKind {
    /// Newly spilled: take ownership by writing SPILLED first.
    Spill,
    /// Already SPILLED and owned here: just (re)send a placement.
    Replace,
    /// LOST: hand back to a node as a fresh submission.
    Resubmit,
}

#[derive(Debug)]
struct PlaceJob {
    spec: TaskSpec,
    kind: PlaceKind,
    outstanding: usize,
    locality: BTreeMap<NodeId, u64>,
}

#[derive(Debug)]
enum Pending {
    Locality(u64),
    SpillAck { spec: TaskSpec, target: Option<NodeId> },
    NodeDown,
    ReplaceCheck,
    ReconObject(ObjectId),
    ReconTask(ObjectId),
    ReconLost(ObjectId, TaskSpec),
    Recover,
}

pub struct GlobalScheduler {
    index: u32,
    topo: Topology,
    timing: Timing,
    view: ClusterView,
    jobs: BTreeMap<u64, PlaceJob>,
    parked: Vec<(TaskSpec, PlaceKind)>,
    placed_to: BTreeMap<TaskId, NodeId>,
    down: BTreeSet<NodeId>,
    recon: ReconstructionTracker,
    pending: BTreeMap<u64, Pending>,
    next_req: u64,
}

impl GlobalScheduler {
    pub fn new(index: u32, topo: Topology, timing: Timing) -> Self {
        GlobalScheduler {
            index,
            topo,
            timing,
            view: ClusterView::new(timing.heartbeat_timeout),
            jobs: BTreeMap::new(),
            parked: Vec::new(),
            placed_to: BTreeMap::new(),
            down: BTreeSet::new(),
            recon: ReconstructionTracker::default(),
            pending: BTreeMap::new(),
            next_req: 1,
        }
    }

    pub fn view(&self) -> &ClusterView {
        &self.view
    }

    fn req(&mut self, p: Pending) -> u64 {
        let r = self.next_req;
        self.next_req += 1;
        self.pending.insert(r, p);
        r
    }

    fn me(&self) -> Addr {
        Addr::Global(self.index)
    }

    // ---- placement -------------------------------------------------------

    fn begin_place(&mut self, env: &mut dyn Env, spec: TaskSpec, kind: PlaceKind) {
        let mut args: Vec<ObjectId> = spec.future_args().collect();
        args.sort();
        args.dedup();
        let job_id = self.next_req;
        self.next_req += 1;
        let job = PlaceJob { spec, kind, outstanding: args.len(), locality: BTreeMap::new() };
        if args.is_empty() {
            self.finish_place(env, job);
            return;
        }
        self.jobs.insert(job_id, job);
        for o in args {
            let req = self.req(Pending::Locality(job_id));
            env.send(self.topo.object_shard(&o), Message::Read { req, table: Table::Object, key: o.0 });
        }
    }

    fn on_locality(&mut self, env: &mut dyn Env, job_id: u64, entry: Option<ObjectTableEntry>) {
        let Some(job) = self.jobs.get_mut(&job_id) else { return };
        if let Some(e) = entry {
            for n in &e.locations {
                *job.locality.entry(*n).or_default() += e.size_bytes;
            }
        }
        job.outstanding -= 1;
        if job.outstanding == 0 {
            let job = self.jobs.remove(&job_id).expect("present");
            self.finish_place(env, job);
        }
    }

    fn finish_place(&mut self, env: &mut dyn Env, job: PlaceJob) {
        let now = env.now();
        let target = self.view.place(&job.spec.resource_demand, &job.locality, now);
        let id = job.spec.task_id;
        match (job.kind, target) {
            (PlaceKind::Spill, target) => {
                let req = self.req(Pending::SpillAck { spec: job.spec, target });
                env.send(
                    self.topo.task_shard(&id),
                    Message::UpdateState { req, task: id, state: TaskState::Spilled, node: target },
                );
                if let Some(n) = target {
                    self.view.note_placement(n);
                }
            }
            (PlaceKind::Replace, Some(n)) => {
                env.send(
                    self.topo.task_shard(&id),
                    Message::UpdateState { req: 0, task: id, state: TaskState::Spilled, node: Some(n) },
                );
                self.send_placement(env, job.spec, n);
            }
            (PlaceKind::Resubmit, Some(n)) => {
                self.view.note_placement(n);
                log::debug!("{}: resubmitting {id:?} to {n}", self.me());
                env.send(Addr::Node(n), Message::Submit { spec: job.spec });
            }
            (kind, None) => {
                log::debug!("{}: no feasible live node for {id:?}; parking", self.me());
                self.parked.push((job.spec, kind));
            }
        }
    }

    fn send_placement(&mut self, env: &mut dyn Env, spec: TaskSpec, n: NodeId) {
        self.view.note_placement(n);
        self.placed_to.insert(spec.task_id, n);
        env.send(Addr::Node(n), Message::Placement { spec, non_spillable: true });
    }

    fn retry_parked(&mut self, env: &mut dyn Env) {
        if self.parked.is_empty() {
            return;
        }
        for (spec, kind) in std::mem::take(&mut self.parked) {
            // a parked spill already owns the task
            let kind = if kind == PlaceKind::Spill { PlaceKind::Replace } else { kind };
            self.begin_place(env, spec, kind);
        }
    }

    // ---- failure handling ------------------------------------------------

    fn monitor(&mut self, env: &mut dyn Env) {
        let now = env.now();
        for n in self.view.dead_nodes(now) {
            if self.down.insert(n) {
                self.on_node_death(env, n);
            }
        }
    }

    fn on_node_death(&mut self, env: &mut dyn Env, n: NodeId) {
        log::info!("{}: {n} declared dead", self.me());
        if self.topo.global_for_node(n) == self.index {
            for shard in self.topo.shards() {
                let req = self.req(Pending::NodeDown);
                env.send(shard, Message::NodeDown { req, node: n });
            }
        }
        let placed: Vec<TaskId> = self.placed_to.iter().filter(|(_, t)| **t == n).map(|(id, _)| *id).collect();
        for id in placed {
            self.placed_to.remove(&id);
            let req = self.req(Pending::ReplaceCheck);
            env.send(self.topo.task_shard(&id), Message::Read { req, table: Table::Task, key: id.0 });
        }
    }

    fn on_reconstruct(&mut self, env: &mut dyn Env, from: Addr, o: ObjectId) {
        if !self.recon.begin(o, from) {
            return;
        }
        let req = self.req(Pending::ReconObject(o));
        env.send(self.topo.object_shard(&o), Message::Read { req, table: Table::Object, key: o.0 });
    }

    fn on_recon_object(&mut self, env: &mut dyn Env, o: ObjectId, entry: Option<ObjectTableEntry>) {
        let Some(entry) = entry else {
            self.recon.finish(o);
            return;
        };
        if !entry.locations.is_empty() {
            self.recon.finish(o);
            return;
        }
        match entry.creating_task {
            None => {
                let reason = format!("{o} was put by a driver and has no lineage");
                for who in self.recon.finish(o) {
                    env.send(who, Message::ReconstructFailed { object: o, reason: reason.clone() });
                }
            }
            Some(t) => {
                let req = self.req(Pending::ReconTask(o));
                env.send(self.topo.task_shard(&t), Message::Read { req, table: Table::Task, key: t.0 });
            }
        }
    }

    fn on_recon_task(&mut self, env: &mut dyn Env, o: ObjectId, entry: Option<TaskTableEntry>) {
        let Some(entry) = entry else {
            for who in self.recon.finish(o) {
                env.send(who, Message::ReconstructFailed { object: o, reason: "creating task unknown".into() });
            }
            return;
        };
        match entry.state.kind() {
            StateKind::Done => {
                log::info!("{}: replaying {:?} to rebuild {o:?}", self.me(), entry.task_id);
                let req = self.req(Pending::ReconLost(o, entry.spec));
                env.send(
                    self.topo.task_shard(&entry.task_id),
                    Message::UpdateState { req, task: entry.task_id, state: TaskState::Lost, node: None },
                );
            }
            StateKind::Lost => {
                self.recon.finish(o);
                self.begin_place(env, entry.spec, PlaceKind::Resubmit);
            }
            _ => {
                // already being re-executed somewhere
                self.recon.finish(o);
            }
        }
    }

    fn recover(&mut self, env: &mut dyn Env) {
        for shard in self.topo.shards() {
            let req = self.req(Pending::Recover);
            env.send(shard, Message::Scan { req, table: Table::Task });
        }
    }

    fn on_recover_scan(&mut self, env: &mut dyn Env, records: Vec<Vec<u8>>) {
        for r in records {
            let Ok(e) = TaskTableEntry::decode(&r) else { continue };
            if self.topo.global_for_task(&e.task_id) != self.me() {
                continue;
            }
            match e.state {
                TaskState::Spilled => self.begin_place(env, e.spec, PlaceKind::Replace),
                TaskState::Lost => self.begin_place(env, e.spec, PlaceKind::Resubmit),
                _ => {}
            }
        }
    }

    fn reset(&mut self) {
        *self = GlobalScheduler::new(self.index, self.topo, self.timing);
    }
}

impl Component for GlobalScheduler {
    fn start(&mut self, env: &mut dyn Env) {
        env.timer(self.timing.monitor_period, Message::Timer { kind: TimerKind::Monitor });
    }

    fn handle(&mut self, from: Addr, msg: Message, env: &mut dyn Env) {
        match msg {
            Message::Spill { spec, .. } => self.begin_place(env, spec, PlaceKind::Spill),
            Message::Heartbeat { node, total, available, queue_len } => {
                self.view.heartbeat(node, total, available, queue_len, env.now());
                if self.down.remove(&node) {
                    log::info!("{}: {node} is back", self.me());
                }
                self.retry_parked(env);
            }
            Message::Timer { kind: TimerKind::Monitor } => {
                self.monitor(env);
                env.timer(self.timing.monitor_period, Message::Timer { kind: TimerKind::Monitor });
            }
            Message::Reconstruct { object } => self.on_reconstruct(env, from, object),
            Message::Record { req, record } => match self.pending.remove(&req) {
                Some(Pending::Locality(job)) => {
                    let entry = record.and_then(|r| ObjectTableEntry::decode(&r).ok());
                    self.on_locality(env, job, entry);
                }
                Some(Pending::ReconObject(o)) => {
                    let entry = record.and_then(|r| ObjectTableEntry::decode(&r).ok());
                    self.on_recon_object(env, o, entry);
                }
                Some(Pending::ReconTask(o)) => {
                    let entry = record.and_then(|r| TaskTableEntry::decode(&r).ok());
                    self.on_recon_task(env, o, entry);
                }
                Some(Pending::ReplaceCheck) => {
                    if let Some(e) = record.and_then(|r| TaskTableEntry::decode(&r).ok()) {
                        if e.state == TaskState::Spilled {
                            self.begin_place(env, e.spec, PlaceKind::Replace);
                        }
                    }
                }
                other => log::debug!("{}: stray record for {other:?}", self.me()),
            },
            Message::Ack { req, result } => match self.pending.remove(&req) {
                Some(Pending::SpillAck { spec, target }) => match (result, target) {
                    (Ok(()), Some(n)) => {
                        self.placed_to.insert(spec.task_id, n);
                        env.send(Addr::Node(n), Message::Placement { spec, non_spillable: true });
                    }
                    (Ok(()), None) => self.parked.push((spec, PlaceKind::Replace)),
                    (Err(e), _) => log::info!("{}: dropping spill of {:?}: {e}", self.me(), spec.task_id),
                },
                Some(Pending::ReconLost(o, spec)) => {
                    self.recon.finish(o);
                    match result {
                        Ok(()) => self.begin_place(env, spec, PlaceKind::Resubmit),
                        Err(e) => log::debug!("{}: replay of {:?} skipped: {e}", self.me(), spec.task_id),
                    }
                }
                _ => {}
            },
            Message::LostTasks { req, specs } => {
                self.pending.remove(&req);
                for spec in specs {
                    self.begin_place(env, spec, PlaceKind::Resubmit);
                }
            }
            Message::ScanReply { req, records, .. } => {
                if let Some(Pending::Recover) = self.pending.remove(&req) {
                    self.on_recover_scan(env, records);
                }
            }
            Message::Restart { kind: ComponentKind::GlobalScheduler, .. } => {
                log::info!("{}: restarting", self.me());
                self.reset();
                self.recover(env);
            }
            Message::DeliveryFailed { to: Addr::Node(n), inner } => {
                self.view.mark_unreachable(n);
                if self.down.insert(n) {
                    self.on_node_death(env, n);
                }
                match *inner {
                    Message::Placement { spec, .. } => self.begin_place(env, spec, PlaceKind::Replace),
                    Message::Submit { spec } => self.begin_place(env, spec, PlaceKind::Resubmit),
                    _ => {}
                }
            }
            Message::DeliveryFailed { to, inner } => {
                log::warn!("{}: {} to {to} undeliverable", self.me(), inner.label());
            }
            other => log::warn!("{}: unexpected {} from {from}", self.me(), other.label()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(nodes: &[(u32, Resources, u32)]) -> ClusterView {
        let mut v = ClusterView::new(500);
        for (n, total, q) in nodes {
            v.heartbeat(NodeId(*n), *total, *total, *q, 0);
        }
        v
    }

    #[test]
    fn locality_dominates() {
        let v = view(&[(0, Resources::cpu(4), 0), (1, Resources::cpu(4), 9)]);
        let loc = BTreeMap::from([(NodeId(1), 1000)]);
        assert_eq!(v.place(&Resources::cpu(1), &loc, 0), Some(NodeId(1)));
    }

    #[test]
    fn queue_length_breaks_ties() {
        let v = view(&[(0, Resources::cpu(4), 5), (1, Resources::cpu(4), 0)]);
        assert_eq!(v.place(&Resources::cpu(1), &BTreeMap::new(), 0), Some(NodeId(1)));
    }

    #[test]
    fn smallest_id_breaks_remaining_ties() {
        let v = view(&[(2, Resources::cpu(4), 0), (1, Resources::cpu(4), 0), (3, Resources::cpu(4), 0)]);
        assert_eq!(v.place(&Resources::cpu(1), &BTreeMap::new(), 0), Some(NodeId(1)));
    }

    #[test]
    fn never_places_infeasibly() {
        let v = view(&[(0, Resources::cpu(4), 0), (1, Resources::new(0, 1), 7)]);
        assert_eq!(v.place(&Resources::new(0, 1), &BTreeMap::new(), 0), Some(NodeId(1)));
        assert_eq!(v.place(&Resources::new(1, 1), &BTreeMap::new(), 0), None);
    }

    #[test]
    fn stale_nodes_are_excluded_until_they_report() {
        let mut v = view(&[(0, Resources::cpu(4), 0), (1, Resources::cpu(4), 3)]);
        assert_eq!(v.place(&Resources::cpu(1), &BTreeMap::new(), 501), None);
        v.heartbeat(NodeId(1), Resources::cpu(4), Resources::cpu(4), 3, 600);
        assert_eq!(v.place(&Resources::cpu(1), &BTreeMap::new(), 700), Some(NodeId(1)));
        assert_eq!(v.dead_nodes(700), vec![NodeId(0)]);
        v.mark_unreachable(NodeId(1));
        assert_eq!(v.place(&Resources::cpu(1), &BTreeMap::new(), 700), None);
    }
}
