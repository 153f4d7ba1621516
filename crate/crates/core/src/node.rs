//! One cluster node: local scheduler, object store, object transfer, the
//! driver-facing get/wait service, and the worker slots.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::control::ObjectTableEntry;
use crate::control::TaskTableEntry;
use crate::error::StoreError;
use crate::ids::{NodeId, ObjectId, TaskId};
use crate::local_scheduler::{Decision, NodeResources, QueuedTask, Recorded, ReadyQueue};
use crate::message::{Addr, Channel, ComponentKind, Message, Table, TimerKind};
use crate::object_store::ObjectStore;
use crate::runtime::{Component, Env, Job, Tick, Timing, Topology};
use crate::task::{Arg, Resources, StateKind, TaskSpec, TaskState};
use crate::value::{decode_value, encode_value, Value};

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub id: NodeId,
    pub workers: u32,
    pub resources: Resources,
    pub spillover_threshold: usize,
    pub topology: Topology,
    pub timing: Timing,
}

#[derive(Debug, Clone, Default)]
struct WorkerSlot {
    task: Option<TaskId>,
    epoch: u64,
}

#[derive(Debug)]
struct Staged {
    spec: TaskSpec,
    worker: u32,
    missing: BTreeSet<ObjectId>,
}

#[derive(Debug)]
struct Running {
    spec: TaskSpec,
}

/// What this node knows about an object it does not hold.
#[derive(Debug, Default)]
struct Tracked {
    looked_up: bool,
    entry: Option<ObjectTableEntry>,
    failed: Option<String>,
    reconstruct_sent: Option<Tick>,
}

#[derive(Debug, Default)]
struct FetchState {
    source: Option<NodeId>,
    tried: BTreeSet<NodeId>,
}

#[derive(Debug)]
struct WaitReq {
    objects: Vec<ObjectId>,
    ready: BTreeSet<ObjectId>,
    lookups: usize,
    snapshot_sent: bool,
}

type WaitKey = (Addr, u64);

#[derive(Debug)]
enum Pending {
    Lookup(ObjectId),
    Queued(TaskId),
    LostResubmit(TaskSpec),
    Reconcile,
}

/// How long a node waits before asking again for a lost object.
const RECONSTRUCT_RETRY: Tick = 1_000_000;

pub struct Node {
    cfg: NodeConfig,
    store: Arc<ObjectStore>,
    resources: NodeResources,
    queue: ReadyQueue,
    workers: Vec<WorkerSlot>,
    staged: BTreeMap<TaskId, Staged>,
    staged_on: BTreeMap<ObjectId, Vec<TaskId>>,
    running: BTreeMap<TaskId, Running>,
    objects: BTreeMap<ObjectId, Tracked>,
    fetches: BTreeMap<ObjectId, FetchState>,
    gets: BTreeMap<ObjectId, Vec<(Addr, u64)>>,
    waits: BTreeMap<WaitKey, WaitReq>,
    wait_index: BTreeMap<ObjectId, Vec<WaitKey>>,
    lookup_waiters: BTreeMap<ObjectId, Vec<WaitKey>>,
    pending: BTreeMap<u64, Pending>,
    suspects: BTreeSet<NodeId>,
    next_req: u64,
}

impl Node {
    pub fn new(cfg: NodeConfig, store: Arc<ObjectStore>) -> Self {
        let workers = vec![WorkerSlot::default(); cfg.workers as usize];
        Node {
            resources: NodeResources::new(cfg.resources),
            cfg,
            store,
            queue: ReadyQueue::new(),
            workers,
            staged: BTreeMap::new(),
            staged_on: BTreeMap::new(),
            running: BTreeMap::new(),
            objects: BTreeMap::new(),
            fetches: BTreeMap::new(),
            gets: BTreeMap::new(),
            waits: BTreeMap::new(),
            wait_index: BTreeMap::new(),
            lookup_waiters: BTreeMap::new(),
            pending: BTreeMap::new(),
            suspects: BTreeSet::new(),
            next_req: 1,
        }
    }

    pub fn id(&self) -> NodeId {
        self.cfg.id
    }

    pub fn store(&self) -> &Arc<ObjectStore> {
        &self.store
    }

    fn req(&mut self, p: Pending) -> u64 {
        let r = self.next_req;
        self.next_req += 1;
        self.pending.insert(r, p);
        r
    }

    fn topo(&self) -> &Topology {
        &self.cfg.topology
    }

    fn write_state(&mut self, env: &mut dyn Env, task: TaskId, state: TaskState, ack: Option<Pending>) {
        let req = ack.map(|p| self.req(p)).unwrap_or(0);
        let node = match state.kind() {
            StateKind::Done | StateKind::Lost => None,
            _ => Some(self.cfg.id),
        };
        env.send(self.topo().task_shard(&task), Message::UpdateState { req, task, state, node });
    }

    // ---- object availability -------------------------------------------

    fn live_locations(&self, entry: &ObjectTableEntry) -> Vec<NodeId> {
        entry.locations.iter().copied().filter(|n| !self.suspects.contains(n)).collect()
    }

    fn is_located(&self, o: &ObjectId) -> bool {
        match self.objects.get(o) {
            Some(t) => t.failed.is_some() || t.entry.as_ref().is_some_and(|e| !self.live_locations(e).is_empty()),
            None => false,
        }
    }

    fn is_available(&self, o: &ObjectId) -> bool {
        self.store.contains(o) || self.is_located(o)
    }

    fn interested(&self, o: &ObjectId) -> bool {
        self.queue.is_waiting_on(o)
            || self.staged_on.contains_key(o)
            || self.gets.contains_key(o)
            || self.wait_index.contains_key(o)
            || self.fetches.contains_key(o)
    }

    /// Starts tracking an object's table entry. Returns true if a lookup is
    /// still outstanding.
    fn track(&mut self, env: &mut dyn Env, o: ObjectId) -> bool {
        if let Some(t) = self.objects.get(&o) {
            return !t.looked_up;
        }
        self.objects.insert(o, Tracked::default());
        let req = self.req(Pending::Lookup(o));
        env.send(self.topo().object_shard(&o), Message::Subscribe { req, channel: Channel::object(o) });
        true
    }

    fn on_object_record(&mut self, env: &mut dyn Env, o: ObjectId, entry: Option<ObjectTableEntry>, snapshot: bool) {
        let Some(t) = self.objects.get_mut(&o) else { return };
        if snapshot {
            t.looked_up = true;
        }
        if let Some(new) = &entry {
            if let Some(f) = self.fetches.get_mut(&o) {
                f.tried.retain(|n| new.locations.contains(n));
            }
            t.entry = entry;
        }
        if self.store.contains(&o) {
            self.objects.remove(&o);
            env.send(self.topo().object_shard(&o), Message::Unsubscribe { channel: Channel::object(o) });
            self.finish_lookup(env, o);
            return;
        }
        if self.is_located(&o) {
            if let Some(t) = self.objects.get_mut(&o) {
                t.reconstruct_sent = None;
            }
            self.object_available(env, o);
            if self.fetches.contains_key(&o) {
                self.try_fetch(env, o);
            }
        } else {
            self.maybe_reconstruct(env, o);
        }
        self.finish_lookup(env, o);
    }

    fn maybe_reconstruct(&mut self, env: &mut dyn Env, o: ObjectId) {
        let now = env.now();
        let interested = self.interested(&o);
        let Some(t) = self.objects.get_mut(&o) else { return };
        let lost = t.entry.as_ref().is_some_and(|e| e.lost || e.locations.is_empty());
        if !lost || t.failed.is_some() || !interested {
            return;
        }
        if t.reconstruct_sent.is_some_and(|at| now < at + RECONSTRUCT_RETRY) {
            return;
        }
        t.reconstruct_sent = Some(now);
        env.send(self.cfg.topology.global_for_object(&o), Message::Reconstruct { object: o });
    }

    /// Completes wait snapshots that were waiting on this object's lookup.
    fn finish_lookup(&mut self, env: &mut dyn Env, o: ObjectId) {
        let Some(keys) = self.lookup_waiters.remove(&o) else { return };
        for key in keys {
            let Some(w) = self.waits.get_mut(&key) else { continue };
            w.lookups -= 1;
            if w.lookups == 0 && !w.snapshot_sent {
                w.snapshot_sent = true;
                let ready = w.objects.iter().filter(|x| w.ready.contains(x)).copied().collect();
                env.send(key.0, Message::WaitReply { req: key.1, ready, snapshot: true });
            }
        }
    }

    /// Called whenever `o` becomes usable as an argument: sealed here, known
    /// located elsewhere, or permanently failed.
    fn object_available(&mut self, env: &mut dyn Env, o: ObjectId) {
        for id in self.queue.satisfy(&o) {
            self.on_queued(env, id);
        }
        if let Some(keys) = self.wait_index.remove(&o) {
            for key in keys {
                let Some(w) = self.waits.get_mut(&key) else { continue };
                if w.ready.insert(o) && w.snapshot_sent {
                    env.send(key.0, Message::WaitReply { req: key.1, ready: vec![o], snapshot: false });
                }
            }
        }
    }

    fn on_queued(&mut self, env: &mut dyn Env, id: TaskId) {
        let Some(t) = self.queue.get_mut(&id) else { return };
        if t.recorded == Recorded::Submitted {
            t.recorded = Recorded::Queued;
            self.write_state(env, id, TaskState::QueuedLocal, Some(Pending::Queued(id)));
        }
    }

    /// Seals a payload locally and announces the new location.
    fn seal(&mut self, env: &mut dyn Env, o: ObjectId, payload: &[u8], creating_task: Option<TaskId>) -> Result<(), StoreError> {
        match self.store.put(o, payload) {
            Ok(_) => {
                env.send(
                    self.topo().object_shard(&o),
                    Message::AddLocation { object: o, node: self.cfg.id, size: payload.len() as u64, creating_task },
                );
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Everything that waits on a local copy of `o`.
    fn on_local(&mut self, env: &mut dyn Env, o: ObjectId) {
        self.fetches.remove(&o);
        if self.objects.remove(&o).is_some() {
            env.send(self.topo().object_shard(&o), Message::Unsubscribe { channel: Channel::object(o) });
        }
        if let Some(gets) = self.gets.remove(&o) {
            let payload = self.store.try_get(&o).expect("sealed");
            for (to, req) in gets {
                env.send(to, Message::GetReply { req, result: Ok(payload.to_vec()) });
            }
        }
        self.unblock_staged(env, o);
        self.object_available(env, o);
        self.finish_lookup(env, o);
    }

    fn on_failed(&mut self, env: &mut dyn Env, o: ObjectId, reason: String) {
        log::info!("{}: {o:?} cannot be rebuilt: {reason}", self.cfg.id);
        self.objects.entry(o).or_default().failed = Some(reason.clone());
        self.fetches.remove(&o);
        if let Some(gets) = self.gets.remove(&o) {
            for (to, req) in gets {
                env.send(to, Message::GetReply { req, result: Err(reason.clone()) });
            }
        }
        self.unblock_staged(env, o);
        self.object_available(env, o);
        self.finish_lookup(env, o);
    }

    // ---- fetching --------------------------------------------------------

    fn ensure_fetch(&mut self, env: &mut dyn Env, o: ObjectId) {
        if self.store.contains(&o) {
            return;
        }
        self.fetches.entry(o).or_default();
        self.track(env, o);
        self.try_fetch(env, o);
    }

    fn try_fetch(&mut self, env: &mut dyn Env, o: ObjectId) {
        let me = self.cfg.id;
        let candidates = match self.objects.get(&o).and_then(|t| t.entry.as_ref()) {
            Some(e) => self.live_locations(e),
            None => Vec::new(),
        };
        let Some(f) = self.fetches.get_mut(&o) else { return };
        if f.source.is_some() {
            return;
        }
        if let Some(src) = candidates.into_iter().find(|n| *n != me && !f.tried.contains(n)) {
            f.source = Some(src);
            env.send(Addr::Node(src), Message::FetchRequest { object: o });
        } else {
            if self.objects.get(&o).is_some_and(|t| t.looked_up) {
                self.unstage(o);
            }
            self.maybe_reconstruct(env, o);
        }
    }

    /// Returns tasks staged on `o` to the queue, blocked on their missing
    /// arguments, and frees their workers until `o` has a source again.
    fn unstage(&mut self, o: ObjectId) {
        let Some(ids) = self.staged_on.remove(&o) else { return };
        for id in ids {
            let Some(s) = self.staged.remove(&id) else { continue };
            for other in &s.missing {
                if let Some(v) = self.staged_on.get_mut(other) {
                    v.retain(|t| *t != id);
                    if v.is_empty() {
                        self.staged_on.remove(other);
                    }
                }
            }
            if let Some(w) = self.workers.get_mut(s.worker as usize) {
                if w.task == Some(id) {
                    w.task = None;
                }
            }
            self.resources.release(&s.spec.resource_demand);
            let missing: Vec<ObjectId> = s.missing.iter().copied().filter(|x| !self.is_available(x)).collect();
            log::debug!("{}: {id:?} waits for {o:?} without holding a worker", self.cfg.id);
            self.queue.insert(QueuedTask { spec: s.spec, recorded: Recorded::Assigned, non_spillable: true }, &missing);
        }
    }

    fn fetch_failed(&mut self, env: &mut dyn Env, o: ObjectId, src: NodeId) {
        if let Some(f) = self.fetches.get_mut(&o) {
            f.tried.insert(src);
            if f.source == Some(src) {
                f.source = None;
            }
        }
        self.try_fetch(env, o);
    }

    // ---- task lifecycle --------------------------------------------------

    fn missing_args(&mut self, env: &mut dyn Env, spec: &TaskSpec) -> Vec<ObjectId> {
        let mut missing = Vec::new();
        for o in spec.future_args().collect::<Vec<_>>() {
            if !self.is_available(&o) {
                self.track(env, o);
                missing.push(o);
            }
        }
        missing
    }

    fn holds(&self, id: &TaskId) -> bool {
        self.staged.contains_key(id) || self.running.contains_key(id) || self.queue.contains(id)
    }

    fn enqueue(&mut self, env: &mut dyn Env, task: QueuedTask) {
        let id = task.spec.task_id;
        let missing = self.missing_args(env, &task.spec);
        if self.queue.insert(task, &missing).is_some() {
            self.on_queued(env, id);
        } else {
            for o in missing {
                self.maybe_reconstruct(env, o);
            }
        }
    }

    fn on_submit(&mut self, env: &mut dyn Env, spec: TaskSpec) {
        if self.holds(&spec.task_id) {
            return;
        }
        env.send(
            self.topo().task_shard(&spec.task_id),
            Message::SubmitRecord { req: 0, spec: spec.clone(), node: self.cfg.id },
        );
        self.enqueue(env, QueuedTask { spec, recorded: Recorded::Submitted, non_spillable: false });
    }

    fn on_placement(&mut self, env: &mut dyn Env, spec: TaskSpec) {
        if self.holds(&spec.task_id) {
            return;
        }
        self.enqueue(env, QueuedTask { spec, recorded: Recorded::Spilled, non_spillable: true });
    }

    fn dispatch(&mut self, env: &mut dyn Env) {
        let mut idle = self.workers.iter().filter(|w| w.task.is_none()).count();
        let decisions = self.queue.plan(&mut self.resources, &mut idle, self.cfg.spillover_threshold);
        for d in decisions {
            match d {
                Decision::Assign(t) => self.assign(env, t),
                Decision::Spill(t) => {
                    let to = self.topo().global_for_task(&t.spec.task_id);
                    env.send(to, Message::Spill { spec: t.spec, origin: self.cfg.id });
                }
            }
        }
    }

    fn assign(&mut self, env: &mut dyn Env, t: QueuedTask) {
        let id = t.spec.task_id;
        let worker = self.workers.iter().position(|w| w.task.is_none()).expect("plan checked idle workers") as u32;
        self.workers[worker as usize].task = Some(id);
        if t.recorded != Recorded::Assigned {
            self.write_state(env, id, TaskState::Assigned(self.cfg.id), None);
        }
        let mut missing = BTreeSet::new();
        for o in t.spec.future_args() {
            let failed = self.objects.get(&o).is_some_and(|x| x.failed.is_some());
            if !self.store.contains(&o) && !failed {
                missing.insert(o);
            }
        }
        for o in &missing {
            self.staged_on.entry(*o).or_default().push(id);
        }
        let empty = missing.is_empty();
        let pending: Vec<ObjectId> = missing.iter().copied().collect();
        self.staged.insert(id, Staged { spec: t.spec, worker, missing });
        if empty {
            self.launch(env, id);
        } else {
            for o in pending {
                self.ensure_fetch(env, o);
            }
        }
    }

    fn unblock_staged(&mut self, env: &mut dyn Env, o: ObjectId) {
        let Some(ids) = self.staged_on.remove(&o) else { return };
        for id in ids {
            let Some(s) = self.staged.get_mut(&id) else { continue };
            s.missing.remove(&o);
            if s.missing.is_empty() {
                self.launch(env, id);
            }
        }
    }

    fn resolve_arg(&self, arg: &Arg) -> Value {
        match arg {
            Arg::Value(v) => v.clone(),
            Arg::Future(o) => match self.store.try_get(o) {
                Some(bytes) => decode_value(&bytes).unwrap_or_else(|e| Value::error(format!("corrupt object {o}: {e}"))),
                None => {
                    let reason = self.objects.get(o).and_then(|t| t.failed.clone()).unwrap_or_default();
                    Value::error(format!("object {o} unavailable: {reason}"))
                }
            },
        }
    }

    fn launch(&mut self, env: &mut dyn Env, id: TaskId) {
        let Some(s) = self.staged.remove(&id) else { return };
        let args = s.spec.args.iter().map(|a| self.resolve_arg(a)).collect();
        let epoch = self.workers[s.worker as usize].epoch;
        self.write_state(env, id, TaskState::Running(self.cfg.id), None);
        env.execute(Job { worker: s.worker, epoch, spec: s.spec.clone(), args });
        self.running.insert(id, Running { spec: s.spec });
    }

    fn on_finished(&mut self, env: &mut dyn Env, worker: u32, epoch: u64, task: TaskId, returns: Vec<Vec<u8>>) {
        let Some(slot) = self.workers.get(worker as usize) else { return };
        if slot.epoch != epoch || slot.task != Some(task) {
            log::debug!("{}: ignoring stale completion of {task:?}", self.cfg.id);
            return;
        }
        let Some(run) = self.running.remove(&task) else { return };
        self.workers[worker as usize].task = None;
        self.resources.release(&run.spec.resource_demand);
        let mut sealed = Vec::new();
        for (i, payload) in returns.iter().enumerate() {
            let o = run.spec.return_id(i as u32);
            match self.seal(env, o, payload, Some(task)) {
                Ok(()) => sealed.push(o),
                Err(StoreError::CapacityExceeded { size, capacity, .. }) => {
                    let err = encode_value(&Value::error(format!(
                        "object of {size} bytes exceeds store capacity {capacity}"
                    )))
                    .expect("shallow");
                    if self.seal(env, o, &err, Some(task)).is_ok() {
                        sealed.push(o);
                    }
                }
                Err(StoreError::DuplicateConflict) => {
                    log::error!("{}: re-execution of {task:?} produced different bytes for {o:?}", self.cfg.id);
                    sealed.push(o);
                }
                Err(e) => log::error!("{}: sealing {o:?}: {e}", self.cfg.id),
            }
        }
        self.write_state(env, task, TaskState::Done, None);
        for o in sealed {
            self.on_local(env, o);
        }
    }

    // ---- driver requests -------------------------------------------------

    fn on_get(&mut self, env: &mut dyn Env, from: Addr, req: u64, o: ObjectId) {
        if let Some(p) = self.store.try_get(&o) {
            env.send(from, Message::GetReply { req, result: Ok(p.to_vec()) });
            return;
        }
        if let Some(reason) = self.objects.get(&o).and_then(|t| t.failed.clone()) {
            env.send(from, Message::GetReply { req, result: Err(reason) });
            return;
        }
        self.gets.entry(o).or_default().push((from, req));
        self.ensure_fetch(env, o);
    }

    fn on_wait(&mut self, env: &mut dyn Env, from: Addr, req: u64, objects: Vec<ObjectId>) {
        let key = (from, req);
        let mut w = WaitReq { objects: objects.clone(), ready: BTreeSet::new(), lookups: 0, snapshot_sent: false };
        for o in &objects {
            if self.is_available(o) {
                w.ready.insert(*o);
                continue;
            }
            self.wait_index.entry(*o).or_default().push(key);
            if self.track(env, *o) {
                w.lookups += 1;
                self.lookup_waiters.entry(*o).or_default().push(key);
            }
        }
        if w.lookups == 0 {
            w.snapshot_sent = true;
            let ready = objects.iter().filter(|x| w.ready.contains(x)).copied().collect();
            env.send(from, Message::WaitReply { req, ready, snapshot: true });
        }
        self.waits.insert(key, w);
    }

    fn on_cancel_wait(&mut self, from: Addr, req: u64) {
        let key = (from, req);
        let Some(w) = self.waits.remove(&key) else { return };
        for o in w.objects {
            if let Some(keys) = self.wait_index.get_mut(&o) {
                keys.retain(|k| *k != key);
                if keys.is_empty() {
                    self.wait_index.remove(&o);
                }
            }
            if let Some(keys) = self.lookup_waiters.get_mut(&o) {
                keys.retain(|k| *k != key);
                if keys.is_empty() {
                    self.lookup_waiters.remove(&o);
                }
            }
        }
    }

    fn on_put(&mut self, env: &mut dyn Env, from: Addr, req: u64, o: ObjectId, payload: Vec<u8>) {
        let result = match decode_value(&payload) {
            Err(e) => Err(e.to_string()),
            Ok(_) => self.seal(env, o, &payload, None).map_err(|e| e.to_string()),
        };
        let ok = result.is_ok();
        env.send(from, Message::PutReply { req, result });
        if ok {
            self.on_local(env, o);
        }
    }

    // ---- restarts --------------------------------------------------------

    fn restart_worker(&mut self, env: &mut dyn Env, worker: u32) {
        let Some(slot) = self.workers.get_mut(worker as usize) else { return };
        slot.epoch += 1;
        let Some(task) = slot.task.take() else { return };
        let spec = if let Some(r) = self.running.remove(&task) {
            r.spec
        } else if let Some(s) = self.staged.remove(&task) {
            s.spec
        } else {
            return;
        };
        self.resources.release(&spec.resource_demand);
        log::info!("{}: worker {worker} restarted; {task:?} marked lost", self.cfg.id);
        self.write_state(env, task, TaskState::Lost, Some(Pending::LostResubmit(spec)));
    }

    fn restart_scheduler(&mut self, env: &mut dyn Env) {
        log::info!("{}: local scheduler restarting", self.cfg.id);
        self.queue.clear();
        for (id, s) in std::mem::take(&mut self.staged) {
            self.resources.release(&s.spec.resource_demand);
            if let Some(w) = self.workers.get_mut(s.worker as usize) {
                if w.task == Some(id) {
                    w.task = None;
                }
            }
        }
        self.staged_on.clear();
        self.objects.clear();
        self.fetches.clear();
        self.lookup_waiters.clear();
        self.suspects.clear();
        self.pending.retain(|_, p| matches!(p, Pending::LostResubmit(_)));
        // driver requests survive; re-establish what they depend on
        let gets: Vec<ObjectId> = self.gets.keys().copied().collect();
        for o in gets {
            self.ensure_fetch(env, o);
        }
        let waited: Vec<ObjectId> = self.wait_index.keys().copied().collect();
        for o in waited {
            self.track(env, o);
        }
        for shard in self.cfg.topology.shards() {
            let req = self.req(Pending::Reconcile);
            env.send(shard, Message::Scan { req, table: Table::Task });
        }
    }

    fn reconcile(&mut self, env: &mut dyn Env, records: Vec<Vec<u8>>) {
        let me = self.cfg.id;
        for r in records {
            let Ok(e) = TaskTableEntry::decode(&r) else { continue };
            if e.node != Some(me) || self.holds(&e.task_id) {
                continue;
            }
            let task = match e.state {
                TaskState::Submitted => QueuedTask { spec: e.spec, recorded: Recorded::Submitted, non_spillable: false },
                TaskState::QueuedLocal => {
                    self.queue.mark_acked(e.task_id);
                    QueuedTask { spec: e.spec, recorded: Recorded::Queued, non_spillable: false }
                }
                TaskState::Spilled => QueuedTask { spec: e.spec, recorded: Recorded::Spilled, non_spillable: true },
                TaskState::Assigned(_) => QueuedTask { spec: e.spec, recorded: Recorded::Assigned, non_spillable: true },
                _ => continue,
            };
            self.enqueue(env, task);
        }
    }

    fn heartbeat(&mut self, env: &mut dyn Env) {
        let queue_len = (self.queue.queue_len() + self.queue.blocked_len()) as u32;
        for g in self.cfg.topology.globals() {
            env.send(
                g,
                Message::Heartbeat {
                    node: self.cfg.id,
                    total: self.resources.total,
                    available: self.resources.available,
                    queue_len,
                },
            );
        }
        // retry reconstruction requests that went unanswered
        let lost: Vec<ObjectId> = self
            .objects
            .iter()
            .filter(|(_, t)| t.reconstruct_sent.is_some())
            .map(|(o, _)| *o)
            .collect();
        for o in lost {
            self.maybe_reconstruct(env, o);
        }
    }

    fn on_delivery_failed(&mut self, env: &mut dyn Env, to: Addr, inner: Message) {
        match (to, inner) {
            (Addr::Node(src), Message::FetchRequest { object }) => {
                self.suspects.insert(src);
                self.fetch_failed(env, object, src);
            }
            (_, Message::Spill { spec, .. }) => {
                log::warn!("{}: spill of {:?} undeliverable; keeping it", self.cfg.id, spec.task_id);
                let id = spec.task_id;
                self.queue.insert(QueuedTask { spec, recorded: Recorded::Queued, non_spillable: true }, &[]);
                self.queue.mark_acked(id);
            }
            (to, inner) => log::debug!("{}: {} to {to} undeliverable", self.cfg.id, inner.label()),
        }
    }
}

impl Component for Node {
    fn start(&mut self, env: &mut dyn Env) {
        self.heartbeat(env);
        env.timer(self.cfg.timing.heartbeat_period, Message::Timer { kind: TimerKind::Heartbeat });
    }

    fn handle(&mut self, from: Addr, msg: Message, env: &mut dyn Env) {
        match msg {
            Message::Submit { spec } => self.on_submit(env, spec),
            Message::Placement { spec, .. } => self.on_placement(env, spec),
            Message::TaskFinished { worker, epoch, task, returns } => self.on_finished(env, worker, epoch, task, returns),
            Message::Get { req, object } => self.on_get(env, from, req, object),
            Message::Wait { req, objects } => self.on_wait(env, from, req, objects),
            Message::CancelWait { req } => self.on_cancel_wait(from, req),
            Message::Put { req, object, payload } => self.on_put(env, from, req, object, payload),
            Message::FetchRequest { object } => {
                let reply = match self.store.try_get(&object) {
                    Some(p) => Message::FetchResponse { object, payload: p.to_vec() },
                    None => Message::FetchMiss { object },
                };
                env.send(from, reply);
            }
            Message::FetchResponse { object, payload } => {
                if let Some(f) = self.fetches.get_mut(&object) {
                    f.source = None;
                }
                match self.seal(env, object, &payload, None) {
                    Ok(()) | Err(StoreError::DuplicateConflict) => self.on_local(env, object),
                    Err(e) => self.on_failed(env, object, e.to_string()),
                }
            }
            Message::FetchMiss { object } => {
                if let Addr::Node(src) = from {
                    self.fetch_failed(env, object, src);
                }
            }
            Message::Record { req, record } => match self.pending.remove(&req) {
                Some(Pending::Lookup(o)) => {
                    let entry = record.and_then(|r| ObjectTableEntry::decode(&r).ok());
                    self.on_object_record(env, o, entry, true);
                }
                other => log::debug!("{}: unexpected record for {other:?}", self.cfg.id),
            },
            Message::Notify { channel, record } => {
                if channel.table == Table::Object {
                    if let Ok(entry) = ObjectTableEntry::decode(&record) {
                        self.on_object_record(env, entry.object_id, Some(entry), false);
                    }
                }
            }
            Message::Ack { req, result } => match self.pending.remove(&req) {
                Some(Pending::Queued(id)) => {
                    if result.is_ok() {
                        self.queue.mark_acked(id);
                    } else if let Err(e) = result {
                        log::warn!("{}: queue write for {id:?} rejected: {e}", self.cfg.id);
                    }
                }
                Some(Pending::LostResubmit(spec)) => match result {
                    Ok(()) => self.on_submit(env, spec),
                    Err(e) => log::warn!("{}: not resubmitting {:?}: {e}", self.cfg.id, spec.task_id),
                },
                _ => {}
            },
            Message::ScanReply { req, records, .. } => {
                if let Some(Pending::Reconcile) = self.pending.remove(&req) {
                    self.reconcile(env, records);
                }
            }
            Message::ReconstructFailed { object, reason } => self.on_failed(env, object, reason),
            Message::Timer { kind: TimerKind::Heartbeat } => {
                self.heartbeat(env);
                env.timer(self.cfg.timing.heartbeat_period, Message::Timer { kind: TimerKind::Heartbeat });
            }
            Message::Restart { kind: ComponentKind::Worker, worker } => self.restart_worker(env, worker),
            Message::Restart { kind: ComponentKind::LocalScheduler, .. } => self.restart_scheduler(env),
            Message::DropObject { object } => {
                if self.store.remove(&object) {
                    env.send(self.topo().object_shard(&object), Message::RemoveLocation { object, node: self.cfg.id });
                }
            }
            Message::DeliveryFailed { to, inner } => self.on_delivery_failed(env, to, *inner),
            Message::GetReply { .. } | Message::WaitReply { .. } | Message::PutReply { .. } => {}
            other => log::warn!("{}: unexpected {} from {from}", self.cfg.id, other.label()),
        }
        self.dispatch(env);
    }
}
