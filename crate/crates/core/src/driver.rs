//! The driver-facing API: `remote`, `get`, `wait`, and `put`, plus table
//! scans for inspection. A driver talks to the local scheduler on its host
//! node and to the control-plane shards, through a [`Backend`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use crate::error::{ApiError, ControlError};
use crate::ids::{derive_object_id, derive_task_id, NodeId, ObjectId, TaskId};
use crate::message::{Addr, Message, Table};
use crate::runtime::{Tick, Topology};
use crate::task::{Arg, EventRecord};
use crate::value::{decode_value, encode_value, Value};
use crate::worker::{build_spec, FunctionRegistry, RemoteOptions};

#[derive(Debug, Default)]
struct WaitProgress {
    snapshot: bool,
    ready: BTreeSet<ObjectId>,
}

/// Replies received by a driver, keyed by request id. Replies to requests
/// nobody is waiting for are dropped.
#[derive(Debug, Default)]
pub struct DriverState {
    open: BTreeSet<u64>,
    gets: BTreeMap<u64, Result<Vec<u8>, String>>,
    puts: BTreeMap<u64, Result<(), String>>,
    waits: BTreeMap<u64, WaitProgress>,
    scans: BTreeMap<u64, Vec<(u32, Vec<Vec<u8>>)>>,
    records: BTreeMap<u64, Option<Vec<u8>>>,
    acks: BTreeMap<u64, Result<(), ControlError>>,
}

impl DriverState {
    fn absorb(&mut self, msg: Message) {
        let req = match &msg {
            Message::GetReply { req, .. }
            | Message::PutReply { req, .. }
            | Message::WaitReply { req, .. }
            | Message::ScanReply { req, .. }
            | Message::Record { req, .. }
            | Message::Ack { req, .. } => *req,
            Message::DeliveryFailed { to, inner } => {
                log::warn!("driver: {} to {to} undeliverable", inner.label());
                return;
            }
            other => {
                log::debug!("driver: ignoring {}", other.label());
                return;
            }
        };
        if !self.open.contains(&req) {
            return;
        }
        match msg {
            Message::GetReply { result, .. } => {
                self.gets.insert(req, result);
            }
            Message::PutReply { result, .. } => {
                self.puts.insert(req, result);
            }
            Message::WaitReply { ready, snapshot, .. } => {
                let w = self.waits.entry(req).or_default();
                w.snapshot |= snapshot;
                w.ready.extend(ready);
            }
            Message::ScanReply { shard, records, .. } => self.scans.entry(req).or_default().push((shard, records)),
            Message::Record { record, .. } => {
                self.records.insert(req, record);
            }
            Message::Ack { result, .. } => {
                self.acks.insert(req, result);
            }
            _ => unreachable!(),
        }
    }

    fn close(&mut self, req: u64) {
        self.open.remove(&req);
        self.gets.remove(&req);
        self.puts.remove(&req);
        self.waits.remove(&req);
        self.scans.remove(&req);
        self.records.remove(&req);
        self.acks.remove(&req);
    }
}

/// Driver state shared with whatever delivers replies.
#[derive(Debug, Default)]
pub struct DriverShared {
    pub state: Mutex<DriverState>,
    pub cond: Condvar,
}

impl DriverShared {
    pub fn absorb(&self, _from: Addr, msg: Message) {
        self.state.lock().absorb(msg);
        self.cond.notify_all();
    }
}

/// Transport and clock as seen by a driver.
pub trait Backend: Send + Sync {
    fn send(&self, from: Addr, to: Addr, msg: Message) -> Result<(), ApiError>;
    fn now(&self) -> Tick;
    /// Blocks until `done` holds or `deadline` passes, and reports whether
    /// `done` held. In simulated mode this is what advances the clock.
    fn wait_until(&self, deadline: Option<Tick>, done: &mut dyn FnMut(&DriverState) -> bool) -> bool;
    fn shared(&self) -> &DriverShared;
}

fn ticks(d: Duration) -> Tick {
    d.as_micros().min(u64::MAX as u128) as Tick
}

pub struct Driver {
    backend: Arc<dyn Backend>,
    registry: Arc<FunctionRegistry>,
    me: Addr,
    host: Addr,
    topo: Topology,
    root: TaskId,
    counter: AtomicU32,
    next_req: AtomicU64,
}

impl Driver {
    pub fn new(backend: Arc<dyn Backend>, registry: Arc<FunctionRegistry>, topo: Topology, seed: u64) -> Self {
        Driver {
            backend,
            registry,
            me: Addr::Driver(0),
            host: Addr::Node(NodeId(0)),
            topo,
            root: TaskId::driver_root(seed, 0),
            counter: AtomicU32::new(0),
            next_req: AtomicU64::new(1),
        }
    }

    pub fn registry(&self) -> &FunctionRegistry {
        &self.registry
    }

    pub fn topology(&self) -> Topology {
        self.topo
    }

    /// Microseconds since the cluster started (simulated ticks in simulated mode).
    pub fn now(&self) -> Tick {
        self.backend.now()
    }

    fn open(&self) -> u64 {
        let req = self.next_req.fetch_add(1, Ordering::Relaxed);
        self.backend.shared().state.lock().open.insert(req);
        req
    }

    fn close(&self, req: u64) {
        self.backend.shared().state.lock().close(req);
    }

    fn deadline(&self, timeout: Option<Duration>) -> Option<Tick> {
        timeout.map(|t| self.backend.now().saturating_add(ticks(t)))
    }

    /// Submits a task and returns its futures without waiting.
    pub fn remote(&self, name: &str, args: Vec<Arg>) -> Result<ObjectId, ApiError> {
        Ok(self.remote_with(name, args, RemoteOptions::default())?[0])
    }

    pub fn remote_with(&self, name: &str, args: Vec<Arg>, opts: RemoteOptions) -> Result<Vec<ObjectId>, ApiError> {
        let counter = self.counter.fetch_add(1, Ordering::Relaxed);
        let spec = build_spec(&self.registry, &self.root, counter, name, args, opts)?;
        let ids = spec.return_ids();
        self.backend.send(self.me, self.host, Message::Submit { spec })?;
        Ok(ids)
    }

    /// Blocks until the object is available locally and returns its value.
    /// Kernel failures come back as error values, not as `Err`.
    pub fn get(&self, object: ObjectId, timeout: Option<Duration>) -> Result<Value, ApiError> {
        let bytes = self.get_bytes(object, timeout)?;
        Ok(decode_value(&bytes)?)
    }

    /// Like [`Driver::get`] but returns the encoded payload.
    pub fn get_bytes(&self, object: ObjectId, timeout: Option<Duration>) -> Result<Vec<u8>, ApiError> {
        let req = self.open();
        let deadline = self.deadline(timeout);
        if let Err(e) = self.backend.send(self.me, self.host, Message::Get { req, object }) {
            self.close(req);
            return Err(e);
        }
        self.backend.wait_until(deadline, &mut |s| s.gets.contains_key(&req));
        let reply = self.backend.shared().state.lock().gets.remove(&req);
        self.close(req);
        match reply {
            Some(Ok(bytes)) => Ok(bytes),
            Some(Err(reason)) => Err(ApiError::ReconstructionFailed(reason)),
            None => Err(ApiError::Timeout),
        }
    }

    pub fn get_all(&self, objects: &[ObjectId], timeout: Option<Duration>) -> Result<Vec<Value>, ApiError> {
        objects.iter().map(|o| self.get(*o, timeout)).collect()
    }

    /// Returns once `num_returns` of `objects` are available or the timeout
    /// passes. Both halves keep the input order.
    pub fn wait(
        &self,
        objects: &[ObjectId],
        num_returns: usize,
        timeout: Option<Duration>,
    ) -> Result<(Vec<ObjectId>, Vec<ObjectId>), ApiError> {
        if num_returns > objects.len() {
            return Err(ApiError::InvalidArgument(format!(
                "num_returns {num_returns} exceeds {} futures",
                objects.len()
            )));
        }
        let distinct: BTreeSet<&ObjectId> = objects.iter().collect();
        if distinct.len() != objects.len() {
            return Err(ApiError::InvalidArgument("duplicate futures".into()));
        }
        let req = self.open();
        let deadline = self.deadline(timeout);
        if let Err(e) = self.backend.send(self.me, self.host, Message::Wait { req, objects: objects.to_vec() }) {
            self.close(req);
            return Err(e);
        }
        // the snapshot reply is always awaited, even with a zero timeout
        self.backend.wait_until(None, &mut |s| s.waits.get(&req).is_some_and(|w| w.snapshot));
        self.backend.wait_until(deadline, &mut |s| s.waits.get(&req).is_some_and(|w| w.ready.len() >= num_returns));
        let ready = self.backend.shared().state.lock().waits.remove(&req).unwrap_or_default().ready;
        self.close(req);
        let _ = self.backend.send(self.me, self.host, Message::CancelWait { req });
        let mut done = Vec::new();
        let mut rest = Vec::new();
        for o in objects {
            if ready.contains(o) && done.len() < num_returns {
                done.push(*o);
            } else {
                rest.push(*o);
            }
        }
        Ok((done, rest))
    }

    /// Stores a driver-side value and returns its future. Such objects have
    /// no lineage and cannot be rebuilt if lost.
    pub fn put(&self, value: &Value) -> Result<ObjectId, ApiError> {
        let payload = encode_value(value)?;
        let counter = self.counter.fetch_add(1, Ordering::Relaxed);
        let object = derive_object_id(&derive_task_id(&self.root, counter), 0);
        let req = self.open();
        self.backend.send(self.me, self.host, Message::Put { req, object, payload })?;
        self.backend.wait_until(None, &mut |s| s.puts.contains_key(&req));
        let reply = self.backend.shared().state.lock().puts.remove(&req);
        self.close(req);
        match reply {
            Some(Ok(())) => Ok(object),
            Some(Err(e)) => Err(ApiError::InvalidArgument(e)),
            None => Err(ApiError::Timeout),
        }
    }

    /// Every record of `table` across all shards, in shard order.
    pub fn scan_table(&self, table: Table) -> Result<Vec<Vec<u8>>, ApiError> {
        let req = self.open();
        let n = self.topo.num_shards as usize;
        for shard in self.topo.shards() {
            if let Err(e) = self.backend.send(self.me, shard, Message::Scan { req, table }) {
                self.close(req);
                return Err(e);
            }
        }
        let ok = self.backend.wait_until(None, &mut |s| s.scans.get(&req).is_some_and(|v| v.len() == n));
        let mut parts = self.backend.shared().state.lock().scans.remove(&req).unwrap_or_default();
        self.close(req);
        if !ok {
            return Err(ApiError::Timeout);
        }
        parts.sort_by_key(|(shard, _)| *shard);
        Ok(parts.into_iter().flat_map(|(_, r)| r).collect())
    }

    /// Reads one record from the shard that owns `key`.
    pub fn read(&self, table: Table, key: [u8; 16]) -> Result<Option<Vec<u8>>, ApiError> {
        let req = self.open();
        self.backend.send(self.me, self.topo.shard_for(&key), Message::Read { req, table, key })?;
        let ok = self.backend.wait_until(None, &mut |s| s.records.contains_key(&req));
        let record = self.backend.shared().state.lock().records.remove(&req).flatten();
        self.close(req);
        if !ok {
            return Err(ApiError::Timeout);
        }
        Ok(record)
    }

    /// The event log, merged across shards and sorted by timestamp.
    pub fn events(&self) -> Result<Vec<EventRecord>, ApiError> {
        let mut out = Vec::new();
        for r in self.scan_table(Table::Event)? {
            out.push(EventRecord::decode(&r)?);
        }
        out.sort_by_key(|e| e.timestamp);
        Ok(out)
    }

    /// Lets simulated time pass (or sleeps, in process mode).
    pub fn idle(&self, d: Duration) {
        let deadline = self.backend.now().saturating_add(ticks(d));
        self.backend.wait_until(Some(deadline), &mut |_| false);
    }
}
