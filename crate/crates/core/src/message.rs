//! Every message exchanged between components, with its frame type byte and
//! binary payload encoding.
//!
//! Frame types: 0x10-0x1F control plane, 0x20-0x2F object transfer and
//! driver requests, 0x30-0x3F scheduling, execution and fault handling.

use std::fmt;

use crate::error::{CodecError, ControlError};
use crate::ids::{NodeId, ObjectId, TaskId};
use crate::task::{Resources, TaskSpec, TaskState};
use crate::wire::{len_u32, WireReader, WireWriter};

/// Address of a component endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Addr {
    Shard(u32),
    Global(u32),
    Node(NodeId),
    Driver(u32),
}

impl Addr {
    /// The node an endpoint is co-located with. Drivers live on node 0.
    pub fn host(&self) -> Option<NodeId> {
        match self {
            Addr::Node(n) => Some(*n),
            Addr::Driver(_) => Some(NodeId(0)),
            _ => None,
        }
    }

    pub fn write(&self, w: &mut WireWriter) {
        match self {
            Addr::Shard(i) => w.u8(0).u32(*i),
            Addr::Global(i) => w.u8(1).u32(*i),
            Addr::Node(n) => w.u8(2).u32(n.0),
            Addr::Driver(i) => w.u8(3).u32(*i),
        };
    }

    pub fn read(r: &mut WireReader<'_>) -> Result<Self, CodecError> {
        let kind = r.u8()?;
        let v = r.u32()?;
        Ok(match kind {
            0 => Addr::Shard(v),
            1 => Addr::Global(v),
            2 => Addr::Node(NodeId(v)),
            3 => Addr::Driver(v),
            k => return Err(CodecError::malformed(format!("unknown address kind {k}"))),
        })
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addr::Shard(i) => write!(f, "shard-{i}"),
            Addr::Global(i) => write!(f, "global-{i}"),
            Addr::Node(n) => write!(f, "{n}"),
            Addr::Driver(i) => write!(f, "driver-{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Table {
    Task,
    Object,
    Function,
    Event,
}

impl Table {
    pub const ALL: [Table; 4] = [Table::Task, Table::Object, Table::Function, Table::Event];

    pub fn name(&self) -> &'static str {
        match self {
            Table::Task => "task",
            Table::Object => "object",
            Table::Function => "function",
            Table::Event => "event",
        }
    }

    pub fn from_name(name: &str) -> Option<Table> {
        Table::ALL.into_iter().find(|t| t.name() == name)
    }

    fn write(&self, w: &mut WireWriter) {
        w.str(self.name());
    }

    fn read(r: &mut WireReader<'_>) -> Result<Self, CodecError> {
        let name = r.str()?;
        Table::from_name(name).ok_or_else(|| CodecError::malformed(format!("unknown table {name:?}")))
    }
}

/// Pub/sub channel: a single key of a table, or the whole table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Channel {
    pub table: Table,
    pub key: Option<[u8; 16]>,
}

impl Channel {
    pub fn key(table: Table, key: [u8; 16]) -> Self {
        Channel { table, key: Some(key) }
    }

    pub fn table(table: Table) -> Self {
        Channel { table, key: None }
    }

    pub fn object(id: ObjectId) -> Self {
        Channel::key(Table::Object, id.0)
    }

    pub fn task(id: TaskId) -> Self {
        Channel::key(Table::Task, id.0)
    }

    /// Channel name bytes: table name ‖ 0x00 ‖ key bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.table.name().as_bytes().to_vec();
        out.push(0);
        if let Some(k) = self.key {
            out.extend_from_slice(&k);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let sep = bytes
            .iter()
            .position(|b| *b == 0)
            .ok_or_else(|| CodecError::malformed("channel without separator"))?;
        let name = std::str::from_utf8(&bytes[..sep]).map_err(|e| CodecError::malformed(e.to_string()))?;
        let table = Table::from_name(name).ok_or_else(|| CodecError::malformed(format!("unknown table {name:?}")))?;
        let rest = &bytes[sep + 1..];
        let key = match rest.len() {
            0 => None,
            16 => Some(rest.try_into().unwrap()),
            n => return Err(CodecError::malformed(format!("channel key of {n} bytes"))),
        };
        Ok(Channel { table, key })
    }

    /// Whether a publication on `published` reaches a subscriber of `self`.
    pub fn matches(&self, published: &Channel) -> bool {
        self.table == published.table && (self.key.is_none() || self.key == published.key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimerKind {
    Heartbeat,
    Monitor,
    Retry,
}

/// Components that can be restarted by fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComponentKind {
    Worker,
    LocalScheduler,
    GlobalScheduler,
}

impl ComponentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ComponentKind::Worker => "worker",
            ComponentKind::LocalScheduler => "local-scheduler",
            ComponentKind::GlobalScheduler => "global-scheduler",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "worker" => Some(ComponentKind::Worker),
            "local-scheduler" | "local" => Some(ComponentKind::LocalScheduler),
            "global-scheduler" | "global" => Some(ComponentKind::GlobalScheduler),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    PutRecord { req: u64, table: Table, key: [u8; 16], record: Vec<u8> },
    SubmitRecord { req: u64, spec: TaskSpec, node: NodeId },
    UpdateState { req: u64, task: TaskId, state: TaskState, node: Option<NodeId> },
    AddLocation { object: ObjectId, node: NodeId, size: u64, creating_task: Option<TaskId> },
    RemoveLocation { object: ObjectId, node: NodeId },
    Subscribe { req: u64, channel: Channel },
    Unsubscribe { channel: Channel },
    Read { req: u64, table: Table, key: [u8; 16] },
    Scan { req: u64, table: Table },
    NodeDown { req: u64, node: NodeId },
    Ack { req: u64, result: Result<(), ControlError> },
    Record { req: u64, record: Option<Vec<u8>> },
    ScanReply { req: u64, shard: u32, records: Vec<Vec<u8>> },
    LostTasks { req: u64, specs: Vec<TaskSpec> },
    Notify { channel: Channel, record: Vec<u8> },

    FetchRequest { object: ObjectId },
    FetchResponse { object: ObjectId, payload: Vec<u8> },
    FetchMiss { object: ObjectId },
    Submit { spec: TaskSpec },
    Get { req: u64, object: ObjectId },
    GetReply { req: u64, result: Result<Vec<u8>, String> },
    Wait { req: u64, objects: Vec<ObjectId> },
    WaitReply { req: u64, ready: Vec<ObjectId>, snapshot: bool },
    CancelWait { req: u64 },
    Put { req: u64, object: ObjectId, payload: Vec<u8> },
    PutReply { req: u64, result: Result<(), String> },

    Spill { spec: TaskSpec, origin: NodeId },
    Heartbeat { node: NodeId, total: Resources, available: Resources, queue_len: u32 },
    Placement { spec: TaskSpec, non_spillable: bool },
    Assign { worker: u32, epoch: u64, spec: TaskSpec },
    WorkerStarted { worker: u32, epoch: u64, task: TaskId },
    TaskFinished { worker: u32, epoch: u64, task: TaskId, returns: Vec<Vec<u8>> },
    Reconstruct { object: ObjectId },
    ReconstructFailed { object: ObjectId, reason: String },
    Timer { kind: TimerKind },
    Restart { kind: ComponentKind, worker: u32 },
    DropObject { object: ObjectId },
    DeliveryFailed { to: Addr, inner: Box<Message> },
}

pub mod frame_type {
    pub const PUT_RECORD: u8 = 0x10;
    pub const SUBMIT_RECORD: u8 = 0x11;
    pub const UPDATE_STATE: u8 = 0x12;
    pub const ADD_LOCATION: u8 = 0x13;
    pub const REMOVE_LOCATION: u8 = 0x14;
    pub const SUBSCRIBE: u8 = 0x15;
    pub const UNSUBSCRIBE: u8 = 0x16;
    pub const READ: u8 = 0x17;
    pub const SCAN: u8 = 0x18;
    pub const NODE_DOWN: u8 = 0x19;
    pub const ACK: u8 = 0x1A;
    pub const RECORD: u8 = 0x1B;
    pub const SCAN_REPLY: u8 = 0x1C;
    pub const LOST_TASKS: u8 = 0x1D;
    pub const NOTIFY: u8 = 0x1E;

    pub const FETCH_REQUEST: u8 = 0x20;
    pub const FETCH_RESPONSE: u8 = 0x21;
    pub const FETCH_MISS: u8 = 0x22;
    pub const SUBMIT: u8 = 0x23;
    pub const GET: u8 = 0x24;
    pub const GET_REPLY: u8 = 0x25;
    pub const WAIT: u8 = 0x26;
    pub const WAIT_REPLY: u8 = 0x27;
    pub const CANCEL_WAIT: u8 = 0x28;
    pub const PUT: u8 = 0x29;
    pub const PUT_REPLY: u8 = 0x2A;

    pub const SPILL: u8 = 0x30;
    pub const HEARTBEAT: u8 = 0x31;
    pub const PLACEMENT: u8 = 0x32;
    pub const ASSIGN: u8 = 0x33;
    pub const WORKER_STARTED: u8 = 0x34;
    pub const TASK_FINISHED: u8 = 0x35;
    pub const RECONSTRUCT: u8 = 0x36;
    pub const RECONSTRUCT_FAILED: u8 = 0x37;
    pub const TIMER: u8 = 0x38;
    pub const RESTART: u8 = 0x39;
    pub const DROP_OBJECT: u8 = 0x3B;
    pub const DELIVERY_FAILED: u8 = 0x3C;
}

fn write_control_error(w: &mut WireWriter, e: &ControlError) {
    match e {
        ControlError::WrongShard { expected } => {
            w.u8(1).u32(*expected);
        }
        ControlError::ImmutableFieldConflict => {
            w.u8(2);
        }
        ControlError::IllegalTransition { from, to } => {
            w.u8(3);
            from.write(w);
            to.write(w);
        }
        ControlError::UnknownKey => {
            w.u8(4);
        }
        ControlError::ShardUnavailable => {
            w.u8(5);
        }
        ControlError::BadRecord(m) => {
            w.u8(6).str(m);
        }
    }
}

fn read_control_error(code: u8, r: &mut WireReader<'_>) -> Result<ControlError, CodecError> {
    Ok(match code {
        1 => ControlError::WrongShard { expected: r.u32()? },
        2 => ControlError::ImmutableFieldConflict,
        3 => ControlError::IllegalTransition { from: TaskState::read(r)?, to: TaskState::read(r)? },
        4 => ControlError::UnknownKey,
        5 => ControlError::ShardUnavailable,
        6 => ControlError::BadRecord(r.str()?.to_owned()),
        k => return Err(CodecError::malformed(format!("unknown control error code {k}"))),
    })
}

fn write_str_result(w: &mut WireWriter, res: &Result<Vec<u8>, String>) {
    match res {
        Ok(b) => w.u8(0).bytes(b),
        Err(e) => w.u8(1).str(e),
    };
}

fn read_str_result(r: &mut WireReader<'_>) -> Result<Result<Vec<u8>, String>, CodecError> {
    Ok(match r.u8()? {
        0 => Ok(r.bytes()?.to_vec()),
        1 => Err(r.str()?.to_owned()),
        k => return Err(CodecError::malformed(format!("bad result flag {k}"))),
    })
}

fn write_key(w: &mut WireWriter, key: &[u8; 16]) {
    w.raw(key);
}

fn read_key(r: &mut WireReader<'_>) -> Result<[u8; 16], CodecError> {
    Ok(r.take(16)?.try_into().unwrap())
}

fn write_resources(w: &mut WireWriter, res: &Resources) {
    w.u32(res.cpu).u32(res.gpu);
}

fn read_resources(r: &mut WireReader<'_>) -> Result<Resources, CodecError> {
    Ok(Resources::new(r.u32()?, r.u32()?))
}

fn write_blobs(w: &mut WireWriter, blobs: &[Vec<u8>]) {
    w.u32(len_u32(blobs.len()));
    for b in blobs {
        w.bytes(b);
    }
}

fn read_blobs(r: &mut WireReader<'_>) -> Result<Vec<Vec<u8>>, CodecError> {
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(r.remaining() / 4));
    for _ in 0..n {
        out.push(r.bytes()?.to_vec());
    }
    Ok(out)
}

impl Message {
    pub fn frame_type(&self) -> u8 {
        use frame_type::*;
        match self {
            Message::PutRecord { .. } => PUT_RECORD,
            Message::SubmitRecord { .. } => SUBMIT_RECORD,
            Message::UpdateState { .. } => UPDATE_STATE,
            Message::AddLocation { .. } => ADD_LOCATION,
            Message::RemoveLocation { .. } => REMOVE_LOCATION,
            Message::Subscribe { .. } => SUBSCRIBE,
            Message::Unsubscribe { .. } => UNSUBSCRIBE,
            Message::Read { .. } => READ,
            Message::Scan { .. } => SCAN,
            Message::NodeDown { .. } => NODE_DOWN,
            Message::Ack { .. } => ACK,
            Message::Record { .. } => RECORD,
            Message::ScanReply { .. } => SCAN_REPLY,
            Message::LostTasks { .. } => LOST_TASKS,
            Message::Notify { .. } => NOTIFY,
            Message::FetchRequest { .. } => FETCH_REQUEST,
            Message::FetchResponse { .. } => FETCH_RESPONSE,
            Message::FetchMiss { .. } => FETCH_MISS,
            Message::Submit { .. } => SUBMIT,
            Message::Get { .. } => GET,
            Message::GetReply { .. } => GET_REPLY,
            Message::Wait { .. } => WAIT,
            Message::WaitReply { .. } => WAIT_REPLY,
            Message::CancelWait { .. } => CANCEL_WAIT,
            Message::Put { .. } => PUT,
            Message::PutReply { .. } => PUT_REPLY,
            Message::Spill { .. } => SPILL,
            Message::Heartbeat { .. } => HEARTBEAT,
            Message::Placement { .. } => PLACEMENT,
            Message::Assign { .. } => ASSIGN,
            Message::WorkerStarted { .. } => WORKER_STARTED,
            Message::TaskFinished { .. } => TASK_FINISHED,
            Message::Reconstruct { .. } => RECONSTRUCT,
            Message::ReconstructFailed { .. } => RECONSTRUCT_FAILED,
            Message::Timer { .. } => TIMER,
            Message::Restart { .. } => RESTART,
            Message::DropObject { .. } => DROP_OBJECT,
            Message::DeliveryFailed { .. } => DELIVERY_FAILED,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut w = WireWriter::with_capacity(64);
        self.write_payload(&mut w);
        w.finish()
    }

    fn write_payload(&self, w: &mut WireWriter) {
        match self {
            Message::PutRecord { req, table, key, record } => {
                w.u64(*req);
                table.write(w);
                write_key(w, key);
                w.bytes(record);
            }
            Message::SubmitRecord { req, spec, node } => {
                w.u64(*req);
                spec.write(w);
                w.node_id(*node);
            }
            Message::UpdateState { req, task, state, node } => {
                w.u64(*req).task_id(task);
                state.write(w);
                w.opt_node(*node);
            }
            Message::AddLocation { object, node, size, creating_task } => {
                w.object_id(object).node_id(*node).u64(*size).opt_task(creating_task.as_ref());
            }
            Message::RemoveLocation { object, node } => {
                w.object_id(object).node_id(*node);
            }
            Message::Subscribe { req, channel } => {
                w.u64(*req).bytes(&channel.to_bytes());
            }
            Message::Unsubscribe { channel } => {
                w.bytes(&channel.to_bytes());
            }
            Message::Read { req, table, key } => {
                w.u64(*req);
                table.write(w);
                write_key(w, key);
            }
            Message::Scan { req, table } => {
                w.u64(*req);
                table.write(w);
            }
            Message::NodeDown { req, node } => {
                w.u64(*req).node_id(*node);
            }
            Message::Ack { req, result } => {
                w.u64(*req);
                match result {
                    Ok(()) => {
                        w.u8(0);
                    }
                    Err(e) => write_control_error(w, e),
                }
            }
            Message::Record { req, record } => {
                w.u64(*req);
                match record {
                    Some(r) => w.u8(1).bytes(r),
                    None => w.u8(0),
                };
            }
            Message::ScanReply { req, shard, records } => {
                w.u64(*req).u32(*shard);
                write_blobs(w, records);
            }
            Message::LostTasks { req, specs } => {
                w.u64(*req).u32(len_u32(specs.len()));
                for s in specs {
                    s.write(w);
                }
            }
            Message::Notify { channel, record } => {
                w.bytes(&channel.to_bytes()).bytes(record);
            }
            Message::FetchRequest { object } | Message::FetchMiss { object } => {
                w.object_id(object);
            }
            Message::FetchResponse { object, payload } => {
                w.object_id(object).bytes(payload);
            }
            Message::Submit { spec } => spec.write(w),
            Message::Get { req, object } => {
                w.u64(*req).object_id(object);
            }
            Message::GetReply { req, result } => {
                w.u64(*req);
                write_str_result(w, result);
            }
            Message::Wait { req, objects } => {
                w.u64(*req).object_ids(objects);
            }
            Message::WaitReply { req, ready, snapshot } => {
                w.u64(*req).object_ids(ready).bool(*snapshot);
            }
            Message::CancelWait { req } => {
                w.u64(*req);
            }
            Message::Put { req, object, payload } => {
                w.u64(*req).object_id(object).bytes(payload);
            }
            Message::PutReply { req, result } => {
                w.u64(*req);
                match result {
                    Ok(()) => w.u8(0),
                    Err(e) => w.u8(1).str(e),
                };
            }
            Message::Spill { spec, origin } => {
                spec.write(w);
                w.node_id(*origin);
            }
            Message::Heartbeat { node, total, available, queue_len } => {
                w.node_id(*node);
                write_resources(w, total);
                write_resources(w, available);
                w.u32(*queue_len);
            }
            Message::Placement { spec, non_spillable } => {
                spec.write(w);
                w.bool(*non_spillable);
            }
            Message::Assign { worker, epoch, spec } => {
                w.u32(*worker).u64(*epoch);
                spec.write(w);
            }
            Message::WorkerStarted { worker, epoch, task } => {
                w.u32(*worker).u64(*epoch).task_id(task);
            }
            Message::TaskFinished { worker, epoch, task, returns } => {
                w.u32(*worker).u64(*epoch).task_id(task);
                write_blobs(w, returns);
            }
            Message::Reconstruct { object } => {
                w.object_id(object);
            }
            Message::ReconstructFailed { object, reason } => {
                w.object_id(object).str(reason);
            }
            Message::Timer { kind } => {
                w.u8(*kind as u8);
            }
            Message::Restart { kind, worker } => {
                w.u8(*kind as u8).u32(*worker);
            }
            Message::DropObject { object } => {
                w.object_id(object);
            }
            Message::DeliveryFailed { to, inner } => {
                to.write(w);
                w.u8(inner.frame_type());
                w.bytes(&inner.encode_payload());
            }
        }
    }

    pub fn decode(frame_type: u8, payload: &[u8]) -> Result<Message, CodecError> {
        let mut r = WireReader::new(payload);
        let msg = Self::read_payload(frame_type, &mut r)?;
        r.expect_end()?;
        Ok(msg)
    }

    fn read_payload(ty: u8, r: &mut WireReader<'_>) -> Result<Message, CodecError> {
        use frame_type::*;
        Ok(match ty {
            PUT_RECORD => Message::PutRecord {
                req: r.u64()?,
                table: Table::read(r)?,
                key: read_key(r)?,
                record: r.bytes()?.to_vec(),
            },
            SUBMIT_RECORD => Message::SubmitRecord { req: r.u64()?, spec: TaskSpec::read(r)?, node: r.node_id()? },
            UPDATE_STATE => Message::UpdateState {
                req: r.u64()?,
                task: r.task_id()?,
                state: TaskState::read(r)?,
                node: r.opt_node()?,
            },
            ADD_LOCATION => Message::AddLocation {
                object: r.object_id()?,
                node: r.node_id()?,
                size: r.u64()?,
                creating_task: r.opt_task()?,
            },
            REMOVE_LOCATION => Message::RemoveLocation { object: r.object_id()?, node: r.node_id()? },
            SUBSCRIBE => Message::Subscribe { req: r.u64()?, channel: Channel::from_bytes(r.bytes()?)? },
            UNSUBSCRIBE => Message::Unsubscribe { channel: Channel::from_bytes(r.bytes()?)? },
            READ => Message::Read { req: r.u64()?, table: Table::read(r)?, key: read_key(r)? },
            SCAN => Message::Scan { req: r.u64()?, table: Table::read(r)? },
            NODE_DOWN => Message::NodeDown { req: r.u64()?, node: r.node_id()? },
            ACK => {
                let req = r.u64()?;
                let result = match r.u8()? {
                    0 => Ok(()),
                    code => Err(read_control_error(code, r)?),
                };
                Message::Ack { req, result }
            }
            RECORD => {
                let req = r.u64()?;
                let record = if r.bool()? { Some(r.bytes()?.to_vec()) } else { None };
                Message::Record { req, record }
            }
            SCAN_REPLY => Message::ScanReply { req: r.u64()?, shard: r.u32()?, records: read_blobs(r)? },
            LOST_TASKS => {
                let req = r.u64()?;
                let n = r.u32()? as usize;
                let mut specs = Vec::with_capacity(n.min(r.remaining() / 16));
                for _ in 0..n {
                    specs.push(TaskSpec::read(r)?);
                }
                Message::LostTasks { req, specs }
            }
            NOTIFY => Message::Notify { channel: Channel::from_bytes(r.bytes()?)?, record: r.bytes()?.to_vec() },
            FETCH_REQUEST => Message::FetchRequest { object: r.object_id()? },
            FETCH_RESPONSE => Message::FetchResponse { object: r.object_id()?, payload: r.bytes()?.to_vec() },
            FETCH_MISS => Message::FetchMiss { object: r.object_id()? },
            SUBMIT => Message::Submit { spec: TaskSpec::read(r)? },
            GET => Message::Get { req: r.u64()?, object: r.object_id()? },
            GET_REPLY => Message::GetReply { req: r.u64()?, result: read_str_result(r)? },
            WAIT => Message::Wait { req: r.u64()?, objects: r.object_ids()? },
            WAIT_REPLY => Message::WaitReply { req: r.u64()?, ready: r.object_ids()?, snapshot: r.bool()? },
            CANCEL_WAIT => Message::CancelWait { req: r.u64()? },
            PUT => Message::Put { req: r.u64()?, object: r.object_id()?, payload: r.bytes()?.to_vec() },
            PUT_REPLY => {
                let req = r.u64()?;
                let result = match r.u8()? {
                    0 => Ok(()),
                    1 => Err(r.str()?.to_owned()),
                    k => return Err(CodecError::malformed(format!("bad result flag {k}"))),
                };
                Message::PutReply { req, result }
            }
            SPILL => Message::Spill { spec: TaskSpec::read(r)?, origin: r.node_id()? },
            HEARTBEAT => Message::Heartbeat {
                node: r.node_id()?,
                total: read_resources(r)?,
                available: read_resources(r)?,
                queue_len: r.u32()?,
            },
            PLACEMENT => Message::Placement { spec: TaskSpec::read(r)?, non_spillable: r.bool()? },
            ASSIGN => Message::Assign { worker: r.u32()?, epoch: r.u64()?, spec: TaskSpec::read(r)? },
            WORKER_STARTED => Message::WorkerStarted { worker: r.u32()?, epoch: r.u64()?, task: r.task_id()? },
            TASK_FINISHED => Message::TaskFinished {
                worker: r.u32()?,
                epoch: r.u64()?,
                task: r.task_id()?,
                returns: read_blobs(r)?,
            },
            RECONSTRUCT => Message::Reconstruct { object: r.object_id()? },
            RECONSTRUCT_FAILED => Message::ReconstructFailed { object: r.object_id()?, reason: r.str()?.to_owned() },
            TIMER => Message::Timer {
                kind: match r.u8()? {
                    0 => TimerKind::Heartbeat,
                    1 => TimerKind::Monitor,
                    2 => TimerKind::Retry,
                    k => return Err(CodecError::malformed(format!("unknown timer {k}"))),
                },
            },
            RESTART => Message::Restart {
                kind: match r.u8()? {
                    0 => ComponentKind::Worker,
                    1 => ComponentKind::LocalScheduler,
                    2 => ComponentKind::GlobalScheduler,
                    k => return Err(CodecError::malformed(format!("unknown component kind {k}"))),
                },
                worker: r.u32()?,
            },
            DROP_OBJECT => Message::DropObject { object: r.object_id()? },
            DELIVERY_FAILED => {
                let to = Addr::read(r)?;
                let inner_ty = r.u8()?;
                let inner = Message::decode(inner_ty, r.bytes()?)?;
                Message::DeliveryFailed { to, inner: Box::new(inner) }
            }
            other => return Err(CodecError::malformed(format!("unknown frame type {other:#04x}"))),
        })
    }

    /// Short label for logs and message counters.
    pub fn label(&self) -> &'static str {
        match self {
            Message::PutRecord { .. } => "put_record",
            Message::SubmitRecord { .. } => "submit_record",
            Message::UpdateState { .. } => "update_state",
            Message::AddLocation { .. } => "add_location",
            Message::RemoveLocation { .. } => "remove_location",
            Message::Subscribe { .. } => "subscribe",
            Message::Unsubscribe { .. } => "unsubscribe",
            Message::Read { .. } => "read",
            Message::Scan { .. } => "scan",
            Message::NodeDown { .. } => "node_down",
            Message::Ack { .. } => "ack",
            Message::Record { .. } => "record",
            Message::ScanReply { .. } => "scan_reply",
            Message::LostTasks { .. } => "lost_tasks",
            Message::Notify { .. } => "notify",
            Message::FetchRequest { .. } => "fetch_request",
            Message::FetchResponse { .. } => "fetch_response",
            Message::FetchMiss { .. } => "fetch_miss",
            Message::Submit { .. } => "submit",
            Message::Get { .. } => "get",
            Message::GetReply { .. } => "get_reply",
            Message::Wait { .. } => "wait",
            Message::WaitReply { .. } => "wait_reply",
            Message::CancelWait { .. } => "cancel_wait",
            Message::Put { .. } => "put",
            Message::PutReply { .. } => "put_reply",
            Message::Spill { .. } => "spill",
            Message::Heartbeat { .. } => "heartbeat",
            Message::Placement { .. } => "placement",
            Message::Assign { .. } => "assign",
            Message::WorkerStarted { .. } => "worker_started",
            Message::TaskFinished { .. } => "task_finished",
            Message::Reconstruct { .. } => "reconstruct",
            Message::ReconstructFailed { .. } => "reconstruct_failed",
            Message::Timer { .. } => "timer",
            Message::Restart { .. } => "restart",
            Message::DropObject { .. } => "drop_object",
            Message::DeliveryFailed { .. } => "delivery_failed",
        }
    }
}

