//! Task specifications, the task lifecycle, and event-log records.

use std::fmt;

use crate::error::CodecError;
use crate::ids::{derive_object_id, NodeId, ObjectId, TaskId};
use crate::value::{read_value, write_value, Value};
use crate::wire::{len_u32, WireReader, WireWriter};

/// Counting resources a task demands and a node provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Resources {
    pub cpu: u32,
    pub gpu: u32,
}

impl Resources {
    pub const fn new(cpu: u32, gpu: u32) -> Self {
        Self { cpu, gpu }
    }

    pub const fn cpu(cpu: u32) -> Self {
        Self { cpu, gpu: 0 }
    }

    /// True when every component of `self` is within `other`.
    pub fn fits_in(&self, other: &Resources) -> bool {
        self.cpu <= other.cpu && self.gpu <= other.gpu
    }

    pub fn saturating_sub(&self, other: &Resources) -> Resources {
        Resources::new(self.cpu.saturating_sub(other.cpu), self.gpu.saturating_sub(other.gpu))
    }

    pub fn add(&self, other: &Resources) -> Resources {
        Resources::new(self.cpu + other.cpu, self.gpu + other.gpu)
    }
}

impl fmt::Display for Resources {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cpu:{} gpu:{}", self.cpu, self.gpu)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Value(Value),
    Future(ObjectId),
}

impl From<Value> for Arg {
    fn from(v: Value) -> Self {
        Arg::Value(v)
    }
}

impl From<ObjectId> for Arg {
    fn from(id: ObjectId) -> Self {
        Arg::Future(id)
    }
}

impl From<i64> for Arg {
    fn from(v: i64) -> Self {
        Arg::Value(Value::Int(v))
    }
}

impl From<f64> for Arg {
    fn from(v: f64) -> Self {
        Arg::Value(Value::Float(v))
    }
}

impl From<&str> for Arg {
    fn from(v: &str) -> Self {
        Arg::Value(Value::from(v))
    }
}

const ARG_INLINE: u8 = 0;
const ARG_FUTURE: u8 = 1;

/// Immutable description of one task invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub function_name: String,
    pub args: Vec<Arg>,
    pub num_returns: u32,
    pub resource_demand: Resources,
    pub rng_seed: u64,
}

impl TaskSpec {
    /// Builds a spec; the seed is taken from the task ID so replays reuse it.
    pub fn new(
        task_id: TaskId,
        function_name: impl Into<String>,
        args: Vec<Arg>,
        num_returns: u32,
        resource_demand: Resources,
    ) -> Self {
        assert!(num_returns >= 1, "a task must have at least one return");
        TaskSpec {
            task_id,
            function_name: function_name.into(),
            args,
            num_returns,
            resource_demand,
            rng_seed: task_id.rng_seed(),
        }
    }

    pub fn return_id(&self, index: u32) -> ObjectId {
        derive_object_id(&self.task_id, index)
    }

    pub fn return_ids(&self) -> Vec<ObjectId> {
        (0..self.num_returns).map(|i| self.return_id(i)).collect()
    }

    /// Object IDs of the future arguments, in argument order.
    pub fn future_args(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.args.iter().filter_map(|a| match a {
            Arg::Future(id) => Some(*id),
            Arg::Value(_) => None,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::with_capacity(64);
        self.write(&mut w);
        w.finish()
    }

    pub fn write(&self, w: &mut WireWriter) {
        w.task_id(&self.task_id);
        write_value(w, &Value::Str(self.function_name.clone())).expect("strings have no depth");
        w.u32(len_u32(self.args.len()));
        for arg in &self.args {
            match arg {
                Arg::Value(v) => {
                    w.u8(ARG_INLINE);
                    // specs are built from validated values; depth errors
                    // surface at submission time, see `validate`
                    write_value(w, v).expect("argument depth checked at submission");
                }
                Arg::Future(id) => {
                    w.u8(ARG_FUTURE).object_id(id);
                }
            }
        }
        w.u32(self.num_returns)
            .u32(self.resource_demand.cpu)
            .u32(self.resource_demand.gpu)
            .u64(self.rng_seed);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = WireReader::new(bytes);
        let spec = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(spec)
    }

    pub fn read(r: &mut WireReader<'_>) -> Result<Self, CodecError> {
        let task_id = r.task_id()?;
        let function_name = match read_value(r)? {
            Value::Str(s) => s,
            other => return Err(CodecError::malformed(format!("function name must be Str, got {other:?}"))),
        };
        let n = r.u32()? as usize;
        let mut args = Vec::with_capacity(n.min(r.remaining()));
        for _ in 0..n {
            args.push(match r.u8()? {
                ARG_INLINE => Arg::Value(read_value(r)?),
                ARG_FUTURE => Arg::Future(r.object_id()?),
                k => return Err(CodecError::malformed(format!("unknown arg kind {k}"))),
            });
        }
        let num_returns = r.u32()?;
        if num_returns == 0 {
            return Err(CodecError::malformed("num_returns must be positive"));
        }
        let resource_demand = Resources::new(r.u32()?, r.u32()?);
        let rng_seed = r.u64()?;
        Ok(TaskSpec { task_id, function_name, args, num_returns, resource_demand, rng_seed })
    }

    /// Checks the inline arguments respect the value depth bound.
    pub fn validate(&self) -> Result<(), CodecError> {
        for arg in &self.args {
            if let Arg::Value(v) = arg {
                if v.depth() > crate::value::MAX_DEPTH {
                    return Err(CodecError::DepthExceeded);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskState {
    Submitted,
    QueuedLocal,
    Spilled,
    Assigned(NodeId),
    Running(NodeId),
    Done,
    Lost,
}

/// Node-free discriminant of [`TaskState`], used for transition checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateKind {
    Submitted,
    QueuedLocal,
    Spilled,
    Assigned,
    Running,
    Done,
    Lost,
}

impl StateKind {
    pub const ALL: [StateKind; 7] = [
        StateKind::Submitted,
        StateKind::QueuedLocal,
        StateKind::Spilled,
        StateKind::Assigned,
        StateKind::Running,
        StateKind::Done,
        StateKind::Lost,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StateKind::Submitted => "SUBMITTED",
            StateKind::QueuedLocal => "QUEUED_LOCAL",
            StateKind::Spilled => "SPILLED",
            StateKind::Assigned => "ASSIGNED",
            StateKind::Running => "RUNNING",
            StateKind::Done => "DONE",
            StateKind::Lost => "LOST",
        }
    }

    pub fn from_name(name: &str) -> Option<StateKind> {
        StateKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Every legal `(from, to)` pair of the task lifecycle.
///
/// Beyond the straight path SUBMITTED → QUEUED_LOCAL → {ASSIGNED, SPILLED} →
/// ASSIGNED → RUNNING → DONE, a task owned by a dead node (any pre-DONE local
/// state) becomes LOST, a DONE task whose output was lost becomes LOST before
/// replay, and a LOST task re-enters through SUBMITTED or QUEUED_LOCAL.
pub const LEGAL_TRANSITIONS: &[(StateKind, StateKind)] = &[
    (StateKind::Submitted, StateKind::QueuedLocal),
    (StateKind::QueuedLocal, StateKind::Assigned),
    (StateKind::QueuedLocal, StateKind::Spilled),
    (StateKind::Spilled, StateKind::Assigned),
    (StateKind::Assigned, StateKind::Running),
    (StateKind::Running, StateKind::Done),
    (StateKind::Assigned, StateKind::Lost),
    (StateKind::Running, StateKind::Lost),
    (StateKind::Submitted, StateKind::Lost),
    (StateKind::QueuedLocal, StateKind::Lost),
    (StateKind::Done, StateKind::Lost),
    (StateKind::Lost, StateKind::QueuedLocal),
    (StateKind::Lost, StateKind::Submitted),
];

pub fn is_legal_transition(from: StateKind, to: StateKind) -> bool {
    LEGAL_TRANSITIONS.contains(&(from, to))
}

impl TaskState {
    pub fn kind(&self) -> StateKind {
        match self {
            TaskState::Submitted => StateKind::Submitted,
            TaskState::QueuedLocal => StateKind::QueuedLocal,
            TaskState::Spilled => StateKind::Spilled,
            TaskState::Assigned(_) => StateKind::Assigned,
            TaskState::Running(_) => StateKind::Running,
            TaskState::Done => StateKind::Done,
            TaskState::Lost => StateKind::Lost,
        }
    }

    pub fn node(&self) -> Option<NodeId> {
        match self {
            TaskState::Assigned(n) | TaskState::Running(n) => Some(*n),
            _ => None,
        }
    }

    pub fn can_transition_to(&self, next: &TaskState) -> bool {
        is_legal_transition(self.kind(), next.kind())
    }

    pub fn write(&self, w: &mut WireWriter) {
        let tag = StateKind::ALL.iter().position(|k| *k == self.kind()).unwrap() as u8;
        w.u8(tag);
        if let Some(n) = self.node() {
            w.node_id(n);
        }
    }

    pub fn read(r: &mut WireReader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()? as usize;
        let kind = *StateKind::ALL
            .get(tag)
            .ok_or_else(|| CodecError::malformed(format!("unknown task state {tag}")))?;
        Ok(match kind {
            StateKind::Submitted => TaskState::Submitted,
            StateKind::QueuedLocal => TaskState::QueuedLocal,
            StateKind::Spilled => TaskState::Spilled,
            StateKind::Assigned => TaskState::Assigned(r.node_id()?),
            StateKind::Running => TaskState::Running(r.node_id()?),
            StateKind::Done => TaskState::Done,
            StateKind::Lost => TaskState::Lost,
        })
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Some(n) => write!(f, "{}({n})", self.kind().name()),
            None => f.write_str(self.kind().name()),
        }
    }
}

/// What an event-log record is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subject {
    Task(TaskId),
    Object(ObjectId),
}

impl Subject {
    pub fn key(&self) -> [u8; 16] {
        match self {
            Subject::Task(t) => t.0,
            Subject::Object(o) => o.0,
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Task(t) => write!(f, "task:{t}"),
            Subject::Object(o) => write!(f, "object:{o}"),
        }
    }
}

/// Object-related transitions recorded alongside task states.
pub const EV_ADD_LOCATION: &str = "ADD_LOCATION";
pub const EV_REMOVE_LOCATION: &str = "REMOVE_LOCATION";
pub const EV_OBJECT_LOST: &str = "OBJECT_LOST";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    /// Microseconds (simulated ticks or monotonic wall time).
    pub timestamp: u64,
    pub subject: Subject,
    pub transition: String,
    pub node_id: String,
}

impl EventRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::with_capacity(48);
        self.write(&mut w);
        w.finish()
    }

    pub fn write(&self, w: &mut WireWriter) {
        w.u64(self.timestamp);
        match &self.subject {
            Subject::Task(t) => w.u8(0).task_id(t),
            Subject::Object(o) => w.u8(1).object_id(o),
        };
        w.str(&self.transition).str(&self.node_id);
    }

    pub fn read(r: &mut WireReader<'_>) -> Result<Self, CodecError> {
        let timestamp = r.u64()?;
        let subject = match r.u8()? {
            0 => Subject::Task(r.task_id()?),
            1 => Subject::Object(r.object_id()?),
            k => return Err(CodecError::malformed(format!("unknown subject kind {k}"))),
        };
        let transition = r.str()?.to_owned();
        let node_id = r.str()?.to_owned();
        Ok(EventRecord { timestamp, subject, transition, node_id })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = WireReader::new(bytes);
        let ev = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(ev)
    }
}
