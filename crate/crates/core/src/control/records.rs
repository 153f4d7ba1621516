use std::collections::BTreeSet;

use crate::error::CodecError;
use crate::ids::{NodeId, ObjectId, TaskId};
use crate::task::{TaskSpec, TaskState};
use crate::wire::{len_u32, WireReader, WireWriter};

/// Object table row: where copies live and which task created the object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectTableEntry {
    pub object_id: ObjectId,
    pub locations: BTreeSet<NodeId>,
    /// `None` only for objects put directly by a driver (lineage roots).
    pub creating_task: Option<TaskId>,
    pub size_bytes: u64,
    pub lost: bool,
}

impl ObjectTableEntry {
    pub fn new(object_id: ObjectId) -> Self {
        ObjectTableEntry { object_id, locations: BTreeSet::new(), creating_task: None, size_bytes: 0, lost: false }
    }

    pub fn is_available(&self) -> bool {
        !self.locations.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::with_capacity(64);
        w.object_id(&self.object_id).u32(len_u32(self.locations.len()));
        for n in &self.locations {
            w.node_id(*n);
        }
        w.opt_task(self.creating_task.as_ref()).u64(self.size_bytes).bool(self.lost);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = WireReader::new(bytes);
        let object_id = r.object_id()?;
        let n = r.u32()? as usize;
        let mut locations = BTreeSet::new();
        for _ in 0..n {
            locations.insert(r.node_id()?);
        }
        let creating_task = r.opt_task()?;
        let size_bytes = r.u64()?;
        let lost = r.bool()?;
        r.expect_end()?;
        if lost && !locations.is_empty() {
            return Err(CodecError::malformed("object marked lost with live locations"));
        }
        Ok(ObjectTableEntry { object_id, locations, creating_task, size_bytes, lost })
    }
}

/// Task table row. The spec is write-once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskTableEntry {
    pub task_id: TaskId,
    pub spec: TaskSpec,
    pub state: TaskState,
    /// Node currently responsible for the task, if any.
    pub node: Option<NodeId>,
}

impl TaskTableEntry {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::with_capacity(96);
        self.spec.write(&mut w);
        self.state.write(&mut w);
        w.opt_node(self.node);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = WireReader::new(bytes);
        let spec = TaskSpec::read(&mut r)?;
        let state = TaskState::read(&mut r)?;
        let node = r.opt_node()?;
        r.expect_end()?;
        Ok(TaskTableEntry { task_id: spec.task_id, spec, state, node })
    }
}

/// Function table row: the registered name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionEntry {
    pub name: String,
}

impl FunctionEntry {
    pub fn key(name: &str) -> [u8; 16] {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(name.as_bytes());
        let mut key = [0u8; 16];
        key.copy_from_slice(&digest[..16]);
        key
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::new();
        w.str(&self.name);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = WireReader::new(bytes);
        let name = r.str()?.to_owned();
        r.expect_end()?;
        Ok(FunctionEntry { name })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::derive_task_id;
    use crate::task::Resources;

    #[test]
    fn object_entry_round_trip() {
        let mut e = ObjectTableEntry::new(ObjectId([3; 16]));
        e.locations.insert(NodeId(2));
        e.locations.insert(NodeId(0));
        e.creating_task = Some(TaskId([1; 16]));
        e.size_bytes = 9;
        assert_eq!(ObjectTableEntry::decode(&e.encode()).unwrap(), e);
    }

    #[test]
    fn lost_with_locations_is_rejected() {
        let mut e = ObjectTableEntry::new(ObjectId([3; 16]));
        e.locations.insert(NodeId(2));
        e.lost = true;
        assert!(ObjectTableEntry::decode(&e.encode()).is_err());
    }

    #[test]
    fn task_entry_round_trip() {
        let tid = derive_task_id(&TaskId::default(), 0);
        let e = TaskTableEntry {
            task_id: tid,
            spec: TaskSpec::new(tid, "f", vec![], 1, Resources::cpu(1)),
            state: TaskState::Running(NodeId(1)),
            node: Some(NodeId(1)),
        };
        assert_eq!(TaskTableEntry::decode(&e.encode()).unwrap(), e);
    }
}
