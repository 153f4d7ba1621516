use thiserror::Error;

use crate::task::TaskState;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("value nesting exceeds the depth limit")]
    DepthExceeded,
    #[error("malformed encoding: {0}")]
    Malformed(String),
}

impl CodecError {
    pub fn malformed(msg: impl Into<String>) -> Self {
        CodecError::Malformed(msg.into())
    }
}

/// Errors returned by control-plane shards. These travel over the wire, so
/// each variant has a stable code.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("key routes to shard {expected}, not this shard")]
    WrongShard { expected: u32 },
    #[error("write-once field already holds a different value")]
    ImmutableFieldConflict,
    #[error("illegal task state transition {from} -> {to}")]
    IllegalTransition { from: TaskState, to: TaskState },
    #[error("no record for key")]
    UnknownKey,
    #[error("shard unavailable")]
    ShardUnavailable,
    #[error("malformed record: {0}")]
    BadRecord(String),
}

impl From<CodecError> for ControlError {
    fn from(e: CodecError) -> Self {
        ControlError::BadRecord(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("object already sealed with different bytes")]
    DuplicateConflict,
    #[error("object of {size} bytes does not fit: {used} of {capacity} bytes used")]
    CapacityExceeded { size: u64, used: u64, capacity: u64 },
    #[error("timed out waiting for object")]
    Timeout,
    #[error("source node no longer holds the object")]
    SourceGone,
}

/// Errors surfaced by the driver-facing API.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApiError {
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("timed out")]
    Timeout,
    #[error("reconstruction failed: {0}")]
    ReconstructionFailed(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cluster connection lost")]
    Disconnected,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("port unavailable: {0}")]
    PortUnavailable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Api(#[from] ApiError),
}
