//! A distributed task-execution framework: futures over an immutable object
//! store, a sharded control plane with publish/subscribe, hybrid local and
//! global scheduling, and lineage-based reconstruction of lost objects.
//!
//! Clusters run either on a deterministic simulated clock or over localhost
//! TCP. Start one with [`Cluster::start`] and use its [`Driver`].

pub mod cluster;
pub mod config;
pub mod control;
pub mod driver;
pub mod error;
pub mod fault;
pub mod global_scheduler;
pub mod ids;
pub mod inspect;
pub mod local_scheduler;
pub mod message;
pub mod node;
pub mod object_store;
pub mod runtime;
pub mod task;
pub mod value;
pub mod wire;
pub mod worker;

pub use cluster::{Cluster, SimStats};
pub use config::{ClusterConfig, Mode, NodeOverride};
pub use driver::Driver;
pub use error::{ApiError, ClusterError, CodecError, ControlError, StoreError};
pub use ids::{derive_object_id, derive_task_id, NodeId, ObjectId, TaskId};
pub use message::{Addr, ComponentKind, Table};
pub use task::{Arg, EventRecord, Resources, StateKind, Subject, TaskSpec, TaskState};
pub use value::{decode_value, encode_value, Value};
pub use worker::{FunctionRegistry, RemoteOptions, TaskContext};
