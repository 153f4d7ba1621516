//! Content-derived identifiers for tasks, objects and nodes.
//!
//! Task and object IDs are truncated SHA-256 digests. A task's ID is derived
//! from its parent's ID and the parent's submission counter, so replaying a
//! parent regenerates the exact same child IDs. An object ID is derived from
//! its creating task and the return index, which is what lets an [`ObjectId`]
//! stand in as the future for that return value.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

/// Width in bytes of every task and object identifier.
pub const ID_LEN: usize = 16;

/// Separator byte placed between the task ID and return index when deriving
/// object IDs. Keeps the two derivations from ever sharing a preimage.
const OBJECT_DOMAIN: u8 = 0xFF;

macro_rules! id_type {
    ($name:ident, $short:literal) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub [u8; ID_LEN]);

        impl $name {
            pub const fn from_bytes(bytes: [u8; ID_LEN]) -> Self {
                Self(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; ID_LEN] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            /// Parses a 32-character hex string.
            pub fn from_hex(s: &str) -> Option<Self> {
                let raw = hex::decode(s).ok()?;
                let bytes: [u8; ID_LEN] = raw.try_into().ok()?;
                Some(Self(bytes))
            }

            /// First eight hex characters, for compact human output.
            pub fn short(&self) -> String {
                hex::encode(&self.0[..4])
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($short, "({})"), self.short())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }
    };
}

id_type!(TaskId, "T");
id_type!(ObjectId, "O");

fn sha_prefix(parts: &[&[u8]]) -> [u8; ID_LEN] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut out = [0u8; ID_LEN];
    out.copy_from_slice(&digest[..ID_LEN]);
    out
}

/// Derives the ID of the `index`-th task submitted by `parent`.
pub fn derive_task_id(parent: &TaskId, index: u32) -> TaskId {
    TaskId(sha_prefix(&[&parent.0, &index.to_be_bytes()]))
}

/// Derives the ID of the `return_index`-th return value of `task`.
pub fn derive_object_id(task: &TaskId, return_index: u32) -> ObjectId {
    ObjectId(sha_prefix(&[&task.0, &[OBJECT_DOMAIN], &return_index.to_be_bytes()]))
}

impl TaskId {
    /// The root task context of a driver program. Distinct seeds give
    /// disjoint ID spaces.
    pub fn driver_root(seed: u64, driver: u32) -> TaskId {
        TaskId(sha_prefix(&[b"driver", &seed.to_be_bytes(), &driver.to_be_bytes()]))
    }

    /// Seed handed to the task's kernel: the low eight bytes of the ID.
    pub fn rng_seed(&self) -> u64 {
        let mut low = [0u8; 8];
        low.copy_from_slice(&self.0[8..]);
        u64::from_be_bytes(low)
    }
}

/// Identifier of a cluster node. Rendered as `node-NNNN`, so the numeric
/// order and the lexicographic order of the rendered names agree.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node-{:04}", self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("node-").unwrap_or(s);
        digits
            .parse::<u32>()
            .map(NodeId)
            .map_err(|_| format!("invalid node id: {s:?}"))
    }
}
