//! Sharded control plane: task, object, function and event tables with
//! publish/subscribe notification.
//!
//! All other components keep only soft state; anything they need after a
//! restart is recovered by scanning these tables and resubscribing.

mod records;
mod shard;

pub use records::{FunctionEntry, ObjectTableEntry, TaskTableEntry};
pub use shard::{Shard, ShardStore};

/// Routes a 16-byte key to a shard: the first four bytes as a big-endian
/// integer, modulo the shard count.
pub fn shard_of(key: &[u8; 16], num_shards: u32) -> u32 {
    assert!(num_shards >= 1, "need at least one shard");
    let prefix = u32::from_be_bytes([key[0], key[1], key[2], key[3]]);
    prefix % num_shards
}
