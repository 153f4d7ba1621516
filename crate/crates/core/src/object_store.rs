//! Per-node store of sealed, immutable object payloads.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::error::StoreError;
use crate::ids::ObjectId;

pub const DEFAULT_CAPACITY: u64 = 512 * 1024 * 1024;

#[derive(Debug, Default)]
struct Inner {
    objects: HashMap<ObjectId, Arc<[u8]>>,
    used: u64,
}

/// Shared by the node's scheduler and its workers. Payloads are handed out
/// as `Arc`s so readers never copy or observe partial bytes.
#[derive(Debug)]
pub struct ObjectStore {
    inner: Mutex<Inner>,
    sealed: Condvar,
    capacity: u64,
}

impl ObjectStore {
    pub fn new(capacity: u64) -> Self {
        ObjectStore { inner: Mutex::new(Inner::default()), sealed: Condvar::new(), capacity }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.inner.lock().used
    }

    pub fn len(&self) -> usize {
        self.inner.lock().objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evict_check(&self, size: u64) -> Result<(), StoreError> {
        let used = self.inner.lock().used;
        admit(used, size, self.capacity)
    }

    /// Seals `payload` under `id`. Returns `Ok(true)` if newly stored and
    /// `Ok(false)` for an identical duplicate.
    pub fn put(&self, id: ObjectId, payload: &[u8]) -> Result<bool, StoreError> {
        let mut inner = self.inner.lock();
        if let Some(existing) = inner.objects.get(&id) {
            return if existing.as_ref() == payload { Ok(false) } else { Err(StoreError::DuplicateConflict) };
        }
        let size = payload.len() as u64;
        admit(inner.used, size, self.capacity)?;
        inner.used += size;
        inner.objects.insert(id, Arc::from(payload));
        drop(inner);
        self.sealed.notify_all();
        Ok(true)
    }

    /// Drops every object, as when the hosting node dies.
    pub fn clear(&self) {
        let mut inner = self.inner.lock();
        inner.objects.clear();
        inner.used = 0;
    }

    pub fn try_get(&self, id: &ObjectId) -> Option<Arc<[u8]>> {
        self.inner.lock().objects.get(id).cloned()
    }

    pub fn contains(&self, id: &ObjectId) -> bool {
        self.inner.lock().objects.contains_key(id)
    }

    /// Blocks until `id` is sealed locally or the timeout passes.
    pub fn get_local(&self, id: &ObjectId, timeout: Duration) -> Result<Arc<[u8]>, StoreError> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.inner.lock();
        loop {
            if let Some(p) = inner.objects.get(id) {
                return Ok(p.clone());
            }
            if self.sealed.wait_until(&mut inner, deadline).timed_out() {
                return inner.objects.get(id).cloned().ok_or(StoreError::Timeout);
            }
        }
    }

    /// Removes an object. Only fault injection uses this; the store never
    /// evicts on its own.
    pub fn remove(&self, id: &ObjectId) -> bool {
        let mut inner = self.inner.lock();
        match inner.objects.remove(id) {
            Some(p) => {
                inner.used -= p.len() as u64;
                true
            }
            None => false,
        }
    }

    pub fn ids(&self) -> Vec<ObjectId> {
        let mut ids: Vec<_> = self.inner.lock().objects.keys().copied().collect();
        ids.sort();
        ids
    }
}

fn admit(used: u64, size: u64, capacity: u64) -> Result<(), StoreError> {
    if used.saturating_add(size) <= capacity {
        Ok(())
    } else {
        Err(StoreError::CapacityExceeded { size, used, capacity })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{encode_value, Value};
    use std::thread;

    fn oid(b: u8) -> ObjectId {
        ObjectId([b; 16])
    }

    #[test]
    fn put_get_round_trip() {
        let s = ObjectStore::new(DEFAULT_CAPACITY);
        let enc = encode_value(&Value::Int(3)).unwrap();
        assert!(s.put(oid(1), &enc).unwrap());
        assert_eq!(&*s.get_local(&oid(1), Duration::ZERO).unwrap(), &enc[..]);
        assert!(!s.put(oid(1), &enc).unwrap());
        assert_eq!(s.put(oid(1), b"other"), Err(StoreError::DuplicateConflict));
    }

    #[test]
    fn capacity_enforced() {
        let s = ObjectStore::new(1 << 20);
        assert!(matches!(s.evict_check(2 << 20), Err(StoreError::CapacityExceeded { .. })));
        s.put(oid(1), &vec![0; 600 << 10]).unwrap();
        assert!(matches!(s.put(oid(2), &vec![0; 600 << 10]), Err(StoreError::CapacityExceeded { .. })));
        assert!(s.used() <= s.capacity());
        s.put(oid(3), &vec![0; 400 << 10]).unwrap();
        assert_eq!(s.used(), 1000 << 10);
    }

    #[test]
    fn absent_object_times_out() {
        let s = ObjectStore::new(DEFAULT_CAPACITY);
        let start = Instant::now();
        assert_eq!(s.get_local(&oid(9), Duration::from_millis(10)), Err(StoreError::Timeout));
        assert!(start.elapsed() >= Duration::from_millis(10));
    }

    #[test]
    fn concurrent_put_wakes_reader() {
        let s = Arc::new(ObjectStore::new(DEFAULT_CAPACITY));
        let reader = {
            let s = s.clone();
            thread::spawn(move || s.get_local(&oid(4), Duration::from_secs(5)))
        };
        thread::sleep(Duration::from_millis(5));
        s.put(oid(4), b"payload").unwrap();
        assert_eq!(&*reader.join().unwrap().unwrap(), b"payload");
    }

    #[test]
    fn readers_never_see_partial_payloads() {
        let s = Arc::new(ObjectStore::new(DEFAULT_CAPACITY));
        let payloads: Vec<Vec<u8>> = (0..64u8).map(|i| vec![i; 1 + i as usize * 97]).collect();
        let readers: Vec<_> = (0..4)
            .map(|_| {
                let s = s.clone();
                let payloads = payloads.clone();
                thread::spawn(move || {
                    for (i, p) in payloads.iter().enumerate() {
                        let got = s.get_local(&oid(i as u8), Duration::from_secs(5)).unwrap();
                        assert_eq!(&*got, &p[..]);
                    }
                })
            })
            .collect();
        for (i, p) in payloads.iter().enumerate() {
            s.put(oid(i as u8), p).unwrap();
        }
        for r in readers {
            r.join().unwrap();
        }
    }

    #[test]
    fn remove_releases_space() {
        let s = ObjectStore::new(100);
        s.put(oid(1), &[0; 80]).unwrap();
        assert!(s.remove(&oid(1)));
        assert_eq!(s.used(), 0);
        s.put(oid(2), &[0; 80]).unwrap();
        assert!(!s.remove(&oid(1)));
    }
}
