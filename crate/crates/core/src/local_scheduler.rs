//! Per-node ready queue, resource accounting and the dispatch rule.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::ids::{ObjectId, TaskId};
use crate::task::{Resources, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeResources {
    pub total: Resources,
    pub available: Resources,
}

impl NodeResources {
    pub fn new(total: Resources) -> Self {
        NodeResources { total, available: total }
    }

    pub fn try_reserve(&mut self, demand: &Resources) -> bool {
        if demand.fits_in(&self.available) {
            self.available = self.available.saturating_sub(demand);
            true
        } else {
            false
        }
    }

    pub fn release(&mut self, demand: &Resources) {
        let next = self.available.add(demand);
        debug_assert!(next.fits_in(&self.total), "released more than reserved");
        self.available = Resources::new(next.cpu.min(self.total.cpu), next.gpu.min(self.total.gpu));
    }
}

/// The last state this node wrote (or found) for a task it holds, so it only
/// issues legal transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    Submitted,
    Queued,
    Spilled,
    Assigned,
}

#[derive(Debug, Clone)]
pub struct QueuedTask {
    pub spec: TaskSpec,
    pub recorded: Recorded,
    /// Set for tasks placed here by a global scheduler.
    pub non_spillable: bool,
}

#[derive(Debug)]
pub enum Decision {
    Assign(QueuedTask),
    Spill(QueuedTask),
}

/// FIFO of runnable tasks plus the tasks blocked on missing arguments.
#[derive(Debug, Default)]
pub struct ReadyQueue {
    queue: VecDeque<QueuedTask>,
    waiting: BTreeMap<ObjectId, Vec<TaskId>>,
    blocked: BTreeMap<TaskId, (QueuedTask, usize)>,
    /// Queued tasks whose QUEUED_LOCAL write the shard has acknowledged.
    acked: BTreeSet<TaskId>,
    /// Ids in `queue`, mapped to whether they may be spilled.
    queued: BTreeMap<TaskId, bool>,
    spillable: usize,
    acked_spillable: usize,
}

impl ReadyQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn blocked_len(&self) -> usize {
        self.blocked.len()
    }

    pub fn contains(&self, id: &TaskId) -> bool {
        self.blocked.contains_key(id) || self.queued.contains_key(id)
    }

    pub fn queued_ids(&self) -> Vec<TaskId> {
        self.queue.iter().map(|t| t.spec.task_id).collect()
    }

    pub fn is_waiting_on(&self, object: &ObjectId) -> bool {
        self.waiting.contains_key(object)
    }

    pub fn waiting_objects(&self) -> impl Iterator<Item = &ObjectId> {
        self.waiting.keys()
    }

    /// Adds a task. With no missing arguments it is queued at once and
    /// returned; otherwise it is parked under each missing object.
    pub fn insert(&mut self, task: QueuedTask, missing: &[ObjectId]) -> Option<TaskId> {
        let id = task.spec.task_id;
        let mut distinct: Vec<ObjectId> = missing.to_vec();
        distinct.sort();
        distinct.dedup();
        if distinct.is_empty() {
            self.push(task);
            return Some(id);
        }
        for o in &distinct {
            self.waiting.entry(*o).or_default().push(id);
        }
        self.blocked.insert(id, (task, distinct.len()));
        None
    }

    fn push(&mut self, task: QueuedTask) {
        let id = task.spec.task_id;
        if !task.non_spillable {
            self.spillable += 1;
            if self.acked.contains(&id) {
                self.acked_spillable += 1;
            }
        }
        self.queued.insert(id, !task.non_spillable);
        self.queue.push_back(task);
    }

    /// Marks `object` available. Tasks whose last missing argument it was
    /// move to the queue; their ids are returned in the order they queued.
    pub fn satisfy(&mut self, object: &ObjectId) -> Vec<TaskId> {
        let Some(ids) = self.waiting.remove(object) else {
            return Vec::new();
        };
        let mut ready = Vec::new();
        for id in ids {
            let Some(entry) = self.blocked.get_mut(&id) else { continue };
            entry.1 -= 1;
            if entry.1 == 0 {
                let (task, _) = self.blocked.remove(&id).expect("present");
                self.push(task);
                ready.push(id);
            }
        }
        ready
    }

    pub fn mark_acked(&mut self, id: TaskId) {
        if self.blocked.contains_key(&id) {
            self.acked.insert(id);
        } else if let Some(spillable) = self.queued.get(&id) {
            if self.acked.insert(id) && *spillable {
                self.acked_spillable += 1;
            }
        }
    }

    pub fn get_mut(&mut self, id: &TaskId) -> Option<&mut QueuedTask> {
        if let Some((t, _)) = self.blocked.get_mut(id) {
            return Some(t);
        }
        self.queue.iter_mut().rev().find(|t| t.spec.task_id == *id)
    }

    /// Applies the dispatch rule over the queue in FIFO order: assign a task
    /// if it fits the available resources and a worker is idle; otherwise keep
    /// it if it is feasible on this node and within the first `theta` kept
    /// positions; otherwise spill it. Tasks placed here by a global scheduler
    /// are never spilled, and a task is only spilled once its queued state has
    /// been acknowledged.
    pub fn plan(&mut self, resources: &mut NodeResources, idle_workers: &mut usize, theta: usize) -> Vec<Decision> {
        let mut out = Vec::new();
        let mut kept = 0usize;
        let mut acked_ahead = self.acked_spillable;
        let mut i = 0;
        while i < self.queue.len() {
            if *idle_workers == 0 && acked_ahead == 0 {
                break;
            }
            let t = &self.queue[i];
            if !t.non_spillable && self.acked.contains(&t.spec.task_id) {
                acked_ahead -= 1;
            }
            let demand = self.queue[i].spec.resource_demand;
            if *idle_workers > 0 && resources.try_reserve(&demand) {
                *idle_workers -= 1;
                let task = self.take(i);
                out.push(Decision::Assign(task));
                continue;
            }
            kept += 1;
            let feasible = demand.fits_in(&resources.total);
            let t = &self.queue[i];
            if (!feasible || kept > theta) && !t.non_spillable && self.acked.contains(&t.spec.task_id) {
                kept -= 1;
                let task = self.take(i);
                out.push(Decision::Spill(task));
                continue;
            }
            i += 1;
        }
        out
    }

    fn take(&mut self, i: usize) -> QueuedTask {
        let task = self.queue.remove(i).expect("index in range");
        self.queued.remove(&task.spec.task_id);
        let acked = self.acked.remove(&task.spec.task_id);
        if !task.non_spillable {
            self.spillable -= 1;
            if acked {
                self.acked_spillable -= 1;
            }
        }
        task
    }

    /// Drops everything, returning the tasks that were held.
    pub fn clear(&mut self) -> Vec<QueuedTask> {
        let mut out: Vec<QueuedTask> = self.queue.drain(..).collect();
        let mut blocked: Vec<_> = std::mem::take(&mut self.blocked).into_iter().map(|(_, (t, _))| t).collect();
        blocked.sort_by_key(|t| t.spec.task_id);
        out.extend(blocked);
        self.waiting.clear();
        self.acked.clear();
        self.queued.clear();
        self.spillable = 0;
        self.acked_spillable = 0;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::derive_task_id;
    use crate::task::Arg;

    fn task(i: u32, demand: Resources, args: Vec<Arg>) -> QueuedTask {
        QueuedTask {
            spec: TaskSpec::new(derive_task_id(&TaskId::default(), i), "f", args, 1, demand),
            recorded: Recorded::Queued,
            non_spillable: false,
        }
    }

    fn ack_all(q: &mut ReadyQueue) {
        for id in q.queued_ids() {
            q.mark_acked(id);
        }
    }

    #[test]
    fn idle_worker_assigns_locally() {
        let mut q = ReadyQueue::new();
        q.insert(task(0, Resources::cpu(1), vec![]), &[]);
        let mut res = NodeResources::new(Resources::cpu(1));
        let mut idle = 1;
        let d = q.plan(&mut res, &mut idle, 4);
        assert!(matches!(d.as_slice(), [Decision::Assign(_)]));
        assert_eq!(res.available, Resources::cpu(0));
        assert_eq!(idle, 0);
    }

    #[test]
    fn infeasible_gpu_task_spills() {
        let mut q = ReadyQueue::new();
        q.insert(task(0, Resources::new(0, 1), vec![]), &[]);
        ack_all(&mut q);
        let mut res = NodeResources::new(Resources::cpu(4));
        let mut idle = 4;
        let d = q.plan(&mut res, &mut idle, 100);
        assert!(matches!(d.as_slice(), [Decision::Spill(_)]));
        assert_eq!(idle, 4);
    }

    #[test]
    fn ninth_task_spills_at_threshold_eight() {
        let mut q = ReadyQueue::new();
        for i in 0..9 {
            q.insert(task(i, Resources::cpu(1), vec![]), &[]);
        }
        ack_all(&mut q);
        let mut res = NodeResources::new(Resources::cpu(1));
        let mut idle = 0;
        let d = q.plan(&mut res, &mut idle, 8);
        assert_eq!(d.len(), 1);
        match &d[0] {
            Decision::Spill(t) => assert_eq!(t.spec.task_id, derive_task_id(&TaskId::default(), 8)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(q.queue_len(), 8);
    }

    #[test]
    fn unacked_tasks_are_held() {
        let mut q = ReadyQueue::new();
        q.insert(task(0, Resources::new(0, 1), vec![]), &[]);
        let mut res = NodeResources::new(Resources::cpu(1));
        let mut idle = 1;
        assert!(q.plan(&mut res, &mut idle, 0).is_empty());
        ack_all(&mut q);
        assert_eq!(q.plan(&mut res, &mut idle, 0).len(), 1);
    }

    #[test]
    fn placed_tasks_never_spill() {
        let mut q = ReadyQueue::new();
        for i in 0..4 {
            let mut t = task(i, Resources::cpu(1), vec![]);
            t.non_spillable = true;
            t.recorded = Recorded::Spilled;
            q.insert(t, &[]);
        }
        ack_all(&mut q);
        let mut res = NodeResources::new(Resources::cpu(1));
        let mut idle = 1;
        let d = q.plan(&mut res, &mut idle, 0);
        assert_eq!(d.len(), 1);
        assert!(matches!(d[0], Decision::Assign(_)));
        assert_eq!(q.queue_len(), 3);
    }

    #[test]
    fn blocked_until_all_args_satisfied() {
        let mut q = ReadyQueue::new();
        let a = ObjectId([1; 16]);
        let b = ObjectId([2; 16]);
        let t = task(0, Resources::cpu(1), vec![Arg::Future(a), Arg::Future(b), Arg::Future(a)]);
        let id = t.spec.task_id;
        assert_eq!(q.insert(t, &[a, b, a]), None);
        assert_eq!(q.queue_len(), 0);
        assert!(q.satisfy(&a).is_empty());
        assert!(q.satisfy(&a).is_empty());
        assert_eq!(q.satisfy(&b), vec![id]);
        assert_eq!(q.queue_len(), 1);
        assert_eq!(q.blocked_len(), 0);
    }

    #[test]
    fn fifo_respected_with_mixed_demands() {
        let mut q = ReadyQueue::new();
        q.insert(task(0, Resources::cpu(2), vec![]), &[]);
        q.insert(task(1, Resources::cpu(1), vec![]), &[]);
        let mut res = NodeResources::new(Resources::cpu(2));
        let mut idle = 2;
        let d = q.plan(&mut res, &mut idle, 8);
        assert_eq!(d.len(), 1);
        match &d[0] {
            Decision::Assign(t) => assert_eq!(t.spec.resource_demand, Resources::cpu(2)),
            other => panic!("unexpected {other:?}"),
        }
        res.release(&Resources::cpu(2));
        idle += 1;
        assert_eq!(q.plan(&mut res, &mut idle, 8).len(), 1);
    }
}
