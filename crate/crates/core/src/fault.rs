//! Lineage over the control-plane tables, reconstruction coalescing, and
//! event-log audits used to check scheduling invariants after a run.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::control::{ObjectTableEntry, TaskTableEntry};
use crate::ids::{NodeId, ObjectId, TaskId};
use crate::message::Addr;
use crate::task::{EventRecord, Resources, StateKind, Subject, TaskSpec};

/// Coalesces concurrent reconstruction requests per object.
#[derive(Debug, Default)]
pub struct ReconstructionTracker {
    inflight: BTreeMap<ObjectId, Vec<Addr>>,
}

impl ReconstructionTracker {
    /// Records a request. Returns true if no reconstruction of `o` was
    /// already in progress.
    pub fn begin(&mut self, o: ObjectId, requester: Addr) -> bool {
        match self.inflight.get_mut(&o) {
            Some(who) => {
                if !who.contains(&requester) {
                    who.push(requester);
                }
                false
            }
            None => {
                self.inflight.insert(o, vec![requester]);
                true
            }
        }
    }

    pub fn finish(&mut self, o: ObjectId) -> Vec<Addr> {
        self.inflight.remove(&o).unwrap_or_default()
    }

    pub fn in_progress(&self) -> usize {
        self.inflight.len()
    }
}

/// Object → creating task and task → argument edges.
#[derive(Debug, Default, Clone)]
pub struct LineageGraph {
    producer: BTreeMap<ObjectId, TaskId>,
    inputs: BTreeMap<TaskId, Vec<ObjectId>>,
}

impl LineageGraph {
    pub fn from_specs<'a>(specs: impl IntoIterator<Item = &'a TaskSpec>) -> Self {
        let mut g = LineageGraph::default();
        for spec in specs {
            for o in spec.return_ids() {
                g.producer.insert(o, spec.task_id);
            }
            g.inputs.insert(spec.task_id, spec.future_args().collect());
        }
        g
    }

    pub fn from_tables(tasks: &[TaskTableEntry], objects: &[ObjectTableEntry]) -> Self {
        let mut g = Self::from_specs(tasks.iter().map(|t| &t.spec));
        for o in objects {
            if let Some(t) = o.creating_task {
                g.producer.insert(o.object_id, t);
            }
        }
        g
    }

    pub fn producer(&self, o: &ObjectId) -> Option<TaskId> {
        self.producer.get(o).copied()
    }

    pub fn inputs(&self, t: &TaskId) -> &[ObjectId] {
        self.inputs.get(t).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Tasks `t` transitively depends on, excluding `t`.
    pub fn ancestors(&self, t: &TaskId) -> BTreeSet<TaskId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![*t];
        while let Some(cur) = stack.pop() {
            for o in self.inputs(&cur) {
                if let Some(p) = self.producer(o) {
                    if seen.insert(p) {
                        stack.push(p);
                    }
                }
            }
        }
        seen
    }

    /// True when no task (transitively) consumes its own output.
    pub fn is_acyclic(&self) -> bool {
        self.inputs.keys().all(|t| !self.ancestors(t).contains(t))
    }

    /// Objects with no recorded producer: driver-put roots.
    pub fn roots<'a>(&'a self, objects: &'a [ObjectTableEntry]) -> impl Iterator<Item = ObjectId> + 'a {
        objects.iter().filter(|o| o.creating_task.is_none()).map(|o| o.object_id)
    }
}

fn task_events(events: &[EventRecord]) -> Vec<(u64, TaskId, StateKind, Option<NodeId>)> {
    let mut out: Vec<_> = events
        .iter()
        .filter_map(|e| match e.subject {
            Subject::Task(t) => {
                let kind = StateKind::from_name(&e.transition)?;
                Some((e.timestamp, t, kind, e.node_id.parse().ok()))
            }
            Subject::Object(_) => None,
        })
        .collect();
    out.sort_by_key(|(ts, ..)| *ts);
    out
}

/// Checks that no task was assigned or started before every producer of its
/// future arguments had reached DONE.
pub fn audit_firing_rule(specs: &[TaskSpec], events: &[EventRecord]) -> Result<(), Vec<String>> {
    let lineage = LineageGraph::from_specs(specs);
    let events = task_events(events);
    let mut first_done: HashMap<TaskId, u64> = HashMap::new();
    for (ts, t, kind, _) in &events {
        if *kind == StateKind::Done {
            first_done.entry(*t).or_insert(*ts);
        }
    }
    let mut violations = Vec::new();
    for (ts, t, kind, _) in &events {
        if !matches!(kind, StateKind::Assigned | StateKind::Running) {
            continue;
        }
        for o in lineage.inputs(t) {
            let Some(p) = lineage.producer(o) else { continue };
            match first_done.get(&p) {
                Some(done) if done <= ts => {}
                other => violations.push(format!(
                    "{t:?} {} at {ts} before producer {p:?} was done ({other:?})",
                    kind.name()
                )),
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Replays RUNNING/DONE/LOST events per node and checks that the summed
/// demand of running tasks never exceeds the node's total. Releases at a
/// timestamp are applied before acquisitions at the same timestamp.
pub fn audit_resource_safety(
    specs: &[TaskSpec],
    events: &[EventRecord],
    totals: &BTreeMap<NodeId, Resources>,
) -> Result<(), Vec<String>> {
    let demand: HashMap<TaskId, Resources> = specs.iter().map(|s| (s.task_id, s.resource_demand)).collect();
    let mut evs = task_events(events);
    evs.sort_by_key(|(ts, _, kind, _)| (*ts, *kind == StateKind::Running));
    let mut running_on: HashMap<TaskId, NodeId> = HashMap::new();
    let mut used: BTreeMap<NodeId, Resources> = BTreeMap::new();
    let mut violations = Vec::new();
    for (ts, t, kind, node) in evs {
        let d = demand.get(&t).copied().unwrap_or_default();
        match kind {
            StateKind::Running => {
                let Some(n) = node else { continue };
                if let Some(prev) = running_on.insert(t, n) {
                    let u = used.entry(prev).or_default();
                    *u = u.saturating_sub(&d);
                }
                let u = used.entry(n).or_default();
                *u = u.add(&d);
                let total = totals.get(&n).copied().unwrap_or_default();
                if !u.fits_in(&total) {
                    violations.push(format!("{n} runs {u} > total {total} at {ts}"));
                }
            }
            StateKind::Done | StateKind::Lost => {
                if let Some(n) = running_on.remove(&t) {
                    let u = used.entry(n).or_default();
                    *u = u.saturating_sub(&d);
                }
            }
            _ => {}
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Checks that every replayed task (one with more than one RUNNING event)
/// starts each run only after each producer's most recent DONE.
pub fn audit_replay_order(specs: &[TaskSpec], events: &[EventRecord]) -> Result<(), Vec<String>> {
    let lineage = LineageGraph::from_specs(specs);
    let evs = task_events(events);
    let mut last_done: HashMap<TaskId, u64> = HashMap::new();
    let mut violations = Vec::new();
    for (ts, t, kind, _) in &evs {
        match kind {
            StateKind::Done => {
                last_done.insert(*t, *ts);
            }
            StateKind::Running => {
                for o in lineage.inputs(t) {
                    let Some(p) = lineage.producer(o) else { continue };
                    if !last_done.get(&p).is_some_and(|d| d <= ts) {
                        violations.push(format!("{t:?} ran at {ts} before {p:?} was rebuilt"));
                    }
                }
            }
            _ => {}
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
