use std::collections::BTreeMap;

use crate::control::records::{FunctionEntry, ObjectTableEntry, TaskTableEntry};
use crate::control::shard_of;
use crate::error::ControlError;
use crate::ids::{NodeId, ObjectId, TaskId};
use crate::message::{Addr, Channel, Message, Table};
use crate::runtime::{Component, Env};
use crate::task::{
    EventRecord, StateKind, Subject, TaskSpec, TaskState, EV_ADD_LOCATION, EV_OBJECT_LOST, EV_REMOVE_LOCATION,
};

/// One shard's tables and subscriptions. Pure state; the [`Shard`]
/// component wraps it with message handling.
#[derive(Debug)]
pub struct ShardStore {
    index: u32,
    num_shards: u32,
    tasks: BTreeMap<TaskId, TaskTableEntry>,
    objects: BTreeMap<ObjectId, ObjectTableEntry>,
    functions: BTreeMap<[u8; 16], Vec<u8>>,
    events: Vec<EventRecord>,
    exact_subs: BTreeMap<Channel, Vec<Addr>>,
    table_subs: BTreeMap<Table, Vec<Addr>>,
    /// Publications produced by the last operations, drained by the caller.
    pending: Vec<(Channel, Vec<u8>)>,
    last_timestamp: u64,
}

impl ShardStore {
    pub fn new(index: u32, num_shards: u32) -> Self {
        assert!(index < num_shards);
        ShardStore {
            index,
            num_shards,
            tasks: BTreeMap::new(),
            objects: BTreeMap::new(),
            functions: BTreeMap::new(),
            events: Vec::new(),
            exact_subs: BTreeMap::new(),
            table_subs: BTreeMap::new(),
            pending: Vec::new(),
            last_timestamp: 0,
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    fn check_route(&self, key: &[u8; 16]) -> Result<(), ControlError> {
        let expected = shard_of(key, self.num_shards);
        if expected == self.index {
            Ok(())
        } else {
            Err(ControlError::WrongShard { expected })
        }
    }

    fn log(&mut self, now: u64, subject: Subject, transition: &str, node: Option<NodeId>) {
        // keep the per-shard log monotone even if a caller's clock is skewed
        let timestamp = now.max(self.last_timestamp);
        self.last_timestamp = timestamp;
        let ev = EventRecord {
            timestamp,
            subject,
            transition: transition.to_owned(),
            node_id: node.map(|n| n.to_string()).unwrap_or_default(),
        };
        self.pending.push((Channel::key(Table::Event, subject.key()), ev.encode()));
        self.events.push(ev);
    }

    fn publish_task(&mut self, task: &TaskId) {
        if let Some(entry) = self.tasks.get(task) {
            self.pending.push((Channel::task(*task), entry.encode()));
        }
    }

    fn publish_object(&mut self, object: &ObjectId) {
        if let Some(entry) = self.objects.get(object) {
            self.pending.push((Channel::object(*object), entry.encode()));
        }
    }

    /// Generic write. Task specs and object creators are write-once.
    pub fn put_record(&mut self, now: u64, table: Table, key: [u8; 16], record: &[u8]) -> Result<(), ControlError> {
        self.check_route(&key)?;
        match table {
            Table::Task => {
                let spec = TaskSpec::decode(record)?;
                if spec.task_id.0 != key {
                    return Err(ControlError::BadRecord("task record key mismatch".into()));
                }
                self.insert_spec(now, spec, None).map(|_| ())
            }
            Table::Object => {
                let entry = ObjectTableEntry::decode(record)?;
                if entry.object_id.0 != key {
                    return Err(ControlError::BadRecord("object record key mismatch".into()));
                }
                let id = entry.object_id;
                match self.objects.get_mut(&id) {
                    Some(existing) => {
                        if existing.creating_task.is_some() && existing.creating_task != entry.creating_task {
                            return Err(ControlError::ImmutableFieldConflict);
                        }
                        existing.creating_task = entry.creating_task;
                        existing.locations = entry.locations;
                        existing.size_bytes = entry.size_bytes;
                        existing.lost = existing.locations.is_empty() && entry.lost;
                    }
                    None => {
                        self.objects.insert(id, entry);
                    }
                }
                self.publish_object(&id);
                Ok(())
            }
            Table::Function => {
                FunctionEntry::decode(record)?;
                match self.functions.get(&key) {
                    Some(existing) if existing.as_slice() != record => Err(ControlError::ImmutableFieldConflict),
                    Some(_) => Ok(()),
                    None => {
                        self.functions.insert(key, record.to_vec());
                        self.pending.push((Channel::key(Table::Function, key), record.to_vec()));
                        Ok(())
                    }
                }
            }
            Table::Event => {
                let ev = EventRecord::decode(record)?;
                if ev.subject.key() != key {
                    return Err(ControlError::BadRecord("event record key mismatch".into()));
                }
                let node = ev.node_id.parse().ok();
                self.log(ev.timestamp.max(now), ev.subject, &ev.transition, node);
                Ok(())
            }
        }
    }

    /// Returns true when the spec was newly inserted.
    fn insert_spec(&mut self, now: u64, spec: TaskSpec, node: Option<NodeId>) -> Result<bool, ControlError> {
        let id = spec.task_id;
        if let Some(existing) = self.tasks.get(&id) {
            if existing.spec != spec {
                return Err(ControlError::ImmutableFieldConflict);
            }
            return Ok(false);
        }
        self.tasks.insert(id, TaskTableEntry { task_id: id, spec, state: TaskState::Submitted, node });
        self.log(now, Subject::Task(id), StateKind::Submitted.name(), node);
        self.publish_task(&id);
        Ok(true)
    }

    /// Records a submission: stores the spec (write-once) and moves the task
    /// to SUBMITTED on `node`. Resubmitting a LOST task is legal; any other
    /// repeat is an idempotent no-op.
    pub fn submit_record(&mut self, now: u64, spec: TaskSpec, node: NodeId) -> Result<(), ControlError> {
        self.check_route(&spec.task_id.0)?;
        let id = spec.task_id;
        if self.insert_spec(now, spec, Some(node))? {
            return Ok(());
        }
        let entry = self.tasks.get(&id).expect("present after insert_spec");
        if entry.state == TaskState::Lost {
            self.update_state(now, id, TaskState::Submitted, Some(node))?;
        }
        Ok(())
    }

    /// Applies a state transition. Returns whether anything changed.
    pub fn update_state(
        &mut self,
        now: u64,
        task: TaskId,
        state: TaskState,
        node: Option<NodeId>,
    ) -> Result<bool, ControlError> {
        self.check_route(&task.0)?;
        let entry = self.tasks.get_mut(&task).ok_or(ControlError::UnknownKey)?;
        let node = state.node().or(node);
        if entry.state == state {
            if node.is_some() && entry.node != node {
                entry.node = node;
            }
            return Ok(false);
        }
        if !entry.state.can_transition_to(&state) {
            return Err(ControlError::IllegalTransition { from: entry.state, to: state });
        }
        entry.state = state;
        entry.node = node;
        self.log(now, Subject::Task(task), state.kind().name(), node);
        self.publish_task(&task);
        Ok(true)
    }

    pub fn add_location(
        &mut self,
        now: u64,
        object: ObjectId,
        node: NodeId,
        size: u64,
        creating_task: Option<TaskId>,
    ) -> Result<(), ControlError> {
        self.check_route(&object.0)?;
        let entry = self.objects.entry(object).or_insert_with(|| ObjectTableEntry::new(object));
        if let Some(t) = creating_task {
            match entry.creating_task {
                Some(existing) if existing != t => return Err(ControlError::ImmutableFieldConflict),
                _ => entry.creating_task = Some(t),
            }
        }
        if size > 0 {
            entry.size_bytes = size;
        }
        let inserted = entry.locations.insert(node);
        entry.lost = false;
        if inserted {
            self.log(now, Subject::Object(object), EV_ADD_LOCATION, Some(node));
            self.publish_object(&object);
        }
        Ok(())
    }

    pub fn remove_location(&mut self, now: u64, object: ObjectId, node: NodeId) -> Result<(), ControlError> {
        self.check_route(&object.0)?;
        let Some(entry) = self.objects.get_mut(&object) else {
            return Ok(());
        };
        if !entry.locations.remove(&node) {
            return Ok(());
        }
        let now_lost = entry.locations.is_empty();
        entry.lost = now_lost;
        self.log(now, Subject::Object(object), EV_REMOVE_LOCATION, Some(node));
        if now_lost {
            self.log(now, Subject::Object(object), EV_OBJECT_LOST, Some(node));
        }
        self.publish_object(&object);
        Ok(())
    }

    /// Drops `node` from every location set and marks every task it owned
    /// before completion as LOST. Returns the specs of those tasks.
    pub fn node_down(&mut self, now: u64, node: NodeId) -> Vec<TaskSpec> {
        let held: Vec<ObjectId> =
            self.objects.iter().filter(|(_, e)| e.locations.contains(&node)).map(|(id, _)| *id).collect();
        for id in held {
            let _ = self.remove_location(now, id, node);
        }
        let owned: Vec<TaskId> = self
            .tasks
            .iter()
            .filter(|(_, e)| {
                e.node == Some(node)
                    && matches!(
                        e.state.kind(),
                        StateKind::Submitted | StateKind::QueuedLocal | StateKind::Assigned | StateKind::Running
                    )
            })
            .map(|(id, _)| *id)
            .collect();
        let mut specs = Vec::with_capacity(owned.len());
        for id in owned {
            if self.update_state(now, id, TaskState::Lost, None).is_ok() {
                specs.push(self.tasks[&id].spec.clone());
            }
        }
        specs
    }

    /// Registers a subscriber. Returns the key's current record, if any, so
    /// the caller can reconcile without a separate read.
    pub fn subscribe(&mut self, who: Addr, channel: Channel) -> Option<Vec<u8>> {
        match channel.key {
            Some(key) => {
                let subs = self.exact_subs.entry(channel).or_default();
                if !subs.contains(&who) {
                    subs.push(who);
                }
                self.read(channel.table, &key)
            }
            None => {
                let subs = self.table_subs.entry(channel.table).or_default();
                if !subs.contains(&who) {
                    subs.push(who);
                }
                None
            }
        }
    }

    pub fn unsubscribe(&mut self, who: Addr, channel: Channel) {
        match channel.key {
            Some(_) => {
                if let Some(subs) = self.exact_subs.get_mut(&channel) {
                    subs.retain(|a| *a != who);
                    if subs.is_empty() {
                        self.exact_subs.remove(&channel);
                    }
                }
            }
            None => {
                if let Some(subs) = self.table_subs.get_mut(&channel.table) {
                    subs.retain(|a| *a != who);
                }
            }
        }
    }

    pub fn read(&self, table: Table, key: &[u8; 16]) -> Option<Vec<u8>> {
        match table {
            Table::Task => self.tasks.get(&TaskId(*key)).map(|e| e.encode()),
            Table::Object => self.objects.get(&ObjectId(*key)).map(|e| e.encode()),
            Table::Function => self.functions.get(key).cloned(),
            Table::Event => None,
        }
    }

    /// Point-in-time snapshot of one table, in key order (events in log order).
    pub fn scan(&self, table: Table) -> Vec<Vec<u8>> {
        match table {
            Table::Task => self.tasks.values().map(|e| e.encode()).collect(),
            Table::Object => self.objects.values().map(|e| e.encode()).collect(),
            Table::Function => self.functions.values().cloned().collect(),
            Table::Event => self.events.iter().map(|e| e.encode()).collect(),
        }
    }

    pub fn task(&self, id: &TaskId) -> Option<&TaskTableEntry> {
        self.tasks.get(id)
    }

    pub fn object(&self, id: &ObjectId) -> Option<&ObjectTableEntry> {
        self.objects.get(id)
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    /// Drains pending publications, resolved to their subscribers.
    pub fn take_notifications(&mut self) -> Vec<(Addr, Channel, Vec<u8>)> {
        let pending = std::mem::take(&mut self.pending);
        let mut out = Vec::new();
        for (channel, record) in pending {
            if let Some(subs) = self.exact_subs.get(&channel) {
                for who in subs {
                    out.push((*who, channel, record.clone()));
                }
            }
            if let Some(subs) = self.table_subs.get(&channel.table) {
                for who in subs {
                    out.push((*who, channel, record.clone()));
                }
            }
        }
        out
    }
}

/// Control-plane shard endpoint.
pub struct Shard {
    store: ShardStore,
}

impl Shard {
    pub fn new(index: u32, num_shards: u32) -> Self {
        Shard { store: ShardStore::new(index, num_shards) }
    }

    pub fn store(&self) -> &ShardStore {
        &self.store
    }

    fn ack(env: &mut dyn Env, to: Addr, req: u64, result: Result<(), ControlError>) {
        if req != 0 {
            env.send(to, Message::Ack { req, result });
        } else if let Err(e) = result {
            log::debug!("{} dropped failed write from {to}: {e}", env.me());
        }
    }
}

impl Component for Shard {
    fn start(&mut self, _env: &mut dyn Env) {}

    fn handle(&mut self, from: Addr, msg: Message, env: &mut dyn Env) {
        let now = env.now();
        let store = &mut self.store;
        match msg {
            Message::PutRecord { req, table, key, record } => {
                let res = store.put_record(now, table, key, &record);
                Self::ack(env, from, req, res);
            }
            Message::SubmitRecord { req, spec, node } => {
                let res = store.submit_record(now, spec, node);
                Self::ack(env, from, req, res);
            }
            Message::UpdateState { req, task, state, node } => {
                let res = store.update_state(now, task, state, node).map(|_| ());
                Self::ack(env, from, req, res);
            }
            Message::AddLocation { object, node, size, creating_task } => {
                if let Err(e) = store.add_location(now, object, node, size, creating_task) {
                    log::warn!("add_location {object:?} from {from}: {e}");
                }
            }
            Message::RemoveLocation { object, node } => {
                if let Err(e) = store.remove_location(now, object, node) {
                    log::warn!("remove_location {object:?} from {from}: {e}");
                }
            }
            Message::Subscribe { req, channel } => {
                let record = store.subscribe(from, channel);
                env.send(from, Message::Record { req, record });
            }
            Message::Unsubscribe { channel } => store.unsubscribe(from, channel),
            Message::Read { req, table, key } => {
                let record = store.read(table, &key);
                env.send(from, Message::Record { req, record });
            }
            Message::Scan { req, table } => {
                let records = store.scan(table);
                env.send(from, Message::ScanReply { req, shard: store.index(), records });
            }
            Message::NodeDown { req, node } => {
                let specs = store.node_down(now, node);
                env.send(from, Message::LostTasks { req, specs });
            }
            Message::DeliveryFailed { to, inner } => {
                log::debug!("{} could not reach {to} ({})", env.me(), inner.label());
            }
            other => log::warn!("{} ignoring unexpected {} from {from}", env.me(), other.label()),
        }
        for (who, channel, record) in self.store.take_notifications() {
            env.send(who, Message::Notify { channel, record });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::derive_task_id;
    use crate::task::Resources;

    fn spec(i: u32) -> TaskSpec {
        TaskSpec::new(derive_task_id(&TaskId::default(), i), "f", vec![], 1, Resources::cpu(1))
    }

    fn single() -> ShardStore {
        ShardStore::new(0, 1)
    }

    #[test]
    fn put_then_read_round_trip() {
        let mut s = single();
        let sp = spec(0);
        s.put_record(1, Table::Task, sp.task_id.0, &sp.encode()).unwrap();
        let rec = s.read(Table::Task, &sp.task_id.0).unwrap();
        assert_eq!(TaskTableEntry::decode(&rec).unwrap().spec, sp);
    }

    #[test]
    fn write_once_spec() {
        let mut s = single();
        let sp = spec(0);
        s.put_record(1, Table::Task, sp.task_id.0, &sp.encode()).unwrap();
        s.put_record(2, Table::Task, sp.task_id.0, &sp.encode()).unwrap();
        let mut other = sp.clone();
        other.function_name = "g".into();
        let before = s.read(Table::Task, &sp.task_id.0).unwrap();
        assert_eq!(
            s.put_record(3, Table::Task, sp.task_id.0, &other.encode()),
            Err(ControlError::ImmutableFieldConflict)
        );
        assert_eq!(s.read(Table::Task, &sp.task_id.0).unwrap(), before);
    }

    #[test]
    fn wrong_shard_rejected() {
        let mut s = ShardStore::new(0, 4);
        let mut key = [0u8; 16];
        key[3] = 5; // routes to shard 1
        let sp = TaskSpec::new(TaskId(key), "f", vec![], 1, Resources::cpu(1));
        assert_eq!(s.put_record(0, Table::Task, key, &sp.encode()), Err(ControlError::WrongShard { expected: 1 }));
    }

    #[test]
    fn illegal_and_idempotent_transitions() {
        let mut s = single();
        let sp = spec(1);
        let id = sp.task_id;
        s.submit_record(0, sp, NodeId(0)).unwrap();
        assert!(s.update_state(1, id, TaskState::QueuedLocal, None).unwrap());
        let n = s.events().len();
        assert!(!s.update_state(2, id, TaskState::QueuedLocal, None).unwrap());
        assert_eq!(s.events().len(), n);
        s.update_state(3, id, TaskState::Assigned(NodeId(0)), None).unwrap();
        s.update_state(4, id, TaskState::Running(NodeId(0)), None).unwrap();
        s.update_state(5, id, TaskState::Done, None).unwrap();
        assert!(matches!(
            s.update_state(6, id, TaskState::Running(NodeId(0)), None),
            Err(ControlError::IllegalTransition { .. })
        ));
        let names: Vec<_> = s.events().iter().map(|e| e.transition.as_str()).collect();
        assert_eq!(names, ["SUBMITTED", "QUEUED_LOCAL", "ASSIGNED", "RUNNING", "DONE"]);
    }

    #[test]
    fn location_set_semantics() {
        let mut s = single();
        let x = ObjectId([9; 16]);
        s.subscribe(Addr::Node(NodeId(5)), Channel::object(x));
        s.add_location(0, x, NodeId(1), 10, Some(TaskId([1; 16]))).unwrap();
        s.add_location(1, x, NodeId(1), 10, None).unwrap();
        assert_eq!(s.object(&x).unwrap().locations.len(), 1);
        s.add_location(2, x, NodeId(2), 10, None).unwrap();
        assert_eq!(s.object(&x).unwrap().locations.iter().copied().collect::<Vec<_>>(), vec![NodeId(1), NodeId(2)]);
        s.remove_location(3, x, NodeId(1)).unwrap();
        s.remove_location(4, x, NodeId(2)).unwrap();
        let e = s.object(&x).unwrap();
        assert!(e.locations.is_empty() && e.lost);
        let notes = s.take_notifications();
        // two adds, two removes; the duplicate add publishes nothing
        assert_eq!(notes.len(), 4);
        let last = ObjectTableEntry::decode(&notes[3].2).unwrap();
        assert!(last.lost);
        assert!(s.events().iter().any(|e| e.transition == EV_OBJECT_LOST));
    }

    #[test]
    fn creating_task_is_write_once() {
        let mut s = single();
        let x = ObjectId([9; 16]);
        s.add_location(0, x, NodeId(1), 10, Some(TaskId([1; 16]))).unwrap();
        assert_eq!(
            s.add_location(1, x, NodeId(2), 10, Some(TaskId([2; 16]))),
            Err(ControlError::ImmutableFieldConflict)
        );
        assert_eq!(s.object(&x).unwrap().creating_task, Some(TaskId([1; 16])));
    }

    #[test]
    fn pubsub_no_replay_and_fan_out() {
        let mut s = single();
        let x = ObjectId([4; 16]);
        s.add_location(0, x, NodeId(1), 1, None).unwrap();
        s.take_notifications();
        // subscribing after the publication sees nothing replayed
        s.subscribe(Addr::Node(NodeId(7)), Channel::object(x));
        s.subscribe(Addr::Node(NodeId(8)), Channel::object(x));
        assert!(s.take_notifications().is_empty());
        s.add_location(1, x, NodeId(2), 1, None).unwrap();
        let notes = s.take_notifications();
        let who: Vec<_> = notes.iter().map(|n| n.0).collect();
        assert_eq!(who, vec![Addr::Node(NodeId(7)), Addr::Node(NodeId(8))]);
    }

    #[test]
    fn table_wide_subscription() {
        let mut s = single();
        s.subscribe(Addr::Driver(0), Channel::table(Table::Task));
        s.submit_record(0, spec(3), NodeId(0)).unwrap();
        let notes = s.take_notifications();
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].1.table, Table::Task);
    }

    #[test]
    fn node_down_marks_losses() {
        let mut s = single();
        let a = spec(1);
        let b = spec(2);
        let (ia, ib) = (a.task_id, b.task_id);
        s.submit_record(0, a, NodeId(1)).unwrap();
        s.submit_record(0, b, NodeId(2)).unwrap();
        s.update_state(1, ia, TaskState::QueuedLocal, None).unwrap();
        s.update_state(2, ia, TaskState::Assigned(NodeId(1)), None).unwrap();
        let x = ObjectId([1; 16]);
        let y = ObjectId([2; 16]);
        s.add_location(3, x, NodeId(1), 5, None).unwrap();
        s.add_location(3, y, NodeId(1), 5, None).unwrap();
        s.add_location(3, y, NodeId(2), 5, None).unwrap();
        let lost = s.node_down(10, NodeId(1));
        assert_eq!(lost.iter().map(|sp| sp.task_id).collect::<Vec<_>>(), vec![ia]);
        assert_eq!(s.task(&ia).unwrap().state, TaskState::Lost);
        assert_eq!(s.task(&ib).unwrap().state, TaskState::Submitted);
        assert!(s.object(&x).unwrap().lost);
        assert!(!s.object(&y).unwrap().lost);
        // a LOST task may be resubmitted elsewhere
        s.submit_record(11, s.task(&ia).unwrap().spec.clone(), NodeId(2)).unwrap();
        assert_eq!(s.task(&ia).unwrap().state, TaskState::Submitted);
        assert_eq!(s.task(&ia).unwrap().node, Some(NodeId(2)));
    }

    #[test]
    fn event_timestamps_monotone() {
        let mut s = single();
        s.submit_record(10, spec(1), NodeId(0)).unwrap();
        s.submit_record(5, spec(2), NodeId(0)).unwrap();
        let ts: Vec<_> = s.events().iter().map(|e| e.timestamp).collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn scan_is_key_ordered() {
        let mut s = single();
        for i in 0..20 {
            s.submit_record(i as u64, spec(i), NodeId(0)).unwrap();
        }
        let ids: Vec<_> =
            s.scan(Table::Task).iter().map(|r| TaskTableEntry::decode(r).unwrap().task_id).collect();
        assert_eq!(ids.len(), 20);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(single().scan(Table::Task).is_empty());
    }
}
