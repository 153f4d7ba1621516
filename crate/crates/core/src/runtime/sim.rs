//! Deterministic discrete-event transport. A single thread pops events in
//! `(tick, sequence)` order; kernels run inline and their sleeps advance the
//! virtual clock instead of the wall clock.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::driver::{Backend, DriverShared, DriverState};
use crate::error::ApiError;
use crate::message::{Addr, Message};
use crate::runtime::{Component, Env, Job, Tick, TICKS_PER_SEC};
use crate::worker::{run_task, FunctionRegistry, RecordingSink};

/// Message latencies in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Latency {
    /// Between endpoints hosted on the same node.
    pub intra: Tick,
    pub inter: Tick,
}

impl Default for Latency {
    fn default() -> Self {
        Latency { intra: 1, inter: 10 }
    }
}

impl Latency {
    pub const ZERO: Latency = Latency { intra: 0, inter: 0 };

    pub fn between(&self, a: Addr, b: Addr) -> Tick {
        if a == b {
            return self.intra;
        }
        match (a.host(), b.host()) {
            (Some(x), Some(y)) if x == y => self.intra,
            _ => self.inter,
        }
    }
}

enum Kind {
    Deliver { from: Addr, reserved: bool },
    Timer { incarnation: u64 },
}

struct Event {
    tick: Tick,
    seq: u64,
    to: Addr,
    kind: Kind,
    msg: Message,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.seq) == (other.tick, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.tick, other.seq).cmp(&(self.tick, self.seq))
    }
}

struct Endpoint {
    comp: Box<dyn Component>,
    alive: bool,
    incarnation: u64,
    busy_until: Tick,
}

enum Effect {
    Send(Addr, Message),
    Timer(Tick, Message),
    Execute(Job),
}

struct SimEnv {
    now: Tick,
    me: Addr,
    effects: Vec<Effect>,
}

impl Env for SimEnv {
    fn now(&self) -> Tick {
        self.now
    }

    fn me(&self) -> Addr {
        self.me
    }

    fn send(&mut self, to: Addr, msg: Message) {
        self.effects.push(Effect::Send(to, msg));
    }

    fn timer(&mut self, delay: Tick, msg: Message) {
        self.effects.push(Effect::Timer(delay, msg));
    }

    fn execute(&mut self, job: Job) {
        self.effects.push(Effect::Execute(job));
    }
}

pub struct Sim {
    now: Tick,
    seq: u64,
    queue: BinaryHeap<Event>,
    endpoints: BTreeMap<Addr, Endpoint>,
    registry: Arc<FunctionRegistry>,
    driver: Arc<DriverShared>,
    latency: Latency,
    shard_service: Tick,
    delivered: BTreeMap<(Addr, &'static str), u64>,
    executed: u64,
}

impl Sim {
    pub fn new(registry: Arc<FunctionRegistry>, driver: Arc<DriverShared>, latency: Latency, shard_service: Tick) -> Self {
        Sim {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            endpoints: BTreeMap::new(),
            registry,
            driver,
            latency,
            shard_service,
            delivered: BTreeMap::new(),
            executed: 0,
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn latency(&self) -> Latency {
        self.latency
    }

    /// Registers a component and runs its `start` hook.
    pub fn add(&mut self, addr: Addr, comp: Box<dyn Component>) {
        self.endpoints.insert(addr, Endpoint { comp, alive: true, incarnation: 0, busy_until: 0 });
        self.with_component(addr, |c, env| c.start(env));
    }

    pub fn is_alive(&self, addr: Addr) -> bool {
        self.endpoints.get(&addr).is_some_and(|e| e.alive)
    }

    /// Stops an endpoint. Pending timers are discarded and later deliveries
    /// bounce back to their senders.
    pub fn kill(&mut self, addr: Addr) {
        if let Some(e) = self.endpoints.get_mut(&addr) {
            e.alive = false;
            e.incarnation += 1;
        }
    }

    /// Schedules `msg` from `from` to `to` after the configured latency.
    pub fn inject(&mut self, from: Addr, to: Addr, msg: Message) {
        let at = self.now + self.latency.between(from, to);
        self.push(at, to, Kind::Deliver { from, reserved: false }, msg);
    }

    /// Count of delivered messages per `(destination, label)`.
    pub fn delivered(&self) -> &BTreeMap<(Addr, &'static str), u64> {
        &self.delivered
    }

    pub fn delivered_to(&self, to: Addr, label: &str) -> u64 {
        self.delivered.iter().filter(|((a, l), _)| *a == to && *l == label).map(|(_, n)| n).sum()
    }

    pub fn tasks_executed(&self) -> u64 {
        self.executed
    }

    pub fn next_tick(&self) -> Option<Tick> {
        self.queue.peek().map(|e| e.tick)
    }

    /// Moves the clock forward without processing anything.
    pub fn advance_to(&mut self, t: Tick) {
        self.now = self.now.max(t);
    }

    /// Processes every event at the next pending tick if it is at most
    /// `limit`. Returns false when nothing was due.
    pub fn run_tick(&mut self, limit: Tick) -> bool {
        let Some(t) = self.next_tick() else { return false };
        if t > limit {
            return false;
        }
        self.now = self.now.max(t);
        while self.queue.peek().is_some_and(|e| e.tick <= self.now) {
            let ev = self.queue.pop().expect("peeked");
            self.process(ev);
        }
        true
    }

    /// Runs until the queue holds nothing at or before `limit`.
    pub fn run_until(&mut self, limit: Tick) {
        while self.run_tick(limit) {}
        self.advance_to(limit);
    }

    fn push(&mut self, tick: Tick, to: Addr, kind: Kind, msg: Message) {
        self.seq += 1;
        self.queue.push(Event { tick, seq: self.seq, to, kind, msg });
    }

    fn process(&mut self, ev: Event) {
        match ev.kind {
            Kind::Timer { incarnation } => {
                let live = self.endpoints.get(&ev.to).is_some_and(|e| e.alive && e.incarnation == incarnation);
                if live {
                    self.with_component(ev.to, |c, env| c.handle(ev.to, ev.msg, env));
                }
            }
            Kind::Deliver { from, reserved } => {
                if let Addr::Driver(_) = ev.to {
                    *self.delivered.entry((ev.to, ev.msg.label())).or_default() += 1;
                    self.driver.absorb(from, ev.msg);
                    return;
                }
                if !self.is_alive(ev.to) {
                    self.bounce(from, ev.to, ev.msg);
                    return;
                }
                if matches!(ev.to, Addr::Shard(_)) && self.shard_service > 0 && !reserved {
                    let service = self.shard_service;
                    let ep = self.endpoints.get_mut(&ev.to).expect("alive");
                    let start = ep.busy_until.max(self.now);
                    ep.busy_until = start + service;
                    if start > self.now {
                        self.push(start, ev.to, Kind::Deliver { from, reserved: true }, ev.msg);
                        return;
                    }
                }
                *self.delivered.entry((ev.to, ev.msg.label())).or_default() += 1;
                self.with_component(ev.to, |c, env| c.handle(from, ev.msg, env));
            }
        }
    }

    fn bounce(&mut self, from: Addr, to: Addr, msg: Message) {
        if matches!(msg, Message::DeliveryFailed { .. }) || from == to || !self.is_alive(from) {
            return;
        }
        let at = self.now + self.latency.between(to, from);
        self.push(at, from, Kind::Deliver { from: to, reserved: false }, Message::DeliveryFailed { to, inner: Box::new(msg) });
    }

    fn with_component(&mut self, addr: Addr, f: impl FnOnce(&mut dyn Component, &mut dyn Env)) {
        let mut env = SimEnv { now: self.now, me: addr, effects: Vec::new() };
        let Some(ep) = self.endpoints.get_mut(&addr) else { return };
        f(ep.comp.as_mut(), &mut env);
        let incarnation = ep.incarnation;
        for effect in env.effects {
            match effect {
                Effect::Send(to, msg) => self.inject(addr, to, msg),
                Effect::Timer(delay, msg) => self.push(self.now + delay, addr, Kind::Timer { incarnation }, msg),
                Effect::Execute(job) => self.execute(addr, job),
            }
        }
    }

    fn execute(&mut self, node: Addr, job: Job) {
        self.executed += 1;
        let mut sink = RecordingSink::default();
        let returns = run_task(&self.registry, &job.spec, job.args, &mut sink);
        let intra = self.latency.intra;
        for spec in sink.submitted {
            self.push(self.now + intra, node, Kind::Deliver { from: node, reserved: false }, Message::Submit { spec });
        }
        let done = Message::TaskFinished { worker: job.worker, epoch: job.epoch, task: job.spec.task_id, returns };
        let incarnation = self.endpoints.get(&node).map_or(0, |e| e.incarnation);
        // a dead node's workers die with it, so completion is a timer
        self.push(self.now + sink.slept + intra, node, Kind::Timer { incarnation }, done);
    }
}

/// Simulated time a driver call may consume when it has no timeout.
pub const UNBOUNDED_WAIT: Tick = 3_600 * TICKS_PER_SEC;

/// Drives the simulation from driver calls: each blocking call runs the
/// event loop until its condition holds or its deadline passes.
pub struct SimBackend {
    sim: Arc<Mutex<Sim>>,
    shared: Arc<DriverShared>,
}

impl SimBackend {
    pub fn new(sim: Arc<Mutex<Sim>>, shared: Arc<DriverShared>) -> Self {
        SimBackend { sim, shared }
    }
}

impl Backend for SimBackend {
    fn send(&self, from: Addr, to: Addr, msg: Message) -> Result<(), ApiError> {
        self.sim.lock().inject(from, to, msg);
        Ok(())
    }

    fn now(&self) -> Tick {
        self.sim.lock().now()
    }

    fn wait_until(&self, deadline: Option<Tick>, done: &mut dyn FnMut(&DriverState) -> bool) -> bool {
        let limit = deadline.unwrap_or_else(|| self.now().saturating_add(UNBOUNDED_WAIT));
        loop {
            if done(&self.shared.state.lock()) {
                return true;
            }
            let mut sim = self.sim.lock();
            if !sim.run_tick(limit) {
                sim.advance_to(limit);
                drop(sim);
                return done(&self.shared.state.lock());
            }
        }
    }

    fn shared(&self) -> &DriverShared {
        &self.shared
    }
}
