//! Localhost TCP transport. Every endpoint runs its component on its own
//! thread, fed by one reader thread per inbound connection. Node endpoints
//! also own one thread per worker slot.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::Mutex;

use crate::driver::{Backend, DriverShared, DriverState};
use crate::error::{ApiError, ClusterError};
use crate::message::{Addr, Message};
use crate::runtime::{Component, Env, Job, Tick};
use crate::wire::{frame_bytes, read_frame, WireReader, WireWriter};
use crate::worker::{run_task, FunctionRegistry, TaskSink};

/// First frame on every connection: the connecting endpoint's address.
const HELLO: u8 = 0x01;

enum Input {
    Msg(Addr, Message),
    Stop,
}

fn micros_since(epoch: Instant) -> Tick {
    epoch.elapsed().as_micros() as Tick
}

fn connect(directory: &BTreeMap<Addr, SocketAddr>, me: Addr, to: Addr) -> io::Result<TcpStream> {
    let addr = directory.get(&to).ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no endpoint {to}")))?;
    let mut s = TcpStream::connect_timeout(addr, Duration::from_secs(2))?;
    s.set_nodelay(true)?;
    let mut w = WireWriter::new();
    me.write(&mut w);
    s.write_all(&frame_bytes(HELLO, &w.finish()))?;
    Ok(s)
}

/// Writes `msg` over a cached connection, reconnecting once on failure.
fn send_over(
    conns: &mut BTreeMap<Addr, TcpStream>,
    directory: &BTreeMap<Addr, SocketAddr>,
    me: Addr,
    to: Addr,
    msg: &Message,
) -> io::Result<()> {
    let frame = frame_bytes(msg.frame_type(), &msg.encode_payload());
    for _ in 0..2 {
        let stream = match conns.get_mut(&to) {
            Some(s) => s,
            None => {
                let s = connect(directory, me, to)?;
                conns.entry(to).or_insert(s)
            }
        };
        match stream.write_all(&frame) {
            Ok(()) => return Ok(()),
            Err(_) => {
                conns.remove(&to);
            }
        }
    }
    Err(io::Error::new(io::ErrorKind::BrokenPipe, format!("cannot reach {to}")))
}

struct Timer {
    at: Instant,
    seq: u64,
    msg: Message,
}

impl PartialEq for Timer {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Timer {}

impl PartialOrd for Timer {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timer {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

struct Core {
    me: Addr,
    epoch: Instant,
    directory: Arc<BTreeMap<Addr, SocketAddr>>,
    conns: BTreeMap<Addr, TcpStream>,
    timers: BinaryHeap<Reverse<Timer>>,
    seq: u64,
    inbox: Sender<Input>,
    workers: Vec<Sender<Job>>,
}

impl Env for Core {
    fn now(&self) -> Tick {
        micros_since(self.epoch)
    }

    fn me(&self) -> Addr {
        self.me
    }

    fn send(&mut self, to: Addr, msg: Message) {
        if to == self.me {
            let _ = self.inbox.send(Input::Msg(self.me, msg));
            return;
        }
        if let Err(e) = send_over(&mut self.conns, &self.directory, self.me, to, &msg) {
            log::debug!("{}: {} to {to} failed: {e}", self.me, msg.label());
            if !matches!(msg, Message::DeliveryFailed { .. }) {
                let _ = self.inbox.send(Input::Msg(to, Message::DeliveryFailed { to, inner: Box::new(msg) }));
            }
        }
    }

    fn timer(&mut self, delay: Tick, msg: Message) {
        self.seq += 1;
        let at = Instant::now() + Duration::from_micros(delay);
        self.timers.push(Reverse(Timer { at, seq: self.seq, msg }));
    }

    fn execute(&mut self, job: Job) {
        match self.workers.get(job.worker as usize) {
            Some(tx) => {
                let _ = tx.send(job);
            }
            None => log::error!("{}: no worker slot {}", self.me, job.worker),
        }
    }
}

fn run_endpoint(mut comp: Box<dyn Component>, mut core: Core, inbox: Receiver<Input>) {
    comp.start(&mut core);
    loop {
        let now = Instant::now();
        while core.timers.peek().is_some_and(|t| t.0.at <= now) {
            let Reverse(t) = core.timers.pop().expect("peeked");
            let me = core.me;
            comp.handle(me, t.msg, &mut core);
        }
        let wait = core.timers.peek().map(|t| t.0.at.saturating_duration_since(Instant::now()));
        let input = match wait {
            Some(d) => inbox.recv_timeout(d),
            None => inbox.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        match input {
            Ok(Input::Msg(from, msg)) => comp.handle(from, msg, &mut core),
            Ok(Input::Stop) | Err(RecvTimeoutError::Disconnected) => break,
            Err(RecvTimeoutError::Timeout) => {}
        }
    }
}

struct WorkerSink {
    me: Addr,
    inbox: Sender<Input>,
}

impl TaskSink for WorkerSink {
    fn submit(&mut self, spec: crate::task::TaskSpec) {
        let _ = self.inbox.send(Input::Msg(self.me, Message::Submit { spec }));
    }

    fn sleep_micros(&mut self, micros: u64) {
        thread::sleep(Duration::from_micros(micros));
    }
}

fn run_worker(me: Addr, index: u32, registry: Arc<FunctionRegistry>, jobs: Receiver<Job>, inbox: Sender<Input>) {
    while let Ok(job) = jobs.recv() {
        let mut sink = WorkerSink { me, inbox: inbox.clone() };
        let returns = run_task(&registry, &job.spec, job.args, &mut sink);
        let done = Message::TaskFinished { worker: index, epoch: job.epoch, task: job.spec.task_id, returns };
        if inbox.send(Input::Msg(me, done)).is_err() {
            break;
        }
    }
}

/// Where inbound frames go.
#[derive(Clone)]
enum Sink {
    Inbox(Sender<Input>),
    Driver(Arc<DriverShared>),
}

fn read_loop(mut stream: TcpStream, sink: Sink) {
    let from = match read_frame(&mut stream) {
        Ok(Some((HELLO, payload))) => match Addr::read(&mut WireReader::new(&payload)) {
            Ok(a) => a,
            Err(_) => return,
        },
        _ => return,
    };
    loop {
        let (ty, payload) = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            Ok(None) | Err(_) => return,
        };
        let msg = match Message::decode(ty, &payload) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("dropping malformed frame 0x{ty:02x} from {from}: {e}");
                continue;
            }
        };
        match &sink {
            Sink::Inbox(tx) => {
                if tx.send(Input::Msg(from, msg)).is_err() {
                    return;
                }
            }
            Sink::Driver(shared) => shared.absorb(from, msg),
        }
    }
}

type Readers = Arc<Mutex<Vec<(TcpStream, JoinHandle<()>)>>>;

fn accept_loop(listener: TcpListener, stop: Arc<AtomicBool>, sink: Sink, readers: Readers) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let _ = stream.set_nodelay(true);
        let Ok(handle) = stream.try_clone() else { continue };
        let sink = sink.clone();
        let reader = thread::spawn(move || read_loop(stream, sink));
        readers.lock().push((handle, reader));
    }
}

struct Running {
    local: SocketAddr,
    stop: Arc<AtomicBool>,
    inbox: Option<Sender<Input>>,
    acceptor: Option<JoinHandle<()>>,
    readers: Readers,
    threads: Vec<JoinHandle<()>>,
}

impl Running {
    fn stop(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        if let Some(tx) = self.inbox.take() {
            let _ = tx.send(Input::Stop);
        }
        // wake the acceptor so it sees the flag
        let _ = TcpStream::connect_timeout(&self.local, Duration::from_millis(200));
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let readers: Vec<_> = self.readers.lock().drain(..).collect();
        for (stream, handle) in readers {
            let _ = stream.shutdown(Shutdown::Both);
            let _ = handle.join();
        }
    }
}

/// What each endpoint runs.
pub struct EndpointSpec {
    pub addr: Addr,
    pub component: Box<dyn Component>,
    /// Worker slots; zero for endpoints that do not run tasks.
    pub workers: u32,
}

/// A set of endpoints talking over localhost TCP, plus one driver endpoint.
pub struct ProcessRuntime {
    epoch: Instant,
    directory: Arc<BTreeMap<Addr, SocketAddr>>,
    endpoints: Mutex<BTreeMap<Addr, Running>>,
    driver_conns: Mutex<BTreeMap<Addr, TcpStream>>,
    shared: Arc<DriverShared>,
}

fn bind(base_port: u16, offset: usize) -> Result<TcpListener, ClusterError> {
    let port = if base_port == 0 {
        0
    } else {
        u16::try_from(base_port as usize + offset)
            .map_err(|_| ClusterError::PortUnavailable(format!("{base_port}+{offset} exceeds the port range")))?
    };
    TcpListener::bind(("127.0.0.1", port)).map_err(|e| ClusterError::PortUnavailable(format!("127.0.0.1:{port}: {e}")))
}

impl ProcessRuntime {
    /// Binds one listener per endpoint on consecutive ports from
    /// `base_port` (or OS-chosen ports when it is 0) and starts everything.
    pub fn start(
        specs: Vec<EndpointSpec>,
        registry: Arc<FunctionRegistry>,
        shared: Arc<DriverShared>,
        driver: Addr,
        base_port: u16,
    ) -> Result<Self, ClusterError> {
        let mut listeners = Vec::with_capacity(specs.len() + 1);
        let mut directory = BTreeMap::new();
        for (i, s) in specs.iter().enumerate() {
            let l = bind(base_port, i)?;
            directory.insert(s.addr, l.local_addr()?);
            listeners.push(l);
        }
        let driver_listener = bind(base_port, specs.len())?;
        directory.insert(driver, driver_listener.local_addr()?);
        let directory = Arc::new(directory);
        let epoch = Instant::now();
        let mut endpoints = BTreeMap::new();

        let readers = Readers::default();
        let stop = Arc::new(AtomicBool::new(false));
        let local = driver_listener.local_addr()?;
        let acceptor = {
            let (stop, sink, readers) = (stop.clone(), Sink::Driver(shared.clone()), readers.clone());
            thread::spawn(move || accept_loop(driver_listener, stop, sink, readers))
        };
        endpoints.insert(
            driver,
            Running { local, stop, inbox: None, acceptor: Some(acceptor), readers, threads: Vec::new() },
        );

        for (spec, listener) in specs.into_iter().zip(listeners) {
            let (tx, rx) = unbounded();
            let readers = Readers::default();
            let stop = Arc::new(AtomicBool::new(false));
            let local = listener.local_addr()?;
            let acceptor = {
                let (stop, sink, readers) = (stop.clone(), Sink::Inbox(tx.clone()), readers.clone());
                thread::spawn(move || accept_loop(listener, stop, sink, readers))
            };
            let mut threads = Vec::new();
            let mut workers = Vec::new();
            for w in 0..spec.workers {
                let (jtx, jrx) = unbounded();
                workers.push(jtx);
                let (registry, inbox, me) = (registry.clone(), tx.clone(), spec.addr);
                threads.push(thread::spawn(move || run_worker(me, w, registry, jrx, inbox)));
            }
            let core = Core {
                me: spec.addr,
                epoch,
                directory: directory.clone(),
                conns: BTreeMap::new(),
                timers: BinaryHeap::new(),
                seq: 0,
                inbox: tx.clone(),
                workers,
            };
            let comp = spec.component;
            // the endpoint thread goes first so it is joined before workers
            threads.insert(0, thread::spawn(move || run_endpoint(comp, core, rx)));
            endpoints.insert(
                spec.addr,
                Running { local, stop, inbox: Some(tx), acceptor: Some(acceptor), readers, threads },
            );
        }
        Ok(ProcessRuntime {
            epoch,
            directory,
            endpoints: Mutex::new(endpoints),
            driver_conns: Mutex::new(BTreeMap::new()),
            shared,
        })
    }

    pub fn directory(&self) -> &BTreeMap<Addr, SocketAddr> {
        &self.directory
    }

    pub fn now(&self) -> Tick {
        micros_since(self.epoch)
    }

    /// Stops one endpoint and closes its connections.
    pub fn kill(&self, addr: Addr) {
        let running = self.endpoints.lock().remove(&addr);
        if let Some(mut r) = running {
            r.stop();
        }
        self.driver_conns.lock().remove(&addr);
    }

    pub fn is_alive(&self, addr: Addr) -> bool {
        self.endpoints.lock().contains_key(&addr)
    }

    /// Stops every endpoint. Safe to call more than once.
    pub fn shutdown(&self) {
        self.driver_conns.lock().clear();
        let all: Vec<Running> = std::mem::take(&mut *self.endpoints.lock()).into_values().collect();
        for mut r in all {
            r.stop();
        }
    }
}

impl Drop for ProcessRuntime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Backend for ProcessRuntime {
    fn send(&self, from: Addr, to: Addr, msg: Message) -> Result<(), ApiError> {
        let mut conns = self.driver_conns.lock();
        send_over(&mut conns, &self.directory, from, to, &msg).map_err(|e| {
            log::debug!("driver: {} to {to} failed: {e}", msg.label());
            ApiError::Disconnected
        })
    }

    fn now(&self) -> Tick {
        micros_since(self.epoch)
    }

    fn wait_until(&self, deadline: Option<Tick>, done: &mut dyn FnMut(&DriverState) -> bool) -> bool {
        let deadline = deadline.map(|d| self.epoch + Duration::from_micros(d));
        let mut state = self.shared.state.lock();
        loop {
            if done(&state) {
                return true;
            }
            match deadline {
                Some(d) => {
                    if Instant::now() >= d {
                        return false;
                    }
                    self.shared.cond.wait_until(&mut state, d);
                }
                None => self.shared.cond.wait(&mut state),
            }
        }
    }

    fn shared(&self) -> &DriverShared {
        &self.shared
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{NodeId, ObjectId};
    use crate::message::TimerKind;

    /// Echoes fetch misses back to the sender and counts timer firings.
    struct Echo {
        fired: Arc<Mutex<u32>>,
    }

    impl Component for Echo {
        fn start(&mut self, env: &mut dyn Env) {
            env.timer(1_000, Message::Timer { kind: TimerKind::Retry });
        }

        fn handle(&mut self, from: Addr, msg: Message, env: &mut dyn Env) {
            match msg {
                Message::Timer { .. } => *self.fired.lock() += 1,
                Message::FetchMiss { object } => env.send(from, Message::FetchMiss { object }),
                _ => {}
            }
        }
    }

    fn runtime() -> (ProcessRuntime, Arc<Mutex<u32>>) {
        let fired = Arc::new(Mutex::new(0));
        let specs = vec![EndpointSpec {
            addr: Addr::Node(NodeId(0)),
            component: Box::new(Echo { fired: fired.clone() }),
            workers: 0,
        }];
        let rt = ProcessRuntime::start(
            specs,
            Arc::new(FunctionRegistry::new()),
            Arc::new(DriverShared::default()),
            Addr::Driver(0),
            0,
        )
        .unwrap();
        (rt, fired)
    }

    #[test]
    fn round_trip_and_timer() {
        let (rt, fired) = runtime();
        let o = ObjectId([3; 16]);
        rt.send(Addr::Driver(0), Addr::Node(NodeId(0)), Message::FetchMiss { object: o }).unwrap();
        std::thread::sleep(Duration::from_millis(100));
        assert_eq!(*fired.lock(), 1);
        rt.shutdown();
        rt.shutdown();
        assert!(!rt.is_alive(Addr::Node(NodeId(0))));
    }

    #[test]
    fn send_to_killed_endpoint_fails() {
        let (rt, _) = runtime();
        rt.kill(Addr::Node(NodeId(0)));
        let r = rt.send(Addr::Driver(0), Addr::Node(NodeId(0)), Message::FetchMiss { object: ObjectId([1; 16]) });
        assert_eq!(r, Err(ApiError::Disconnected));
    }
}
