use std::time::Duration;

use dynflow::{
    Arg, Cluster, ClusterConfig, FunctionRegistry, NodeId, ObjectId, RemoteOptions, Resources, Table, Value,
};
use dynflow::control::ObjectTableEntry;

const T: Option<Duration> = Some(Duration::from_secs(60));

fn registry() -> FunctionRegistry {
    let mut r = FunctionRegistry::new();
    r.register("add", |_, a| Ok(vec![Value::Int(a[0].as_int().unwrap() + a[1].as_int().unwrap())]));
    r.register("const7", |_, _| Ok(vec![Value::Int(7)]));
    r.register("sleep", |ctx, a| {
        let n = a[0].as_int().unwrap();
        ctx.sleep_micros(n as u64);
        Ok(vec![Value::Int(n)])
    });
    r.register("boom", |_, _| Err("kernel exploded".into()));
    r.register("nested", |ctx, a| {
        let child = ctx.remote("add", vec![Arg::Value(a[0].clone()), Arg::from(100)], RemoteOptions::default()).unwrap();
        Ok(vec![Value::Ref(child[0])])
    });
    r.register("pin", |_, _| Ok(vec![Value::Str("gpu".into())]));
    r.register("noop", |_, _| Ok(vec![Value::List(vec![])]));
    r
}

fn sim(nodes: u32) -> Cluster {
    Cluster::start(ClusterConfig::simulated(nodes), registry()).unwrap()
}

#[test]
fn add_and_one_edge_dag() {
    let c = sim(1);
    let d = c.driver();
    let x = d.remote("add", vec![Arg::from(1), Arg::from(2)]).unwrap();
    assert_eq!(d.get(x, T).unwrap(), Value::Int(3));
    let f = d.remote("const7", vec![]).unwrap();
    let g = d.remote("add", vec![Arg::Future(f), Arg::from(1)]).unwrap();
    assert_eq!(d.get(g, T).unwrap(), Value::Int(8));
    assert_eq!(d.get(x, T).unwrap(), Value::Int(3));
}

#[test]
fn remote_returns_before_the_kernel_runs() {
    let c = sim(1);
    let d = c.driver();
    let t0 = d.now();
    d.remote("sleep", vec![Arg::from(1)]).unwrap();
    let t1 = d.now();
    d.remote("sleep", vec![Arg::from(1_000_000)]).unwrap();
    let t2 = d.now();
    assert_eq!(t0, t1);
    assert_eq!(t1, t2);
}

#[test]
fn unknown_function_is_rejected() {
    let c = sim(1);
    assert!(matches!(c.driver().remote("nope", vec![]), Err(dynflow::ApiError::UnknownFunction(_))));
}

#[test]
fn kernel_errors_flow_downstream() {
    let c = sim(1);
    let d = c.driver();
    let bad = d.remote("boom", vec![]).unwrap();
    let after = d.remote("add", vec![Arg::Future(bad), Arg::from(1)]).unwrap();
    let v = d.get(after, T).unwrap();
    assert_eq!(v.as_error(), Some("kernel exploded"));
}

#[test]
fn nested_submission_returns_a_ref() {
    let c = sim(2);
    let d = c.driver();
    let outer = d.remote("nested", vec![Arg::from(5)]).unwrap();
    let r = d.get(outer, T).unwrap().as_ref_id().unwrap();
    assert_eq!(d.get(r, T).unwrap(), Value::Int(105));
}

#[test]
fn remote_get_fetches_and_adds_a_location() {
    let mut cfg = ClusterConfig::simulated(2);
    cfg.node_overrides.insert(1, dynflow::NodeOverride { cpu: Some(1), gpu: Some(1), workers: Some(1) });
    let c = Cluster::start(cfg, registry()).unwrap();
    let d = c.driver();
    let o = d
        .remote_with("pin", vec![], RemoteOptions::default().demand(Resources::new(0, 1)))
        .unwrap()[0];
    assert_eq!(d.get(o, T).unwrap(), Value::Str("gpu".into()));
    d.idle(Duration::from_millis(1));
    let rec = ObjectTableEntry::decode(&d.read(Table::Object, o.0).unwrap().unwrap()).unwrap();
    assert_eq!(rec.locations.into_iter().collect::<Vec<_>>(), vec![NodeId(0), NodeId(1)]);
}

#[test]
fn thousand_sequential_tasks_all_done() {
    let mut cfg = ClusterConfig::simulated(1);
    cfg.workers_per_node = 1;
    cfg.node_resources = Resources::cpu(1);
    let c = Cluster::start(cfg, registry()).unwrap();
    let d = c.driver();
    let ids: Vec<ObjectId> = (0..1000).map(|_| d.remote("noop", vec![]).unwrap()).collect();
    for o in &ids {
        assert_eq!(d.get(*o, T).unwrap(), Value::List(vec![]));
    }
    let done = d.events().unwrap().iter().filter(|e| e.transition == "DONE").count();
    assert_eq!(done, 1000);
}

#[test]
fn put_then_get_and_lost_root() {
    let c = sim(2);
    let d = c.driver();
    let v = Value::List(vec![Value::Int(1), Value::Str("x".into())]);
    let o = d.put(&v).unwrap();
    assert_eq!(d.get(o, T).unwrap(), v);
    let sum = d.remote("add", vec![Arg::from(2), Arg::from(2)]).unwrap();
    assert_eq!(d.get(sum, T).unwrap(), Value::Int(4));
    c.drop_object(o, NodeId(0)).unwrap();
    d.idle(Duration::from_millis(1));
    assert!(matches!(d.get(o, T), Err(dynflow::ApiError::ReconstructionFailed(_))));
}

#[test]
fn dropped_object_is_rebuilt_bit_identically() {
    let c = sim(1);
    let d = c.driver();
    let o = d.remote("add", vec![Arg::from(1), Arg::from(2)]).unwrap();
    let before = d.get_bytes(o, T).unwrap();
    c.drop_object(o, NodeId(0)).unwrap();
    d.idle(Duration::from_millis(1));
    assert_eq!(d.get_bytes(o, T).unwrap(), before);
    let runs = d.events().unwrap().iter().filter(|e| e.transition == "RUNNING").count();
    assert_eq!(runs, 2);
}

#[test]
fn get_times_out() {
    let c = sim(1);
    let d = c.driver();
    let o = d.remote("sleep", vec![Arg::from(5_000_000)]).unwrap();
    assert!(matches!(d.get(o, Some(Duration::from_millis(10))), Err(dynflow::ApiError::Timeout)));
    assert_eq!(d.get(o, T).unwrap(), Value::Int(5_000_000));
}

fn zero_latency(workers: u32) -> Cluster {
    let mut cfg = ClusterConfig::simulated(1);
    cfg.workers_per_node = workers;
    cfg.node_resources = Resources::cpu(workers);
    cfg.intra_node_latency = 0;
    cfg.inter_node_latency = 0;
    Cluster::start(cfg, registry()).unwrap()
}

#[test]
fn wait_returns_first_two_at_tick_twenty() {
    let c = zero_latency(4);
    let d = c.driver();
    let futs: Vec<ObjectId> = [10, 20, 1000, 1000].iter().map(|t| d.remote("sleep", vec![Arg::from(*t)]).unwrap()).collect();
    let start = d.now();
    let (ready, rest) = d.wait(&futs, 2, Some(Duration::from_micros(100))).unwrap();
    assert_eq!(ready, futs[..2].to_vec());
    assert_eq!(rest, futs[2..].to_vec());
    assert_eq!(d.now() - start, 20);
}

#[test]
fn wait_all_sealed_and_zero_timeout() {
    let c = zero_latency(2);
    let d = c.driver();
    let futs: Vec<ObjectId> = [5, 500].iter().map(|t| d.remote("sleep", vec![Arg::from(*t)]).unwrap()).collect();
    d.idle(Duration::from_micros(50));
    let (ready, rest) = d.wait(&futs, 2, Some(Duration::ZERO)).unwrap();
    assert_eq!(ready, vec![futs[0]]);
    assert_eq!(rest, vec![futs[1]]);
    d.idle(Duration::from_millis(1));
    let (ready, rest) = d.wait(&futs, 1, None).unwrap();
    assert_eq!(ready, vec![futs[0]]);
    assert_eq!(rest, vec![futs[1]]);
}

#[test]
fn wait_rejects_bad_requests() {
    let c = sim(1);
    let d = c.driver();
    let a = d.remote("const7", vec![]).unwrap();
    assert!(d.wait(&[a, a], 1, None).is_err());
    assert!(d.wait(&[a], 2, None).is_err());
}
