use std::collections::BTreeMap;
use std::time::Duration;

use dynflow::control::ObjectTableEntry;
use dynflow::fault::{audit_firing_rule, audit_replay_order, audit_resource_safety};
use dynflow::inspect;
use dynflow::{
    Arg, Cluster, ClusterConfig, ComponentKind, FunctionRegistry, NodeId, NodeOverride, ObjectId, RemoteOptions,
    Resources, Table, TaskSpec, Value,
};

const T: Option<Duration> = Some(Duration::from_secs(600));

fn registry() -> FunctionRegistry {
    let mut r = FunctionRegistry::new();
    r.register("mix", |ctx, a| {
        ctx.sleep_micros(2_000);
        let mut h: i64 = 17;
        for v in a {
            h = h.wrapping_mul(31).wrapping_add(v.as_int().unwrap());
        }
        Ok(vec![Value::Int(h)])
    });
    r.register("sleep", |ctx, a| {
        let n = a[0].as_int().unwrap();
        ctx.sleep_micros(n as u64);
        Ok(vec![Value::Int(n)])
    });
    r.register("inc", |ctx, a| {
        ctx.sleep_micros(1_000);
        Ok(vec![Value::Int(a[0].as_int().unwrap() + 1)])
    });
    r.register("len", |_, a| match &a[0] {
        Value::Bytes(b) => Ok(vec![Value::Int(b.len() as i64)]),
        other => Err(format!("expected bytes, got {other:?}")),
    });
    r.register("blob", |_, _| Ok(vec![Value::Bytes(vec![7; 4096])]));
    r
}

fn specs(c: &Cluster) -> Vec<TaskSpec> {
    inspect::tasks(c.driver()).unwrap().into_iter().map(|e| e.spec).collect()
}

fn totals(c: &Cluster) -> BTreeMap<NodeId, Resources> {
    (0..c.config().num_nodes).map(|i| (NodeId(i), c.config().node_resources(i))).collect()
}

fn audit(c: &Cluster) {
    let specs = specs(c);
    let events = c.driver().events().unwrap();
    audit_firing_rule(&specs, &events).unwrap();
    audit_replay_order(&specs, &events).unwrap();
    audit_resource_safety(&specs, &events, &totals(c)).unwrap();
}

fn three_nodes() -> ClusterConfig {
    let mut cfg = ClusterConfig::simulated(3);
    cfg.workers_per_node = 2;
    cfg.node_resources = Resources::cpu(2);
    cfg
}

/// Twelve roots, then layers that combine two earlier results each.
fn submit_mix(c: &Cluster) -> Vec<ObjectId> {
    let d = c.driver();
    let mut outs: Vec<ObjectId> = Vec::new();
    for i in 0..50usize {
        let args = if i < 12 {
            vec![Arg::from(i as i64)]
        } else {
            vec![Arg::Future(outs[(i * 7) % i]), Arg::Future(outs[(i * 3 + 1) % i]), Arg::from(i as i64)]
        };
        outs.push(d.remote("mix", args).unwrap());
    }
    outs
}

#[test]
fn chain_survives_a_node_kill_and_replays_in_order() {
    let base = {
        let c = Cluster::start(three_nodes(), registry()).unwrap();
        let outs = submit_mix(&c);
        c.driver().get_all(&outs, T).unwrap()
    };
    for kill_at in [1_000u64, 5_000, 12_000, 30_000, 90_000] {
        let c = Cluster::start(three_nodes(), registry()).unwrap();
        let outs = submit_mix(&c);
        c.driver().idle(Duration::from_micros(kill_at));
        c.kill_node(NodeId(1)).unwrap();
        assert!(!c.is_alive(NodeId(1)));
        assert_eq!(c.driver().get_all(&outs, T).unwrap(), base, "kill at {kill_at}");
        audit(&c);
    }
}

#[test]
fn node_zero_cannot_be_killed() {
    let c = Cluster::start(three_nodes(), registry()).unwrap();
    assert!(c.kill_node(NodeId(0)).is_err());
    assert!(c.kill_node(NodeId(9)).is_err());
}

#[test]
fn restarting_a_worker_mid_task_reruns_it() {
    let mut cfg = ClusterConfig::simulated(1);
    cfg.workers_per_node = 1;
    cfg.node_resources = Resources::cpu(1);
    let c = Cluster::start(cfg, registry()).unwrap();
    let d = c.driver();
    let o = d.remote("sleep", vec![Arg::from(10_000)]).unwrap();
    d.idle(Duration::from_millis(2));
    c.restart_component(ComponentKind::Worker, 0, 0).unwrap();
    assert_eq!(d.get(o, T).unwrap(), Value::Int(10_000));
    let ev = d.events().unwrap();
    assert!(ev.iter().any(|e| e.transition == "LOST"));
    assert!(ev.iter().filter(|e| e.transition == "RUNNING").count() >= 2);
    audit(&c);
}

#[test]
fn restarting_the_local_scheduler_loses_nothing() {
    let mut cfg = ClusterConfig::simulated(1);
    cfg.workers_per_node = 2;
    cfg.node_resources = Resources::cpu(2);
    let c = Cluster::start(cfg, registry()).unwrap();
    let d = c.driver();
    let mut prev = d.remote("inc", vec![Arg::from(0)]).unwrap();
    let mut side = Vec::new();
    for i in 0..20 {
        prev = d.remote("inc", vec![Arg::Future(prev)]).unwrap();
        side.push(d.remote("sleep", vec![Arg::from(500 + i)]).unwrap());
    }
    d.idle(Duration::from_millis(4));
    c.restart_component(ComponentKind::LocalScheduler, 0, 0).unwrap();
    assert_eq!(d.get(prev, T).unwrap(), Value::Int(21));
    for (i, o) in side.iter().enumerate() {
        assert_eq!(d.get(*o, T).unwrap(), Value::Int(500 + i as i64));
    }
    audit(&c);
}

#[test]
fn restarting_a_global_scheduler_mid_run() {
    let mut cfg = ClusterConfig::simulated(3);
    cfg.workers_per_node = 1;
    cfg.node_resources = Resources::cpu(1);
    cfg.num_global_schedulers = 2;
    cfg.spillover_threshold = Some(1);
    let c = Cluster::start(cfg, registry()).unwrap();
    let d = c.driver();
    let outs: Vec<ObjectId> = (0..60).map(|i| d.remote("sleep", vec![Arg::from(1_000 + i)]).unwrap()).collect();
    d.idle(Duration::from_millis(3));
    c.restart_component(ComponentKind::GlobalScheduler, 0, 0).unwrap();
    c.restart_component(ComponentKind::GlobalScheduler, 1, 0).unwrap();
    for (i, o) in outs.iter().enumerate() {
        assert_eq!(d.get(*o, T).unwrap(), Value::Int(1_000 + i as i64));
    }
    assert!(c.restart_component(ComponentKind::GlobalScheduler, 2, 0).is_err());
    audit(&c);
}

#[test]
fn losing_one_of_two_replicas_keeps_the_object() {
    let mut cfg = ClusterConfig::simulated(2);
    cfg.node_overrides.insert(1, NodeOverride { cpu: Some(1), gpu: Some(1), workers: Some(1) });
    let c = Cluster::start(cfg, registry()).unwrap();
    let d = c.driver();
    let gpu = || RemoteOptions::default().demand(Resources::new(0, 1));
    let o = d.remote_with("blob", vec![], gpu()).unwrap()[0];
    assert_eq!(d.get(o, T).unwrap(), Value::Bytes(vec![7; 4096]));
    d.idle(Duration::from_millis(1));
    c.drop_object(o, NodeId(1)).unwrap();
    d.idle(Duration::from_millis(1));
    let rec = ObjectTableEntry::decode(&d.read(Table::Object, o.0).unwrap().unwrap()).unwrap();
    assert_eq!(rec.locations.into_iter().collect::<Vec<_>>(), vec![NodeId(0)]);
    let n = d.remote_with("len", vec![Arg::Future(o)], gpu()).unwrap()[0];
    assert_eq!(d.get(n, T).unwrap(), Value::Int(4096));
    let runs = d.events().unwrap().iter().filter(|e| e.transition == "RUNNING").count();
    assert_eq!(runs, 2);
    audit(&c);
}
