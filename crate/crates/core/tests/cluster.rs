use std::time::Duration;

use dynflow::{Addr, Arg, Cluster, ClusterConfig, FunctionRegistry, Mode, ObjectId, Resources, Table, Value};

const T: Option<Duration> = Some(Duration::from_secs(60));

fn registry() -> FunctionRegistry {
    let mut r = FunctionRegistry::new();
    r.register("mul", |_, a| Ok(vec![Value::Int(a[0].as_int().unwrap() * a[1].as_int().unwrap())]));
    r.register("sleep", |ctx, a| {
        let n = a[0].as_int().unwrap();
        ctx.sleep_micros(n as u64);
        Ok(vec![Value::Int(n)])
    });
    r.register("noop", |_, _| Ok(vec![Value::List(vec![])]));
    r
}

fn workload(c: &Cluster) -> Vec<Value> {
    let d = c.driver();
    let mut outs: Vec<ObjectId> = Vec::new();
    for i in 0..40i64 {
        let arg = if i < 4 { Arg::from(i + 2) } else { Arg::Future(outs[(i as usize * 5) % i as usize]) };
        outs.push(d.remote("mul", vec![arg, Arg::from(3)]).unwrap());
        if i % 3 == 0 {
            outs.push(d.remote("sleep", vec![Arg::from(200 * i)]).unwrap());
        }
    }
    d.get_all(&outs, T).unwrap()
}

fn event_log(c: &Cluster) -> Vec<Vec<u8>> {
    c.driver().scan_table(Table::Event).unwrap()
}

#[test]
fn same_seed_gives_identical_event_logs() {
    let run = || {
        let mut cfg = ClusterConfig::simulated(3);
        cfg.num_control_shards = 2;
        cfg.seed = 42;
        let c = Cluster::start(cfg, registry()).unwrap();
        let v = workload(&c);
        (v, event_log(&c), c.sim_stats().unwrap().delivered)
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert!(!a.1.is_empty());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn spills_split_across_two_global_schedulers() {
    let mut cfg = ClusterConfig::simulated(4);
    cfg.workers_per_node = 1;
    cfg.node_resources = Resources::cpu(1);
    cfg.num_global_schedulers = 2;
    cfg.spillover_threshold = Some(1);
    let c = Cluster::start(cfg, registry()).unwrap();
    let d = c.driver();
    let outs: Vec<ObjectId> = (0..1000).map(|_| d.remote("sleep", vec![Arg::from(50)]).unwrap()).collect();
    d.get_all(&outs, T).unwrap();
    let s = c.sim_stats().unwrap();
    let g0 = s.count(Addr::Global(0), "spill");
    let g1 = s.count(Addr::Global(1), "spill");
    assert!(g0 > 0 && g1 > 0, "{g0} / {g1}");
}

#[test]
fn sim_and_process_agree() {
    let sim = workload(&Cluster::start(ClusterConfig::simulated(2), registry()).unwrap());
    let proc = workload(&Cluster::start(ClusterConfig::process(2), registry()).unwrap());
    assert_eq!(sim, proc);
}

fn threads() -> usize {
    let status = std::fs::read_to_string("/proc/self/status").unwrap();
    status.lines().find_map(|l| l.strip_prefix("Threads:")).unwrap().trim().parse().unwrap()
}

#[test]
fn process_start_and_shutdown_do_not_leak_threads() {
    let warm = Cluster::start(ClusterConfig::process(2), registry()).unwrap();
    drop(warm);
    let before = threads();
    for _ in 0..100 {
        let c = Cluster::start(ClusterConfig::process(2), registry()).unwrap();
        let o = c.driver().remote("mul", vec![Arg::from(6), Arg::from(7)]).unwrap();
        assert_eq!(c.driver().get(o, T).unwrap(), Value::Int(42));
        c.shutdown();
        c.shutdown();
    }
    let after = threads();
    assert!(after <= before + 4, "threads {before} -> {after}");
}

#[test]
fn shutdown_with_tasks_in_flight() {
    let c = Cluster::start(ClusterConfig::process(2), registry()).unwrap();
    assert_eq!(c.mode(), Mode::Process);
    for _ in 0..50 {
        c.driver().remote("sleep", vec![Arg::from(20_000)]).unwrap();
    }
    c.shutdown();
    drop(c);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ClusterConfig::simulated(0);
    assert!(Cluster::start(cfg.clone(), registry()).is_err());
    cfg.num_nodes = 1;
    cfg.num_control_shards = 0;
    assert!(Cluster::start(cfg, registry()).is_err());
}
