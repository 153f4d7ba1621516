//! An RL-style loop: parallel `simulate` tasks feed a gpu-bound
//! `policy_step`. Three drivers run the same computation (serial, barrier
//! per iteration, and pipelined on `wait`), and [`ideal_makespan`] gives the
//! zero-latency schedule length each should reach.

use std::fmt;
use std::str::FromStr;

use dynflow::{Arg, Cluster, ClusterConfig, FunctionRegistry, NodeOverride, ObjectId, RemoteOptions, Resources, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::report::{BenchReport, Summary};
use crate::{mix64, BenchError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlMode {
    Serial,
    Bsp,
    Pipelined,
}

impl FromStr for RlMode {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "serial" => Ok(RlMode::Serial),
            "bsp" => Ok(RlMode::Bsp),
            "pipelined" => Ok(RlMode::Pipelined),
            other => Err(BenchError::InvalidParameter(format!("unknown rl mode {other:?}"))),
        }
    }
}

impl fmt::Display for RlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RlMode::Serial => "serial",
            RlMode::Bsp => "bsp",
            RlMode::Pipelined => "pipelined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RlParams {
    pub iters: usize,
    pub sims: usize,
    /// Sims handed to each pipelined policy step.
    pub batch: usize,
    /// Inclusive bounds of the uniform sim duration, in microseconds.
    pub sim_us: (u64, u64),
    /// Policy time for a full iteration's worth of sims.
    pub policy_us: u64,
    pub seed: u64,
}

impl Default for RlParams {
    fn default() -> Self {
        RlParams { iters: 20, sims: 32, batch: 8, sim_us: (5_000, 9_000), policy_us: 10_000, seed: 0 }
    }
}

impl RlParams {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidParameter(m.into()));
        if self.iters == 0 || self.sims == 0 || self.batch == 0 {
            return bad("iters, sims, and batch must be positive");
        }
        if self.sim_us.0 > self.sim_us.1 {
            return bad("sim duration range is empty");
        }
        Ok(())
    }

    fn policy_for(&self, n: usize) -> u64 {
        self.policy_us * n as u64 / self.sims as u64
    }
}

/// Per-iteration sim durations. Depends only on the seed and shape.
pub fn sim_durations(p: &RlParams) -> Vec<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    (0..p.iters).map(|_| (0..p.sims).map(|_| rng.gen_range(p.sim_us.0..=p.sim_us.1)).collect()).collect()
}

fn sim_value(state: i64, index: i64, duration: i64) -> i64 {
    mix64(state as u64 ^ mix64(index as u64) ^ (duration as u64).rotate_left(32)) as i64
}

pub fn register(r: &mut FunctionRegistry) {
    r.register("simulate", |ctx, a| {
        let [state, index, duration] = [0, 1, 2].map(|i| a[i].as_int().ok_or("simulate takes three ints"));
        let (state, index, duration) = (state?, index?, duration?);
        ctx.sleep_micros(duration as u64);
        Ok(vec![Value::Int(sim_value(state, index, duration))])
    });
    r.register("policy_step", |ctx, a| {
        let ints: Option<Vec<i64>> = a.iter().map(Value::as_int).collect();
        let ints = ints.ok_or("policy_step takes ints")?;
        ctx.sleep_micros(ints[0] as u64);
        Ok(vec![Value::Int(ints[2..].iter().fold(ints[1], |s, x| s.wrapping_add(*x)))])
    });
}

/// Final policy state computed directly, without a cluster.
pub fn reference_state(p: &RlParams) -> i64 {
    let mut state = 0i64;
    for durs in sim_durations(p) {
        let sum = durs.iter().enumerate().fold(0i64, |s, (i, d)| s.wrapping_add(sim_value(state, i as i64, *d as i64)));
        state = state.wrapping_add(sum);
    }
    state
}

/// `workers` cpu slots on node 0 and one gpu slot on node 1.
pub fn rl_config(base: &ClusterConfig, workers: u32) -> ClusterConfig {
    let mut cfg = base.clone();
    cfg.num_nodes = cfg.num_nodes.max(2);
    cfg.workers_per_node = workers;
    cfg.node_resources = Resources::cpu(workers);
    cfg.spillover_threshold = Some(1 << 20);
    cfg.node_overrides.entry(1).or_insert(NodeOverride { cpu: Some(0), gpu: Some(1), workers: Some(1) });
    cfg
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RlOutcome {
    pub mode: RlMode,
    /// Driver-clock microseconds (ticks in simulated mode).
    pub wall_us: u64,
    pub iter_us: Vec<u64>,
    pub state: i64,
}

fn has_gpu(cluster: &Cluster) -> bool {
    let cfg = cluster.config();
    (0..cfg.num_nodes).any(|i| cfg.node_resources(i).gpu >= 1)
}

pub fn run_rl(cluster: &Cluster, mode: RlMode, p: &RlParams) -> Result<RlOutcome, BenchError> {
    p.validate()?;
    if !has_gpu(cluster) {
        return Err(BenchError::NoGpuNode);
    }
    let d = cluster.driver();
    let gpu = RemoteOptions::default().demand(Resources::new(0, 1));
    let policy = |dur: u64, state: Arg, sims: &[ObjectId]| -> Result<ObjectId, BenchError> {
        let mut args = vec![Arg::from(dur as i64), state];
        args.extend(sims.iter().map(|o| Arg::Future(*o)));
        Ok(d.remote_with("policy_step", args, gpu)?[0])
    };
    let int = |o: ObjectId| -> Result<i64, BenchError> {
        let v = d.get(o, None)?;
        v.as_int().ok_or_else(|| BenchError::Mismatch(format!("policy returned {v:?}")))
    };
    let sim = |state: i64, i: usize, dur: u64| d.remote("simulate", vec![Arg::from(state), Arg::from(i as i64), Arg::from(dur as i64)]);

    let start = d.now();
    let mut iter_us = Vec::with_capacity(p.iters);
    let mut state = 0i64;
    for durs in sim_durations(p) {
        let t0 = d.now();
        state = match mode {
            RlMode::Serial => {
                let mut outs = Vec::with_capacity(durs.len());
                for (i, dur) in durs.iter().enumerate() {
                    let o = sim(state, i, *dur)?;
                    d.get(o, None)?;
                    outs.push(o);
                }
                int(policy(p.policy_us, Arg::from(state), &outs)?)?
            }
            RlMode::Bsp => {
                let outs = durs.iter().enumerate().map(|(i, dur)| sim(state, i, *dur)).collect::<Result<Vec<_>, _>>()?;
                d.get_all(&outs, None)?;
                int(policy(p.policy_us, Arg::from(state), &outs)?)?
            }
            RlMode::Pipelined => {
                let mut rest = durs.iter().enumerate().map(|(i, dur)| sim(state, i, *dur)).collect::<Result<Vec<_>, _>>()?;
                let mut acc = Arg::from(state);
                while !rest.is_empty() {
                    let k = p.batch.min(rest.len());
                    let (ready, left) = d.wait(&rest, k, None)?;
                    acc = Arg::Future(policy(p.policy_for(ready.len()), acc, &ready)?);
                    rest = left;
                }
                match acc {
                    Arg::Future(o) => int(o)?,
                    Arg::Value(_) => unreachable!("at least one batch runs"),
                }
            }
        };
        iter_us.push(d.now() - t0);
    }
    Ok(RlOutcome { mode, wall_us: d.now() - start, iter_us, state })
}

pub fn bench_rl(cluster: &Cluster, mode: RlMode, p: &RlParams) -> Result<BenchReport, BenchError> {
    let out = run_rl(cluster, mode, p)?;
    let mut report = BenchReport::new(&format!("rl-{mode}"), cluster.config());
    let iters: Vec<f64> = out.iter_us.iter().map(|x| *x as f64).collect();
    report.add("iteration", Summary::from_samples(&iters, "us")).add("wall", Summary::single(out.wall_us as f64, "us"));
    Ok(report)
}

/// Finish times of `durs` list-scheduled in order on `workers` identical
/// slots, all free at time 0.
pub fn list_schedule(durs: &[u64], workers: usize) -> Vec<u64> {
    let mut free = vec![0u64; workers.max(1)];
    durs.iter()
        .map(|d| {
            let (slot, t) = free.iter().enumerate().min_by_key(|(i, t)| (**t, *i)).map(|(i, t)| (i, *t)).unwrap();
            free[slot] = t + d;
            t + d
        })
        .collect()
}

/// Schedule length of one run with free communication: sims on `workers`
/// cpu slots in submission order, policy steps on one gpu slot.
pub fn ideal_makespan(mode: RlMode, p: &RlParams, workers: usize) -> u64 {
    let mut now = 0u64;
    for durs in sim_durations(p) {
        now += match mode {
            RlMode::Serial => durs.iter().sum::<u64>() + p.policy_us,
            RlMode::Bsp => list_schedule(&durs, workers).into_iter().max().unwrap_or(0) + p.policy_us,
            RlMode::Pipelined => {
                let finish = list_schedule(&durs, workers);
                let mut rest: Vec<usize> = (0..durs.len()).collect();
                let (mut t, mut gpu) = (0u64, 0u64);
                while !rest.is_empty() {
                    let k = p.batch.min(rest.len());
                    let mut times: Vec<u64> = rest.iter().map(|i| finish[*i]).collect();
                    times.sort_unstable();
                    t = t.max(times[k - 1]);
                    let taken: Vec<usize> = rest.iter().copied().filter(|i| finish[*i] <= t).take(k).collect();
                    rest.retain(|i| !taken.contains(i));
                    gpu = gpu.max(t) + p.policy_for(taken.len());
                }
                gpu
            }
        };
    }
    now
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations_are_seeded_and_in_range() {
        let p = RlParams { iters: 3, sims: 50, ..RlParams::default() };
        let a = sim_durations(&p);
        assert_eq!(a, sim_durations(&p));
        assert_ne!(a, sim_durations(&RlParams { seed: 1, ..p }));
        assert!(a.iter().flatten().all(|d| (5_000..=9_000).contains(d)));
    }

    #[test]
    fn list_schedule_by_hand() {
        assert_eq!(list_schedule(&[5, 3, 4, 1], 2), vec![5, 3, 7, 6]);
        assert_eq!(list_schedule(&[2, 2], 1), vec![2, 4]);
    }

    #[test]
    fn hand_built_pipeline() {
        let p = RlParams { iters: 1, sims: 2, batch: 1, sim_us: (10, 10), policy_us: 8, seed: 0 };
        // sims finish at 10 and 20 on one worker; each policy step takes 4
        assert_eq!(ideal_makespan(RlMode::Pipelined, &p, 1), 24);
        assert_eq!(ideal_makespan(RlMode::Bsp, &p, 1), 28);
        assert_eq!(ideal_makespan(RlMode::Serial, &p, 1), 28);
        assert_eq!(ideal_makespan(RlMode::Bsp, &p, 2), 18);
    }

    #[test]
    fn mode_parsing() {
        for m in [RlMode::Serial, RlMode::Bsp, RlMode::Pipelined] {
            assert_eq!(m.to_string().parse::<RlMode>().unwrap(), m);
        }
        assert!("async".parse::<RlMode>().is_err());
    }
}
