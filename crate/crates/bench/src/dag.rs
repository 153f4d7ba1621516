//! Random task DAGs, a single-threaded evaluator for them, and a harness that
//! runs one on a cluster, optionally killing a node partway through.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use dynflow::{Arg, Cluster, ClusterConfig, Driver, FunctionRegistry, NodeId, ObjectId, Value};
use rand::Rng;

use crate::{mix64, BenchError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagTask {
    /// Indices of earlier tasks whose results this one consumes.
    pub inputs: Vec<usize>,
    pub literal: i64,
    pub sleep_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dag {
    pub tasks: Vec<DagTask>,
}

impl Dag {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// `n` tasks, each reading up to `max_inputs` distinct earlier ones.
pub fn random_dag(rng: &mut impl Rng, n: usize, max_inputs: usize, sleep_us: (u64, u64)) -> Dag {
    let tasks = (0..n)
        .map(|i| {
            let k = rng.gen_range(0..=max_inputs.min(i));
            let mut inputs: Vec<usize> = Vec::with_capacity(k);
            while inputs.len() < k {
                let j = rng.gen_range(0..i);
                if !inputs.contains(&j) {
                    inputs.push(j);
                }
            }
            DagTask { inputs, literal: rng.gen(), sleep_us: rng.gen_range(sleep_us.0..=sleep_us.1) }
        })
        .collect();
    Dag { tasks }
}

/// The value a task produces from its literal and its inputs' heads.
pub fn combine(literal: i64, inputs: &[i64]) -> Value {
    let h = inputs.iter().fold(mix64(literal as u64), |h, x| mix64(h.rotate_left(7) ^ *x as u64));
    Value::List(vec![
        Value::Int(h as i64),
        Value::Float((h >> 11) as f64 / (1u64 << 53) as f64),
        Value::Bytes(h.to_le_bytes()[..(h % 9) as usize].to_vec()),
    ])
}

fn head(v: &Value) -> Option<i64> {
    v.as_list().and_then(|l| l.first()).and_then(Value::as_int)
}

pub fn register(r: &mut FunctionRegistry) {
    r.register("combine", |ctx, a| {
        let (Some(sleep), Some(literal)) = (a.first().and_then(Value::as_int), a.get(1).and_then(Value::as_int)) else {
            return Err("combine takes (sleep, literal, inputs...)".into());
        };
        let inputs: Option<Vec<i64>> = a[2..].iter().map(head).collect();
        let inputs = inputs.ok_or("combine input is not a combine result")?;
        ctx.sleep_micros(sleep as u64);
        Ok(vec![combine(literal, &inputs)])
    });
}

/// Evaluates the DAG in Kahn order on the calling thread.
pub fn oracle(dag: &Dag) -> Vec<Value> {
    let n = dag.len();
    let mut indegree: Vec<usize> = dag.tasks.iter().map(|t| t.inputs.len()).collect();
    let mut consumers: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in dag.tasks.iter().enumerate() {
        for j in &t.inputs {
            consumers.entry(*j).or_default().push(i);
        }
    }
    let mut ready: VecDeque<usize> = (0..n).filter(|i| indegree[*i] == 0).collect();
    let mut out: Vec<Option<Value>> = vec![None; n];
    while let Some(i) = ready.pop_front() {
        let t = &dag.tasks[i];
        let inputs: Vec<i64> = t.inputs.iter().map(|j| head(out[*j].as_ref().unwrap()).unwrap()).collect();
        out[i] = Some(combine(t.literal, &inputs));
        for c in consumers.get(&i).into_iter().flatten() {
            indegree[*c] -= 1;
            if indegree[*c] == 0 {
                ready.push_back(*c);
            }
        }
    }
    out.into_iter().map(|v| v.expect("dag has a cycle")).collect()
}

pub fn submit(driver: &Driver, dag: &Dag) -> Result<Vec<ObjectId>, BenchError> {
    let mut outs: Vec<ObjectId> = Vec::with_capacity(dag.len());
    for t in &dag.tasks {
        let mut args = vec![Arg::from(t.sleep_us as i64), Arg::from(t.literal)];
        args.extend(t.inputs.iter().map(|j| Arg::Future(outs[*j])));
        outs.push(driver.remote("combine", args)?);
    }
    Ok(outs)
}

/// A node to kill and when, in driver-clock microseconds after submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kill {
    pub node: NodeId,
    pub at_us: u64,
}

/// Starts a cluster, runs `dag` on it, and returns every task's value along
/// with the cluster for inspection.
pub fn run_on(cfg: &ClusterConfig, dag: &Dag, kill: Option<Kill>, timeout: Duration) -> Result<(Vec<Value>, Cluster), BenchError> {
    let cluster = Cluster::start(cfg.clone(), crate::registry())?;
    let d = cluster.driver();
    let outs = submit(d, dag)?;
    if let Some(k) = kill {
        d.idle(Duration::from_micros(k.at_us));
        cluster.kill_node(k.node)?;
    }
    let values = d.get_all(&outs, Some(timeout))?;
    Ok((values, cluster))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_dags_are_acyclic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let dag = random_dag(&mut rng, 40, 3, (0, 10));
            for (i, t) in dag.tasks.iter().enumerate() {
                assert!(t.inputs.len() <= 3);
                assert!(t.inputs.iter().all(|j| *j < i));
            }
            assert_eq!(oracle(&dag).len(), 40);
        }
    }

    #[test]
    fn oracle_on_a_diamond() {
        let t = |inputs: Vec<usize>, literal| DagTask { inputs, literal, sleep_us: 0 };
        let dag = Dag { tasks: vec![t(vec![], 1), t(vec![0], 2), t(vec![0], 3), t(vec![2, 1], 4)] };
        let out = oracle(&dag);
        let a = head(&combine(1, &[])).unwrap();
        let b = head(&combine(2, &[a])).unwrap();
        let c = head(&combine(3, &[a])).unwrap();
        assert_eq!(out[3], combine(4, &[c, b]));
        assert_ne!(out[3], combine(4, &[b, c]));
    }
}
