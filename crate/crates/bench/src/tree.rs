//! Dynamic tree search. Each `expand` task either scores a leaf or submits
//! one child per branch and returns references to them; the driver harvests
//! finished subtrees with `wait` and keeps the best leaf score.

use dynflow::{inspect, Arg, Cluster, FunctionRegistry, ObjectId, RemoteOptions, TaskState, Value};

use crate::report::{BenchReport, Summary};
use crate::{mix64, BenchError};

fn path_hash(path: &str) -> u64 {
    path.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn leaf_score(seed: u64, path: &str) -> i64 {
    (mix64(seed ^ path_hash(path)) >> 1) as i64
}

pub fn register(r: &mut FunctionRegistry) {
    r.register("expand", |ctx, a| {
        let (Some(Value::Str(path)), Some(left), Some(b), Some(seed)) =
            (a.first(), a.get(1).and_then(Value::as_int), a.get(2).and_then(Value::as_int), a.get(3).and_then(Value::as_int))
        else {
            return Err("expand takes (path, depth, branching, seed)".into());
        };
        if left <= 1 {
            return Ok(vec![Value::Int(leaf_score(seed as u64, path))]);
        }
        let mut refs = Vec::with_capacity(b as usize);
        for i in 0..b {
            let args = vec![Arg::from(Value::Str(format!("{path}.{i}"))), Arg::from(left - 1), Arg::from(b), Arg::from(seed)];
            let child = ctx.remote("expand", args, RemoteOptions::default()).map_err(|e| e.to_string())?;
            refs.push(Value::Ref(child[0]));
        }
        Ok(vec![Value::List(refs)])
    });
}

/// b + b^2 + ... + b^d.
pub fn expected_tasks(branching: u64, depth: u32) -> u64 {
    if branching == 1 {
        depth as u64
    } else {
        (branching.pow(depth + 1) - branching) / (branching - 1)
    }
}

/// Walks the tree recursively on one thread: (expanded nodes, best score).
pub fn oracle(branching: u64, depth: u32, seed: u64) -> (u64, i64) {
    fn go(path: &str, left: u32, b: u64, seed: u64) -> (u64, i64) {
        if left <= 1 {
            return (1, leaf_score(seed, path));
        }
        (0..b).map(|i| go(&format!("{path}.{i}"), left - 1, b, seed)).fold((1, i64::MIN), |(n, m), (cn, cm)| (n + cn, m.max(cm)))
    }
    (0..branching).map(|i| go(&i.to_string(), depth, branching, seed)).fold((0, i64::MIN), |(n, m), (cn, cm)| (n + cn, m.max(cm)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeOutcome {
    pub score: i64,
    /// Results harvested by the driver, one per expanded node.
    pub harvested: u64,
    /// `expand` tasks the control plane recorded as DONE.
    pub executed: u64,
    pub wall_us: u64,
}

pub fn run_tree(cluster: &Cluster, branching: i64, depth: i64, seed: u64) -> Result<TreeOutcome, BenchError> {
    if branching < 1 || depth < 1 {
        return Err(BenchError::InvalidParameter(format!("branching {branching} and depth {depth} must be at least 1")));
    }
    let d = cluster.driver();
    let start = d.now();
    let mut pending: Vec<ObjectId> = (0..branching)
        .map(|i| d.remote("expand", vec![Arg::from(Value::Str(i.to_string())), Arg::from(depth), Arg::from(branching), Arg::from(seed as i64)]))
        .collect::<Result<_, _>>()?;
    let (mut score, mut harvested) = (i64::MIN, 0u64);
    while !pending.is_empty() {
        let (ready, rest) = d.wait(&pending, 1, None)?;
        pending = rest;
        for o in ready {
            harvested += 1;
            match d.get(o, None)? {
                Value::Int(s) => score = score.max(s),
                Value::List(refs) => pending.extend(refs.iter().filter_map(Value::as_ref_id)),
                other => return Err(BenchError::Mismatch(format!("expand returned {other:?}"))),
            }
        }
    }
    let wall_us = d.now() - start;
    let executed = inspect::tasks(d)?
        .iter()
        .filter(|t| t.spec.function_name == "expand" && t.state == TaskState::Done)
        .count() as u64;
    Ok(TreeOutcome { score, harvested, executed, wall_us })
}

pub fn bench_tree(cluster: &Cluster, branching: i64, depth: i64, seed: u64) -> Result<(BenchReport, TreeOutcome), BenchError> {
    let out = run_tree(cluster, branching, depth, seed)?;
    let mut report = BenchReport::new("tree", cluster.config());
    report
        .add("wall", Summary::single(out.wall_us as f64, "us"))
        .add("tasks", Summary::single(out.executed as f64, "tasks"))
        .add("throughput", Summary::single(out.executed as f64 / (out.wall_us.max(1) as f64 / 1e6), "tasks/s"));
    Ok((report, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_enumeration() {
        for b in 1..=4u64 {
            for d in 1..=5u32 {
                assert_eq!(oracle(b, d, 0).0, expected_tasks(b, d), "b={b} d={d}");
            }
        }
        assert_eq!(expected_tasks(1, 3), 3);
        assert_eq!(expected_tasks(2, 3), 14);
    }

    #[test]
    fn scores_depend_on_path_and_seed() {
        assert_ne!(leaf_score(1, "0.1"), leaf_score(1, "0.2"));
        assert_ne!(leaf_score(1, "0.1"), leaf_score(2, "0.1"));
        assert!(leaf_score(3, "x") >= 0);
    }
}
