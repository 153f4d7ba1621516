//! Function registry, the kernel-side task context, and task execution.

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Duration;

use crate::error::ApiError;
use crate::ids::{derive_task_id, ObjectId, TaskId};
use crate::task::{Arg, Resources, TaskSpec};
use crate::value::{encode_value, Value, MAX_DEPTH};

pub type Kernel = Arc<dyn Fn(&mut TaskContext<'_>, Vec<Value>) -> Result<Vec<Value>, String> + Send + Sync>;

/// Maps function names to kernels. Every node sees the same registry.
#[derive(Clone, Default)]
pub struct FunctionRegistry {
    kernels: BTreeMap<String, Kernel>,
}

impl fmt::Debug for FunctionRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.kernels.keys()).finish()
    }
}

impl FunctionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: impl Into<String>, kernel: F) -> &mut Self
    where
        F: Fn(&mut TaskContext<'_>, Vec<Value>) -> Result<Vec<Value>, String> + Send + Sync + 'static,
    {
        self.kernels.insert(name.into(), Arc::new(kernel));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Kernel> {
        self.kernels.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.kernels.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kernels.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemoteOptions {
    pub num_returns: u32,
    pub demand: Resources,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions { num_returns: 1, demand: Resources::cpu(1) }
    }
}

impl RemoteOptions {
    pub fn returns(mut self, n: u32) -> Self {
        self.num_returns = n;
        self
    }

    pub fn demand(mut self, demand: Resources) -> Self {
        self.demand = demand;
        self
    }
}

/// Builds the spec for the `counter`-th submission made by `parent`.
pub fn build_spec(
    registry: &FunctionRegistry,
    parent: &TaskId,
    counter: u32,
    name: &str,
    args: Vec<Arg>,
    opts: RemoteOptions,
) -> Result<TaskSpec, ApiError> {
    if !registry.contains(name) {
        return Err(ApiError::UnknownFunction(name.to_owned()));
    }
    if opts.num_returns == 0 {
        return Err(ApiError::InvalidArgument("num_returns must be at least 1".into()));
    }
    for a in &args {
        if let Arg::Value(v) = a {
            if v.depth() > MAX_DEPTH {
                return Err(ApiError::Codec(crate::error::CodecError::DepthExceeded));
            }
        }
    }
    Ok(TaskSpec::new(derive_task_id(parent, counter), name, args, opts.num_returns, opts.demand))
}

/// What a kernel's side effects go through: child submissions and sleeping.
pub trait TaskSink {
    fn submit(&mut self, spec: TaskSpec);
    fn sleep_micros(&mut self, micros: u64);
}

/// Handed to every kernel invocation.
pub struct TaskContext<'a> {
    task_id: TaskId,
    counter: u32,
    registry: &'a FunctionRegistry,
    sink: &'a mut dyn TaskSink,
}

impl<'a> TaskContext<'a> {
    pub fn new(task_id: TaskId, registry: &'a FunctionRegistry, sink: &'a mut dyn TaskSink) -> Self {
        TaskContext { task_id, counter: 0, registry, sink }
    }

    pub fn task_id(&self) -> TaskId {
        self.task_id
    }

    pub fn rng_seed(&self) -> u64 {
        self.task_id.rng_seed()
    }

    /// Submits a child task and returns its futures without waiting.
    pub fn remote(&mut self, name: &str, args: Vec<Arg>, opts: RemoteOptions) -> Result<Vec<ObjectId>, ApiError> {
        let spec = build_spec(self.registry, &self.task_id, self.counter, name, args, opts)?;
        self.counter += 1;
        let ids = spec.return_ids();
        self.sink.submit(spec);
        Ok(ids)
    }

    pub fn sleep_micros(&mut self, micros: u64) {
        self.sink.sleep_micros(micros);
    }

    pub fn sleep(&mut self, d: Duration) {
        self.sink.sleep_micros(d.as_micros() as u64);
    }
}

/// Runs one task and returns its encoded return values. Error arguments
/// short-circuit to the same error; kernel failures and panics become error
/// values. Never panics.
pub fn run_task(registry: &FunctionRegistry, spec: &TaskSpec, args: Vec<Value>, sink: &mut dyn TaskSink) -> Vec<Vec<u8>> {
    let n = spec.num_returns as usize;
    let fail = |v: Value| vec![encode_value(&v).expect("error values are shallow"); n];
    if let Some(err) = args.iter().find(|a| a.is_error()) {
        return fail(err.clone());
    }
    let Some(kernel) = registry.get(&spec.function_name) else {
        return fail(Value::error(format!("unknown function {:?}", spec.function_name)));
    };
    let kernel = kernel.clone();
    let mut ctx = TaskContext::new(spec.task_id, registry, sink);
    let result = catch_unwind(AssertUnwindSafe(|| kernel(&mut ctx, args)));
    let values = match result {
        Ok(Ok(values)) if values.len() == n => values,
        Ok(Ok(values)) => {
            return fail(Value::error(format!(
                "{} returned {} values, expected {n}",
                spec.function_name,
                values.len()
            )))
        }
        Ok(Err(msg)) => return fail(Value::error(msg)),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "kernel panicked".into());
            return fail(Value::error(format!("{} panicked: {msg}", spec.function_name)));
        }
    };
    values
        .iter()
        .map(|v| encode_value(v).unwrap_or_else(|e| encode_value(&Value::error(e.to_string())).expect("shallow")))
        .collect()
}

/// Collects effects for callers that run kernels on a virtual clock.
#[derive(Debug, Default)]
pub struct RecordingSink {
    pub submitted: Vec<TaskSpec>,
    pub slept: u64,
}

impl TaskSink for RecordingSink {
    fn submit(&mut self, spec: TaskSpec) {
        self.submitted.push(spec);
    }

    fn sleep_micros(&mut self, micros: u64) {
        self.slept += micros;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::decode_value;

    fn registry() -> FunctionRegistry {
        let mut r = FunctionRegistry::new();
        r.register("add", |_, args| Ok(vec![Value::Int(args[0].as_int().unwrap() + args[1].as_int().unwrap())]));
        r.register("boom", |_, _| panic!("kaboom"));
        r.register("fails", |_, _| Err("bad input".into()));
        r.register("spawn", |ctx, _| {
            let ids = ctx.remote("add", vec![Arg::from(1), Arg::from(2)], RemoteOptions::default()).unwrap();
            ctx.sleep_micros(50);
            Ok(vec![Value::Ref(ids[0])])
        });
        r.register("pair", |_, _| Ok(vec![Value::Int(1), Value::Int(2)]));
        r
    }

    fn spec(name: &str, args: Vec<Arg>, n: u32) -> TaskSpec {
        TaskSpec::new(TaskId([7; 16]), name, args, n, Resources::cpu(1))
    }

    fn run(name: &str, args: Vec<Value>, n: u32) -> (Vec<Value>, RecordingSink) {
        let mut sink = RecordingSink::default();
        let out = run_task(&registry(), &spec(name, vec![], n), args, &mut sink);
        (out.iter().map(|b| decode_value(b).unwrap()).collect(), sink)
    }

    #[test]
    fn runs_kernel() {
        assert_eq!(run("add", vec![Value::Int(1), Value::Int(2)], 1).0, vec![Value::Int(3)]);
        assert_eq!(run("pair", vec![], 2).0, vec![Value::Int(1), Value::Int(2)]);
    }

    #[test]
    fn failures_become_error_values() {
        assert!(run("boom", vec![], 1).0[0].as_error().unwrap().contains("kaboom"));
        assert_eq!(run("fails", vec![], 2).0, vec![Value::error("bad input"); 2]);
        assert!(run("pair", vec![], 1).0[0].is_error());
        assert!(run("nope", vec![], 1).0[0].is_error());
    }

    #[test]
    fn error_arguments_propagate() {
        let err = Value::error("upstream");
        assert_eq!(run("add", vec![Value::Int(1), err.clone()], 1).0, vec![err]);
    }

    #[test]
    fn nested_submission_is_deterministic() {
        let (a, sa) = run("spawn", vec![], 1);
        let (b, sb) = run("spawn", vec![], 1);
        assert_eq!(a, b);
        assert_eq!(sa.submitted, sb.submitted);
        assert_eq!(sa.slept, 50);
        let child = &sa.submitted[0];
        assert_eq!(child.task_id, derive_task_id(&TaskId([7; 16]), 0));
        assert_eq!(a[0], Value::Ref(child.return_id(0)));
    }

    #[test]
    fn build_spec_checks() {
        let r = registry();
        assert!(matches!(
            build_spec(&r, &TaskId::default(), 0, "missing", vec![], RemoteOptions::default()),
            Err(ApiError::UnknownFunction(_))
        ));
        assert!(build_spec(&r, &TaskId::default(), 0, "add", vec![], RemoteOptions::default().returns(0)).is_err());
        let mut deep = Value::Int(0);
        for _ in 0..70 {
            deep = Value::List(vec![deep]);
        }
        assert!(build_spec(&r, &TaskId::default(), 0, "add", vec![Arg::Value(deep)], RemoteOptions::default()).is_err());
    }
}
