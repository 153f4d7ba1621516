use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynflow::inspect::{self, Format};
use dynflow::{Arg, Cluster, ClusterConfig, Mode, NodeOverride, TaskId};
use dynflow_bench::report::Summary;
use dynflow_bench::rl::{self, RlMode, RlParams};
use dynflow_bench::{micro, registry, tree, BenchError, BenchReport};

#[derive(Parser)]
#[command(name = "dynflow", version, about = "Benchmarks and inspection for dynflow clusters")]
struct Cli {
    /// Cluster config file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "mode", value_enum)]
    cluster_mode: Option<ClusterMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "text")]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClusterMode {
    Sim,
    Proc,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Bench(Bench),
    Inspect(InspectArgs),
}

#[derive(Subcommand)]
enum Bench {
    /// Creation, retrieval, and round-trip latencies.
    Micro {
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
    },
    /// Simulate/policy loop; every mode when --mode is omitted.
    Rl {
        #[arg(long = "mode", value_enum)]
        rl_mode: Option<RlModeArg>,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 32)]
        sims: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 10)]
        policy_ms: u64,
    },
    /// Dynamic tree search.
    Tree {
        #[arg(long)]
        branching: i64,
        #[arg(long)]
        depth: i64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RlModeArg {
    Serial,
    Bsp,
    Pipelined,
}

impl From<RlModeArg> for RlMode {
    fn from(m: RlModeArg) -> Self {
        match m {
            RlModeArg::Serial => RlMode::Serial,
            RlModeArg::Bsp => RlMode::Bsp,
            RlModeArg::Pipelined => RlMode::Pipelined,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Tasks,
    Objects,
    Timeline,
}

#[derive(Clone, Copy, ValueEnum)]
enum Workload {
    Chain,
    Tree,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(value_enum)]
    what: Table,
    /// Only this task's events (timeline).
    #[arg(long)]
    task: Option<String>,
    /// What to run before dumping the tables.
    #[arg(long, value_enum, default_value = "chain")]
    workload: Workload,
}

struct Setup {
    cfg: ClusterConfig,
    from_file: bool,
    format: Format,
}

impl Setup {
    fn new(cli: &Cli) -> Result<Setup, BenchError> {
        let (mut cfg, from_file) = match &cli.config {
            Some(path) => (ClusterConfig::from_file(path).map_err(|e| BenchError::InvalidParameter(e.to_string()))?, true),
            None => (ClusterConfig::default(), false),
        };
        if let Some(m) = cli.cluster_mode {
            cfg.mode = match m {
                ClusterMode::Sim => Mode::Simulated,
                ClusterMode::Proc => Mode::Process,
            };
        }
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        let format = match cli.format {
            OutputFormat::Text => Format::Text,
            OutputFormat::Csv => Format::Csv,
        };
        Ok(Setup { cfg, from_file, format })
    }

    fn start(&self, cfg: ClusterConfig) -> Result<Cluster, BenchError> {
        cfg.validate().map_err(|e| BenchError::InvalidParameter(e.to_string()))?;
        Ok(Cluster::start(cfg, registry())?)
    }
}

fn run(cli: Cli) -> Result<String, BenchError> {
    let setup = Setup::new(&cli)?;
    match cli.command {
        Command::Bench(Bench::Micro { iters }) => {
            if iters == 0 {
                return Err(BenchError::InvalidParameter("iterations must be at least 1".into()));
            }
            let mut cfg = setup.cfg.clone();
            if cli.cluster_mode.is_none() {
                cfg.mode = Mode::Process;
            }
            if !setup.from_file {
                cfg.num_nodes = 2;
                cfg.node_overrides.insert(1, NodeOverride { cpu: None, gpu: Some(1), workers: None });
            }
            let cluster = setup.start(cfg)?;
            Ok(micro::bench_micro(&cluster, iters)?.render(setup.format))
        }
        Command::Bench(Bench::Rl { rl_mode, iters, sims, batch, policy_ms }) => {
            let p = RlParams { iters, sims, batch, policy_us: policy_ms * 1000, seed: setup.cfg.seed, ..RlParams::default() };
            p.validate()?;
            let cfg = if setup.from_file { setup.cfg.clone() } else { rl::rl_config(&setup.cfg, 8) };
            let modes: Vec<RlMode> = match rl_mode {
                Some(m) => vec![m.into()],
                None => vec![RlMode::Serial, RlMode::Bsp, RlMode::Pipelined],
            };
            let mut report = BenchReport::new("rl", &cfg);
            let mut walls = Vec::new();
            for mode in modes {
                let cluster = setup.start(cfg.clone())?;
                let out = rl::run_rl(&cluster, mode, &p)?;
                let iters: Vec<f64> = out.iter_us.iter().map(|x| *x as f64).collect();
                report.add(&format!("{mode}_iteration"), Summary::from_samples(&iters, "us"));
                report.add(&format!("{mode}_wall"), Summary::single(out.wall_us as f64, "us"));
                walls.push((mode, out.wall_us as f64));
            }
            if let Some((_, serial)) = walls.iter().find(|(m, _)| *m == RlMode::Serial) {
                for (mode, wall) in walls.iter().filter(|(m, _)| *m != RlMode::Serial) {
                    report.add(&format!("{mode}_speedup"), Summary::single(serial / wall, "x"));
                }
            }
            Ok(report.render(setup.format))
        }
        Command::Bench(Bench::Tree { branching, depth }) => {
            if branching < 1 || depth < 1 {
                return Err(BenchError::InvalidParameter(format!("branching {branching} and depth {depth} must be at least 1")));
            }
            let cluster = setup.start(setup.cfg.clone())?;
            let (report, out) = tree::bench_tree(&cluster, branching, depth, setup.cfg.seed)?;
            let (count, score) = tree::oracle(branching as u64, depth as u32, setup.cfg.seed);
            let mut text = report.render(setup.format);
            if setup.format == Format::Text {
                text.push_str(&format!(
                    "score={} executed={} expected={} matches_reference={}\n",
                    out.score,
                    out.executed,
                    count,
                    out.score == score && out.executed == count
                ));
            }
            Ok(text)
        }
        Command::Inspect(args) => {
            let task = match &args.task {
                Some(hex) => Some(TaskId::from_hex(hex).ok_or_else(|| BenchError::InvalidParameter(format!("bad task id {hex:?}")))?),
                None => None,
            };
            let cluster = setup.start(setup.cfg.clone())?;
            let d = cluster.driver();
            match args.workload {
                Workload::Chain => {
                    let mut prev: Option<dynflow::ObjectId> = None;
                    for literal in 1..=3 {
                        let mut args = vec![Arg::from(0), Arg::from(literal)];
                        args.extend(prev.map(Arg::Future));
                        prev = Some(d.remote("combine", args)?);
                    }
                    d.get(prev.expect("chain is not empty"), None)?;
                }
                Workload::Tree => {
                    tree::run_tree(&cluster, 2, 3, setup.cfg.seed)?;
                }
            }
            let rows = match args.what {
                Table::Tasks => inspect::task_rows(&inspect::tasks(d)?),
                Table::Objects => inspect::object_rows(&inspect::objects(d)?),
                Table::Timeline => inspect::timeline_rows(&d.events()?, task),
            };
            Ok(rows.render(setup.format))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
