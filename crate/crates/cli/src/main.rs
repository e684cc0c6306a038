use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use racestrat::agent::{evaluate, load_checkpoint, save_checkpoint, train_with, TrainConfig};
use racestrat::bench::{default_disturbance, emit_report, run_disturbance, run_nominal, summary_markdown, BenchOptions, ReportFormat};
use racestrat::env::{rollout, Disturbance, ScenarioSpec};
use racestrat::minlp::{branch_and_bound, BnbOptions, OcpProblem, SearchSpace};
use racestrat::RaceConfig;
use racestrat_service::{ServiceConfig, ENV_ADDR, ENV_CHECKPOINT, ENV_DATA_DIR, ENV_OPTIMIZER_WORKERS};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "racestrat", version, about = "Hybrid race strategy: optimizer, RL agent, benchmarks and live service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimum race time by branch-and-bound over the pit schedule.
    Optimize(OptimizeArgs),
    /// Train the agent and write a checkpoint.
    Train(TrainArgs),
    /// Deterministic episode with a trained checkpoint.
    Eval(EvalArgs),
    /// Optimizer vs agent (vs heuristic) comparison.
    Bench(BenchArgs),
    /// Run the HTTP/WebSocket service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    /// Race config JSON; defaults to the built-in 57-lap race.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Absolute optimality gap in seconds.
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    max_stops: Option<usize>,
    /// Node budget.
    #[arg(long)]
    nodes: Option<usize>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Single worker and fixed node order.
    #[arg(long)]
    deterministic: bool,
    /// Also allow a stop on the final lap.
    #[arg(long)]
    allow_last_lap: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON (config, disturbances, seed).
    #[arg(long, conflicts_with = "config")]
    spec: Option<PathBuf>,
    /// Race config JSON for a nominal scenario.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioSpec> {
        if let Some(p) = &self.spec {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            return Ok(ScenarioSpec::from_json(&text)?);
        }
        Ok(ScenarioSpec::nominal(load_config(self.config.as_deref())?))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Training hyperparameters JSON; missing fields take the defaults.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Learning curve JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Reference race time for the race time difference.
    #[arg(long)]
    reference: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Nominal,
    Disturbance,
}

#[derive(Args)]
struct BenchArgs {
    scenario: Scenario,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "bench-out")]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values = ["json", "csv", "md"])]
    format: Vec<Format>,
    /// Lap of the wear jump.
    #[arg(long)]
    lap: Option<usize>,
    #[arg(long)]
    tw_delta: Option<f64>,
    /// Laps between the jump and the go-long stop.
    #[arg(long, default_value_t = 2)]
    reaction_delay: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Md => ReportFormat::Md,
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = ENV_ADDR, default_value = racestrat_service::DEFAULT_ADDR)]
    addr: SocketAddr,
    #[arg(long, env = ENV_DATA_DIR, default_value = racestrat_service::DEFAULT_DATA_DIR)]
    data_dir: PathBuf,
    #[arg(long, env = ENV_CHECKPOINT)]
    checkpoint: Option<PathBuf>,
    #[arg(long, env = ENV_OPTIMIZER_WORKERS, default_value_t = 1)]
    optimizer_workers: usize,
}

fn load_config(path: Option<&Path>) -> Result<RaceConfig> {
    Ok(match path {
        Some(p) => RaceConfig::load(p)?,
        None => RaceConfig::default(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut space = SearchSpace::from_config(&cfg);
    space.allow_last_lap = a.allow_last_lap;
    let problem = OcpProblem::new(&cfg, space)?;
    let d = BnbOptions::default();
    let opts = BnbOptions {
        gap: a.gap.unwrap_or(d.gap),
        max_nodes: a.nodes.unwrap_or(d.max_nodes),
        max_stops: a.max_stops,
        time_limit_s: a.time_limit,
        deterministic: a.deterministic,
        ..d
    };
    let sol = branch_and_bound(&problem, &opts)?;
    println!(
        "{}  t_race {:.4} s  gap {:.4} s  nodes {}  {:.2} s  [{:?}]",
        sol.strategy, sol.t_race, sol.gap, sol.stats.nodes, sol.stats.wall_time_s, sol.status
    );
    if let Some(out) = a.out {
        write_json(&out, &sol)?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let spec = a.scenario.load()?;
    let mut cfg: TrainConfig = match &a.train_config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = train_with(&spec, &cfg, |p| {
        log::info!("step {:>7}  episodes {:>5}  t_race {:.3}  {}  forced {}", p.step, p.episodes, p.t_race, p.strategy, p.forced)
    })?;
    let meta = serde_json::json!({ "train": cfg, "spec": spec, "best": out.best, "wall_time_s": out.wall_time_s });
    save_checkpoint(&a.checkpoint, &out.params, meta)?;
    let ev = evaluate(&out.params, &spec, None)?;
    println!("{}  t_race {:.4} s  trained {:.0} s", ev.metrics.strategy, ev.metrics.t_race, out.wall_time_s);
    if let Some(p) = a.out {
        write_json(&p, &serde_json::json!({ "curve": out.curve, "episode_returns": out.episode_returns, "best": out.best }))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let spec = a.scenario.load()?;
    let (params, _) = load_checkpoint(&a.checkpoint)?;
    let ev = evaluate(&params, &spec, a.reference)?;
    let m = &ev.metrics;
    print!("{}  t_race {:.4} s", m.strategy, m.t_race);
    if let Some(d) = m.delta_t_race {
        print!("  dT {d:+.4} s");
    }
    println!("  inference {:.3} ms/lap", m.inference_s_per_lap * 1e3);
    if let Some(p) = a.out {
        let env = rollout(spec, |_, env| ev.actions[env.lap()])?;
        write_json(&p, &serde_json::json!({ "metrics": ev.metrics, "actions": ev.actions, "laps": env.rows() }))?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let Some(ck) = &a.checkpoint else { bail!("missing checkpoint: pass --checkpoint") };
    let (policy, _) = load_checkpoint(ck).with_context(|| format!("loading {}", ck.display()))?;
    let opts = BenchOptions { reaction_delay: a.reaction_delay, ..BenchOptions::default() };
    let report = match a.scenario {
        Scenario::Nominal => run_nominal(&cfg, &policy, &opts)?,
        Scenario::Disturbance => {
            let d = default_disturbance();
            let d = Disturbance { lap: a.lap.unwrap_or(d.lap), tw_delta: a.tw_delta.unwrap_or(d.tw_delta) };
            run_disturbance(&cfg, d, &policy, None, &opts)?
        }
    };
    let formats: Vec<ReportFormat> = a.format.into_iter().map(Into::into).collect();
    let files = emit_report(&report, &a.out_dir, &formats)?;
    print!("{}", summary_markdown(&report));
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Optimize(a) => optimize(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Serve(a) => {
            let cfg = ServiceConfig { addr: a.addr, data_dir: a.data_dir, checkpoint: a.checkpoint, optimizer_workers: a.optimizer_workers };
            tokio::runtime::Runtime::new()?.block_on(racestrat_service::serve(cfg))
        }
    }
}
