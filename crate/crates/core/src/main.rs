use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mrta_core::consensus::{covered_tasks, run_allocation, team_distance, RunConfig};
use mrta_core::eval::{
    export_report, fill_oracles, read_records, run_validation, summarize, BidderSpec, EvalRecord, Preset, DATASET_SIZE,
};
use mrta_core::io::write_jsonl;
use mrta_core::oracle::{load_cache, save_cache, OracleCache, SolverBudget};
use mrta_core::rl::{train, ActorKind, TrainConfig, TrainFiles};
use mrta_core::world::{generate_world, read_worlds, write_worlds, CapacityRule, WorldInstance, WorldSpec};

#[derive(Parser)]
#[command(name = "mrta", version, about = "Decentralized auction-consensus task allocation with learned bidders")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// TOML or JSON file with `run`, `budget` and `train` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world dataset (JSONL).
    Gen(GenArgs),
    /// Solve every world of a dataset into an oracle cache.
    Oracle(OracleArgs),
    /// Run the allocation protocol on every world of a dataset.
    Solve(SolveArgs),
    /// Train a learned bidder.
    Train(TrainArgs),
    /// Evaluate bidders against the oracle.
    Eval(EvalArgs),
    /// Summarize evaluation records into report files.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Named distribution: training, val5, val10, val15 or val20.
    #[arg(long, conflicts_with_all = ["agents", "tasks", "side", "capacity"])]
    preset: Option<String>,
    #[arg(long)]
    agents: Option<usize>,
    /// Task count range `lo..hi` (inclusive) or a single count.
    #[arg(long)]
    tasks: Option<String>,
    /// Workspace side range `lo..hi` (inclusive) or a single value.
    #[arg(long)]
    side: Option<String>,
    /// Per-agent task limit; unconstrained when omitted.
    #[arg(long)]
    capacity: Option<usize>,
    /// Number of worlds (1000 by default).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    worlds: PathBuf,
    /// Cache file; existing entries are kept and not solved again.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_nodes: Option<u64>,
    #[arg(long)]
    exact_threshold: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    worlds: PathBuf,
    #[arg(long, default_value = "classic")]
    bidder: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset; the training preset under `--seed` when omitted.
    #[arg(long)]
    worlds: Option<PathBuf>,
    /// Oracle cache for the dataset; missing entries are solved in memory.
    #[arg(long)]
    oracles: Option<PathBuf>,
    /// Actor architecture: nam or lstm.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from the state saved in `--out`.
    #[arg(long)]
    resume: bool,
    /// Output directory for checkpoints, curve and training state.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset files to evaluate.
    #[arg(long)]
    worlds: Vec<PathBuf>,
    /// Named datasets generated under `--seed` (repeatable).
    #[arg(long)]
    preset: Vec<String>,
    /// Worlds taken from each preset.
    #[arg(long)]
    count: Option<usize>,
    /// `classic`, `nam=<checkpoint>` or `lstm=<checkpoint>` (repeatable).
    #[arg(long, required = true)]
    bidder: Vec<String>,
    #[arg(long)]
    oracles: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Reuse records already in `--out` and save progress while running.
    #[arg(long)]
    resume: bool,
    /// Record file (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Record files written by `eval` (repeatable).
    #[arg(long, required = true)]
    records: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    run: RunConfig,
    budget: SolverBudget,
    train: TrainConfig,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        };
        config.run.validate()?;
        config.budget.validate()?;
        config.train.validate()?;
        Ok(config)
    }
}

/// One line of `solve` output.
#[derive(Debug, Serialize)]
struct SolveRecord {
    world_id: String,
    bidder: String,
    routes: Vec<Vec<usize>>,
    team_distance: f64,
    iterations: usize,
    rounds: usize,
    timed_out: bool,
    uncovered: usize,
}

fn parse_range<T: std::str::FromStr>(text: &str, what: &str) -> Result<RangeInclusive<T>> {
    let parse = |s: &str| s.trim().parse::<T>().map_err(|_| anyhow::anyhow!("invalid {what} {text:?}"));
    match text.split_once("..") {
        Some((lo, hi)) => Ok(parse(lo)?..=parse(hi.trim_start_matches('='))?),
        None => {
            let v = parse(text)?;
            let w = parse(text)?;
            Ok(v..=w)
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

fn load_worlds(path: &Path) -> Result<Vec<WorldInstance>> {
    require_file(path)?;
    read_worlds(path).with_context(|| format!("reading worlds from {}", path.display()))
}

fn load_oracles(path: Option<&Path>) -> Result<OracleCache> {
    match path {
        Some(p) => {
            require_file(p)?;
            load_cache(p).with_context(|| format!("reading oracle cache {}", p.display()))
        }
        None => Ok(OracleCache::new()),
    }
}

fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<()> {
    let (spec, first) = match &args.preset {
        Some(name) => {
            let p = Preset::parse(name).with_context(|| {
                format!("unknown preset {name:?}; valid presets: {}", Preset::ALL.map(|p| p.name()).join(", "))
            })?;
            (p.spec(), p.first_ordinal())
        }
        None => {
            let n_agents = args.agents.context("either --preset or --agents is required")?;
            let tasks = args.tasks.as_deref().context("--tasks is required with --agents")?;
            let mut spec = WorldSpec::validation(n_agents);
            spec.task_count = parse_range(tasks, "task range")?;
            if let Some(side) = &args.side {
                spec.side = parse_range(side, "side range")?;
            }
            if let Some(l) = args.capacity {
                spec.capacity = CapacityRule::Fixed(l);
            }
            (spec, 0)
        }
    };
    let count = args.count.unwrap_or(DATASET_SIZE);
    let worlds = (0..count as u64)
        .map(|i| generate_world(cli.seed, first + i, &spec))
        .collect::<mrta_core::Result<Vec<_>>>()?;
    write_worlds(&args.out, &worlds)?;
    eprintln!("wrote {} worlds to {}", worlds.len(), args.out.display());
    Ok(())
}

fn budget_for(cli: &Cli, file: &FileConfig, max_nodes: Option<u64>, exact_threshold: Option<usize>) -> SolverBudget {
    let mut budget = file.budget.clone();
    budget.seed = cli.seed;
    if let Some(n) = max_nodes {
        budget.max_nodes = n;
    }
    if let Some(t) = exact_threshold {
        budget.exact_threshold = t;
    }
    budget
}

fn cmd_oracle(cli: &Cli, file: &FileConfig, args: &OracleArgs) -> Result<()> {
    let worlds = load_worlds(&args.worlds)?;
    let budget = budget_for(cli, file, args.max_nodes, args.exact_threshold);
    budget.validate()?;
    let mut cache = if args.out.exists() { load_cache(&args.out)? } else { OracleCache::new() };
    let solved = fill_oracles(&worlds, &budget, &mut cache)?;
    save_cache(&args.out, &cache)?;
    let inexact = worlds.iter().filter(|w| !cache[&w.id].proof_of_optimality).count();
    eprintln!(
        "{} worlds: {} cache hits, {} solved, {} without proof of optimality",
        worlds.len(),
        worlds.len() - solved,
        solved,
        inexact
    );
    Ok(())
}

fn run_config(file: &FileConfig, max_iterations: Option<usize>) -> Result<RunConfig> {
    let mut run = file.run.clone();
    if let Some(m) = max_iterations {
        run.max_iterations = m;
    }
    run.validate()?;
    Ok(run)
}

fn cmd_solve(file: &FileConfig, args: &SolveArgs) -> Result<()> {
    let worlds = load_worlds(&args.worlds)?;
    let spec = BidderSpec::load(&args.bidder, args.checkpoint.as_deref())?;
    let run = RunConfig { record_trajectory: false, ..run_config(file, args.max_iterations)? };
    use rayon::prelude::*;
    let records = worlds
        .par_iter()
        .map(|w| {
            let result = run_allocation(w, spec.bidder().as_mut(), &run)?;
            Ok(SolveRecord {
                world_id: w.id.to_string(),
                bidder: spec.name().to_string(),
                routes: result.states.iter().map(|s| s.path.tasks.clone()).collect(),
                team_distance: team_distance(&result.states, w),
                iterations: result.iterations_used,
                rounds: result.rounds_executed,
                timed_out: result.timed_out,
                uncovered: w.n_tasks() - covered_tasks(&result.states, w.n_tasks()),
            })
        })
        .collect::<mrta_core::Result<Vec<_>>>()?;
    write_jsonl(&args.out, &records)?;
    let timeouts = records.iter().filter(|r| r.timed_out).count();
    eprintln!("solved {} worlds with {} ({} timeouts)", records.len(), spec.name(), timeouts);
    Ok(())
}

fn cmd_train(cli: &Cli, file: &FileConfig, args: &TrainArgs) -> Result<()> {
    let mut config = file.train.clone();
    if let Some(arch) = &args.arch {
        config.arch = ActorKind::parse(arch).with_context(|| format!("unknown architecture {arch:?}; valid: nam, lstm"))?;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    config.validate()?;
    let worlds = match &args.worlds {
        Some(p) => load_worlds(p)?,
        None => Preset::Training.worlds(cli.seed, DATASET_SIZE)?,
    };
    let mut oracles = load_oracles(args.oracles.as_deref())?;
    let budget = budget_for(cli, file, None, None);
    let solved = fill_oracles(&worlds, &budget, &mut oracles)?;
    if solved > 0 {
        eprintln!("solved {solved} oracle entries missing from the cache");
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let outcome = train(&worlds, &oracles, &config, cli.seed, Some(&args.out), args.resume)?;
    let files = TrainFiles::in_dir(&args.out);
    match outcome.curve.last() {
        Some(last) => eprintln!(
            "trained {} epochs; last probe eta {:.2}, best {:.2}; best checkpoint {}",
            last.epoch,
            last.mean_probe_eta,
            outcome.best_eta.unwrap_or(f64::NAN),
            files.best.display()
        ),
        None => eprintln!("no epochs run; initial checkpoint {}", files.policy.display()),
    }
    Ok(())
}

fn parse_bidder(text: &str) -> Result<BidderSpec> {
    let (name, checkpoint) = match text.split_once('=') {
        Some((n, p)) => (n, Some(PathBuf::from(p))),
        None => (text, None),
    };
    if let Some(p) = &checkpoint {
        require_file(p)?;
    }
    Ok(BidderSpec::load(name, checkpoint.as_deref())?)
}

fn cmd_eval(cli: &Cli, file: &FileConfig, args: &EvalArgs) -> Result<()> {
    // Load every checkpoint first so a bad one fails before any run.
    let bidders = args.bidder.iter().map(|b| parse_bidder(b)).collect::<Result<Vec<_>>>()?;
    let mut worlds = Vec::new();
    for p in &args.worlds {
        worlds.extend(load_worlds(p)?);
    }
    for name in &args.preset {
        let p = Preset::parse(name).with_context(|| {
            format!("unknown preset {name:?}; valid presets: {}", Preset::ALL.map(|p| p.name()).join(", "))
        })?;
        worlds.extend(p.worlds(cli.seed, args.count.unwrap_or(DATASET_SIZE))?);
    }
    if worlds.is_empty() {
        bail!("no worlds given; use --worlds or --preset");
    }
    let run = run_config(file, args.max_iterations)?;
    let mut oracles = load_oracles(args.oracles.as_deref())?;
    fill_oracles(&worlds, &budget_for(cli, file, None, None), &mut oracles)?;
    let cache = args.resume.then_some(args.out.as_path());
    let records = run_validation(&worlds, &bidders, &run, &oracles, cache)?;
    write_jsonl(&args.out, &records)?;
    for s in summarize(&records) {
        eprintln!(
            "{:>8} n_agents={:>2} median_eta={:>7.3} p95_iter={:>5.1} timeouts={}",
            s.bidder,
            s.n_agents,
            s.median_eta().unwrap_or(f64::NAN),
            s.iterations_p95.unwrap_or(f64::NAN),
            s.timeouts
        );
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut records: Vec<EvalRecord> = Vec::new();
    for p in &args.records {
        require_file(p)?;
        records.extend(read_records(p).with_context(|| format!("reading records {}", p.display()))?);
    }
    let stats = summarize(&records);
    let files = export_report(&records, &stats, &args.out)?;
    eprintln!(
        "wrote {}, {} and {}",
        files.records.display(),
        files.summary.display(),
        files.plot.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global()?;
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Oracle(a) => cmd_oracle(cli, &file, a),
        Command::Solve(a) => cmd_solve(&file, a),
        Command::Train(a) => cmd_train(cli, &file, a),
        Command::Eval(a) => cmd_eval(cli, &file, a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Exit codes: 0 success, 1 usage error, 2 runtime failure.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
