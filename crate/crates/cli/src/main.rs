use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gobmd::detector::DetectorRegistry;
use gobmd::harness::{
    run_experiment, write_results, Experiment, ExperimentConfig, Metadata, OutputFormat, ResultTable,
};
use gobmd::model::{generate_instance, GenConfig, RealInstance};
use gobmd::solver::{BranchRule, CutMode, NodeSelection, PoolScope, SolveStatus, SolverOptions};

/// Global ML detection for one-bit quantized MIMO.
///
/// Exit codes: 0 success (solve: optimal), 2 solve stopped at a limit,
/// 1 usage, input or I/O error.
#[derive(Parser)]
#[command(name = "gobmd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance file and print the report as JSON.
    Solve(SolveArgs),
    /// Mean BER against SNR.
    Ber(ExperimentArgs),
    /// Solve time against the number of users.
    Runtime(ExperimentArgs),
    /// Terminal cut-pool ratio against the number of users.
    Ratio(ExperimentArgs),
    /// Mean BER over an (N/K, SNR) grid.
    Phase(ExperimentArgs),
    /// Generate a random instance file.
    Gen(GenArgs),
}

#[derive(Args, Default)]
struct SolverFlags {
    #[arg(long)]
    node_selection: Option<NodeSelection>,
    #[arg(long)]
    branch_rule: Option<BranchRule>,
    #[arg(long)]
    eps_int: Option<f64>,
    #[arg(long)]
    eps_cut: Option<f64>,
    #[arg(long)]
    eps_prune: Option<f64>,
    #[arg(long)]
    node_limit: Option<u64>,
    /// Seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    cut_mode: Option<CutMode>,
    #[arg(long)]
    pool_scope: Option<PoolScope>,
    #[arg(long)]
    max_fractional_rounds: Option<usize>,
    #[arg(long)]
    lp_max_iterations: Option<usize>,
    #[arg(long)]
    record_trace: bool,
}

impl SolverFlags {
    fn apply(&self, o: &mut SolverOptions) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { o.$f = v; })* };
        }
        set!(node_selection, branch_rule, eps_int, eps_cut, eps_prune, node_limit, cut_mode, pool_scope, max_fractional_rounds);
        if self.time_limit.is_some() {
            o.time_limit = self.time_limit;
        }
        if self.lp_max_iterations.is_some() {
            o.lp_max_iterations = self.lp_max_iterations;
        }
        o.record_trace |= self.record_trace;
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON file.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, default_value = "gobmd")]
    detector: String,
    /// JSON file with solver options; flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; flags override its keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Complex receive antennas.
    #[arg(long)]
    n_ant: Option<usize>,
    /// Comma-separated complex user counts.
    #[arg(long, value_delimiter = ',')]
    k_users: Option<Vec<usize>>,
    /// Comma-separated SNR values in dB.
    #[arg(long, alias = "snr", value_delimiter = ',', allow_negative_numbers = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated detector names.
    #[arg(long, value_delimiter = ',')]
    detectors: Option<Vec<String>>,
    /// Comma-separated N/K values (phase grid).
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<usize>>,
    #[arg(long)]
    workers: Option<usize>,
    /// Average BER over optimal trials only.
    #[arg(long)]
    optimal_only: bool,
    /// Summary table path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Also write one row per (trial, detector) here.
    #[arg(long, value_name = "PATH")]
    records: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n_ant: usize,
    #[arg(long)]
    k_users: usize,
    #[arg(long, alias = "snr", allow_negative_numbers = true)]
    snr_db: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Prints to stdout, ignoring a closed pipe.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn echo<T: serde::Serialize>(what: &str, value: &T) {
    eprintln!("{what}: {}", serde_json::to_string(value).expect("config serializes"));
}

fn cmd_solve(args: &SolveArgs) -> Result<ExitCode> {
    let mut opts: SolverOptions = match &args.config {
        Some(p) => read_json(p)?,
        None => SolverOptions::default(),
    };
    args.solver.apply(&mut opts);
    opts.validate()?;
    echo("resolved solver options", &opts);
    let inst = RealInstance::read(&args.input)?;
    let det = DetectorRegistry::builtin().get(&args.detector)?;
    let report = det.detect(&inst, &opts)?;
    say(&report.to_json());
    Ok(match report.status {
        SolveStatus::Optimal | SolveStatus::Heuristic => ExitCode::SUCCESS,
        _ => ExitCode::from(2),
    })
}

fn resolve_experiment(kind: Experiment, args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if args.config.is_some() && cfg.experiment != kind {
        bail!("config file describes {:?} but the subcommand runs {:?}", cfg.experiment, kind);
    }
    cfg.experiment = kind;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = &args.$f { cfg.$f = v.clone(); })* };
    }
    set!(n_ant, k_users, snr_db, trials, seed, detectors, ratios, format);
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    cfg.optimal_only |= args.optimal_only;
    args.solver.apply(&mut cfg.solver);
    Ok(cfg)
}

fn headline(summary: &ResultTable, kind: Experiment) -> Vec<String> {
    let metric = match kind {
        Experiment::BerSweep | Experiment::PhaseGrid => "mean_ber",
        Experiment::RuntimeSweep => "wall_time_median",
        Experiment::RatioSweep => "mean_ratio",
    };
    let keys: &[&str] = match kind {
        Experiment::PhaseGrid => &["ratio", "k_users", "snr_db", "detector"],
        _ => &["k_users", "snr_db", "detector"],
    };
    let m = summary.column(metric).expect("metric column");
    summary
        .rows
        .iter()
        .map(|row| {
            let mut parts: Vec<String> = keys
                .iter()
                .map(|k| {
                    let j = summary.column(k).expect("key column");
                    format!("{k}={}", serde_json::to_string(&row[j]).expect("cell serializes"))
                })
                .collect();
            parts.push(format!("{metric}={}", row[m].as_f64().unwrap_or(f64::NAN)));
            parts.join(" ")
        })
        .collect()
}

fn cmd_experiment(kind: Experiment, args: &ExperimentArgs) -> Result<ExitCode> {
    let cfg = resolve_experiment(kind, args)?;
    let Some(out) = cfg.out.clone() else {
        bail!("no output path: pass --out or set `out` in the config file");
    };
    let registry = DetectorRegistry::builtin();
    cfg.validate(&registry)?;
    echo("resolved config", &cfg);
    let result = run_experiment(&cfg, &registry)?;
    let meta = Metadata::new(&cfg);
    write_results(&result.summary, &meta, &out, cfg.format)?;
    if let Some(path) = &args.records {
        write_results(&ResultTable::from_records(&result.records), &meta, path, cfg.format)?;
    }
    for line in headline(&result.summary, kind) {
        say(&line);
    }
    say(&format!("wrote {}", out.display()));
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: &GenArgs) -> Result<ExitCode> {
    let cfg = GenConfig { n_antennas: args.n_ant, n_users: args.k_users, snr_db: args.snr_db, seed: args.seed };
    echo("resolved instance config", &cfg);
    generate_instance(&cfg)?.write(&args.out)?;
    say(&format!("wrote {}", args.out.display()));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Ber(a) => cmd_experiment(Experiment::BerSweep, a),
        Command::Runtime(a) => cmd_experiment(Experiment::RuntimeSweep, a),
        Command::Ratio(a) => cmd_experiment(Experiment::RatioSweep, a),
        Command::Phase(a) => cmd_experiment(Experiment::PhaseGrid, a),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
