//! `mpe`: generate instances, run solvers and benchmark batches.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpe_core::generators::{gen_coding, generate, sample_evidence, Family, GenError, GenSpec, GridCpt};
use mpe_core::harness::{
    read_evidence, read_network, read_results, run_experiment_with_jobs, solve, summarize, write_evidence,
    write_network, write_results, Algorithm, ExperimentConfig, HarnessError, SolveOptions,
};
use mpe_core::localsearch::LSParams;
use mpe_core::model::{Evidence, ModelError};
use mpe_core::search::SearchError;

const USAGE: u8 = 1;
const PARSE: u8 = 2;
const RESOURCE: u8 = 3;

#[derive(Parser)]
#[command(name = "mpe", version, about = "Most probable explanation solvers for Bayesian networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random network (and optionally sampled evidence).
    Gen(GenArgs),
    /// Solve one network.
    Solve(SolveArgs),
    /// Run an experiment batch from a config file.
    Bench(BenchArgs),
    /// Summarize a result table.
    Stats(StatsArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_family)]
    family: Family,
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Domain size; information bits per layer for coding networks.
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    c: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 0.2)]
    p_noise: f64,
    #[arg(long, default_value_t = 0.01)]
    p_leak: f64,
    #[arg(long, default_value_t = 0.32)]
    sigma: f64,
    /// Fill grid CPTs with noisy-OR tables instead of uniform ones.
    #[arg(long)]
    grid_noisy_or: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Number of variables to observe in a sampled evidence file.
    #[arg(long)]
    evidence: Option<usize>,
    #[arg(long, requires = "evidence")]
    evidence_out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    evidence: Option<PathBuf>,
    #[arg(long, value_parser = parse_algorithm)]
    alg: Algorithm,
    #[arg(long, default_value_t = 2)]
    i_bound: usize,
    /// Seconds.
    #[arg(long, default_value_t = 30.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print every incumbent improvement.
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value_t = 30)]
    iterations: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core, 1 runs serially.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Report the solved fraction by this many seconds.
    #[arg(long, default_value_t = f64::INFINITY)]
    at_time: f64,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: GenError| e.to_string())
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse()
}

/// A failure and the exit code it maps to.
struct Failure(u8, String);

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            _ if e.is_resource() => RESOURCE,
            HarnessError::Io { .. } | HarnessError::Parse { .. } | HarnessError::Csv(_) | HarnessError::Model(_) => {
                PARSE
            }
            _ => USAGE,
        };
        Failure(code, e.to_string())
    }
}

impl From<SearchError> for Failure {
    fn from(e: SearchError) -> Self {
        let code = match &e {
            _ if e.is_resource() => RESOURCE,
            SearchError::Config(_) => USAGE,
            SearchError::Elim(_) => PARSE,
        };
        Failure(code, e.to_string())
    }
}

impl From<GenError> for Failure {
    fn from(e: GenError) -> Self {
        Failure(USAGE, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure(PARSE, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Solve(a) => run_solve(a),
        Command::Bench(a) => run_bench(a),
        Command::Stats(a) => run_stats(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

fn run_gen(a: GenArgs) -> Result<(), Failure> {
    let spec = GenSpec {
        family: a.family,
        n: if a.family == Family::Coding { 2 * a.k } else { a.n },
        k: a.k,
        c: a.c,
        p: a.p,
        p_noise: a.p_noise,
        p_leak: a.p_leak,
        sigma: a.sigma,
        grid_cpt: if a.grid_noisy_or { GridCpt::NoisyOr } else { GridCpt::Uniform },
        seed: a.seed,
    };
    let (net, coding_ev) = if spec.family == Family::Coding {
        let (net, ev, _) = gen_coding(&spec)?;
        (net, Some(ev))
    } else {
        (generate(&spec)?, None)
    };
    write_network(&net, &a.out)?;
    if let Some(path) = a.evidence_out {
        let ev = match coding_ev {
            Some(ev) => ev,
            None => sample_evidence(&net, a.evidence.unwrap_or(0), a.seed)?,
        };
        write_evidence(&ev, &path)?;
    }
    println!("wrote {} ({} variables)", a.out.display(), net.num_vars());
    Ok(())
}

fn run_solve(a: SolveArgs) -> Result<(), Failure> {
    let net = read_network(&a.net)?;
    let ev = match &a.evidence {
        Some(p) => read_evidence(p, &net)?,
        None => Evidence::new(),
    };
    let opts = SolveOptions {
        time_limit: a.time_limit,
        seed: a.seed,
        params: LSParams::default(),
        iterations: a.iterations,
        ..SolveOptions::default()
    };
    let r = solve(a.alg, a.i_bound, &net, &ev, &opts)?;
    println!("log_value {}", r.best_log_value);
    println!("probability {}", r.best_log_value.exp());
    println!("completed {}", r.completed);
    println!("nodes {}", r.nodes_expanded);
    println!("elapsed {:.6}", r.elapsed);
    let values = r.best_assignment.to_values().unwrap_or_default();
    println!("assignment {}", values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
    if a.trace {
        for (t, v) in &r.anytime_trace {
            println!("trace {t:.6} {v}");
        }
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let out = a
        .out
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Failure(USAGE, "no output path: pass --out or set `output` in the config".into()))?;
    let rows = run_experiment_with_jobs(&cfg, a.jobs.unwrap_or(cfg.jobs))?;
    write_results(&rows, &out)?;
    let errors = rows.iter().filter(|r| r.error.is_some()).count();
    println!("wrote {} rows to {} ({errors} with errors)", rows.len(), out.display());
    Ok(())
}

fn run_stats(a: StatsArgs) -> Result<(), Failure> {
    let rows = read_results(&a.input)?;
    let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:<12} {:>5} {:>7} {:>9} {:>11} {:>10} {:>8} {:>12} {:>8} {:>7} {:>5} {:>6}",
        "algorithm",
        "runs",
        "solved",
        "solved@t",
        "time(solv)",
        "time(all)",
        "opt",
        "nodes",
        "ber",
        "w*mean",
        "w*max",
        "errors"
    );
    for s in summarize(&rows, a.at_time) {
        println!(
            "{:<12} {:>5} {:>7.3} {:>9.3} {:>11} {:>10.4} {:>8} {:>12.1} {:>8} {:>7} {:>5} {:>6}",
            s.label,
            s.runs,
            s.solved,
            s.solved_by_t,
            opt(s.mean_time_solved),
            s.mean_time_all,
            opt(s.mean_opt),
            s.mean_nodes,
            opt(s.mean_ber),
            s.mean_width.map_or_else(|| "-".to_string(), |w| format!("{w:.1}")),
            s.max_width.map_or_else(|| "-".to_string(), |w| w.to_string()),
            s.errors
        );
    }
    Ok(())
}
