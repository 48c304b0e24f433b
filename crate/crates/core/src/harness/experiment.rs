use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elim::{be_mpe_capped, DEFAULT_MEMORY_CAP};
use crate::generators::{bit_error_rate, gen_coding, generate, sample_evidence, CodingTruth, Family, GenSpec};
use crate::localsearch::{dlm_solve, gls_solve, sls_solve, LSParams};
use crate::model::{Evidence, Network, Problem, LOG_ZERO};
use crate::propagation::{ibp_mpe, ijgp_mpe, DEFAULT_ITERATIONS};
use crate::search::{bbbt_solve, bbmb_solve, search_ordering, Clock, SearchConfig, SearchError, SolveResult};

use super::format::{read_evidence, read_network};
use super::HarnessError;

/// Accuracy ratio at which an instance counts as solved.
const SOLVED_RATIO: f64 = 0.95;

/// Mixed into an instance seed to seed its evidence sample.
const EVIDENCE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Be,
    Bbbt,
    Bbmb,
    Gls,
    Dlm,
    Sls,
    Ijgp,
    Ibp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Be,
        Algorithm::Bbbt,
        Algorithm::Bbmb,
        Algorithm::Gls,
        Algorithm::Dlm,
        Algorithm::Sls,
        Algorithm::Ijgp,
        Algorithm::Ibp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Be => "be",
            Algorithm::Bbbt => "bbbt",
            Algorithm::Bbmb => "bbmb",
            Algorithm::Gls => "gls",
            Algorithm::Dlm => "dlm",
            Algorithm::Sls => "sls",
            Algorithm::Ijgp => "ijgp",
            Algorithm::Ibp => "ibp",
        }
    }

    /// Whether the algorithm is parameterized by an i-bound.
    pub fn uses_i_bound(self) -> bool {
        matches!(self, Algorithm::Bbbt | Algorithm::Bbmb | Algorithm::Ijgp)
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Knobs shared by every algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub time_limit: f64,
    pub seed: u64,
    pub memory_cap: usize,
    pub params: LSParams,
    pub iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            time_limit: 30.0,
            seed: 0,
            memory_cap: DEFAULT_MEMORY_CAP,
            params: LSParams::default(),
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

/// Runs one algorithm. `i_bound` is ignored by algorithms that take none.
/// Local-search seeds are offset by `opts.seed`.
pub fn solve(
    alg: Algorithm,
    i_bound: usize,
    net: &Network,
    ev: &Evidence,
    opts: &SolveOptions,
) -> Result<SolveResult, SearchError> {
    let search = SearchConfig { i_bound, time_limit: opts.time_limit, seed: opts.seed, memory_cap: opts.memory_cap };
    let params = LSParams { seed: opts.params.seed.wrapping_add(opts.seed), ..opts.params };
    match alg {
        Algorithm::Be => {
            let clock = Clock::start(f64::INFINITY);
            let problem = Problem::new(net, ev)?;
            let ord = search_ordering(&problem, opts.seed);
            let (_, a) = be_mpe_capped(net, ev, &ord, opts.memory_cap)?;
            let value = net.evaluate(&a)?;
            let elapsed = clock.seconds();
            Ok(SolveResult {
                best_assignment: a,
                best_log_value: value,
                completed: true,
                nodes_expanded: 0,
                elapsed,
                anytime_trace: if value > LOG_ZERO { vec![(elapsed, value)] } else { Vec::new() },
            })
        }
        Algorithm::Bbbt => bbbt_solve(net, ev, &search),
        Algorithm::Bbmb => bbmb_solve(net, ev, &search),
        Algorithm::Gls => gls_solve(net, ev, opts.time_limit, &params),
        Algorithm::Dlm => dlm_solve(net, ev, opts.time_limit, &params),
        Algorithm::Sls => sls_solve(net, ev, opts.time_limit, &params),
        Algorithm::Ijgp => ijgp_mpe(net, ev, i_bound, opts.iterations),
        Algorithm::Ibp => ibp_mpe(net, ev, opts.iterations),
    }
}

/// Exact MPE log value by bucket elimination, `None` if it exceeds `memory_cap`.
pub fn exact_value(net: &Network, ev: &Evidence, seed: u64, memory_cap: usize) -> Result<Option<f64>, HarnessError> {
    let problem = Problem::new(net, ev)?;
    let ord = search_ordering(&problem, seed);
    match be_mpe_capped(net, ev, &ord, memory_cap) {
        Ok((v, _)) => Ok(Some(v)),
        Err(crate::elim::ElimError::Resource { .. }) => Ok(None),
        Err(e) => Err(SearchError::from(e).into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: Algorithm,
    /// i-bounds to sweep; algorithms without one run once. Defaults to `[2]`.
    #[serde(default)]
    pub i_bounds: Vec<usize>,
    #[serde(default)]
    pub params: LSParams,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

impl AlgorithmSpec {
    pub fn new(name: Algorithm) -> Self {
        AlgorithmSpec { name, i_bounds: Vec::new(), params: LSParams::default(), iterations: DEFAULT_ITERATIONS }
    }

    pub fn with_i_bounds(name: Algorithm, i_bounds: &[usize]) -> Self {
        AlgorithmSpec { i_bounds: i_bounds.to_vec(), ..AlgorithmSpec::new(name) }
    }

    fn runs(&self) -> Vec<Option<usize>> {
        if !self.name.uses_i_bound() {
            vec![None]
        } else if self.i_bounds.is_empty() {
            vec![Some(2)]
        } else {
            self.i_bounds.iter().map(|&i| Some(i)).collect()
        }
    }
}

/// A network file, with its evidence file or sampled evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub network: PathBuf,
    #[serde(default)]
    pub evidence: Option<PathBuf>,
}

/// A batch of runs, usually loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, rename = "generator")]
    pub generators: Vec<GenSpec>,
    #[serde(default, rename = "input")]
    pub inputs: Vec<InputSpec>,
    #[serde(rename = "algorithm")]
    pub algorithms: Vec<AlgorithmSpec>,
    /// Seconds per run.
    pub time_limit: f64,
    /// Instances per generator.
    #[serde(default = "one")]
    pub instances: usize,
    /// Observed variables sampled per instance (coding instances take none).
    #[serde(default)]
    pub evidence: usize,
    #[serde(default)]
    pub seed_base: u64,
    /// Compute the exact value by bucket elimination when it fits the memory cap.
    #[serde(default = "yes")]
    pub exact: bool,
    #[serde(default = "default_cap")]
    pub memory_cap: usize,
    /// Worker threads; 0 means the machine's parallelism.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_cap() -> usize {
    DEFAULT_MEMORY_CAP
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].lines().count().max(1));
            HarnessError::Parse { line, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required");
        }
        if self.instances == 0 {
            return bad("instances must be at least 1");
        }
        if self.generators.is_empty() && self.inputs.is_empty() {
            return bad("no generator or input given");
        }
        if self.time_limit.is_nan() || self.time_limit <= 0.0 {
            return bad("time_limit must be positive");
        }
        for a in &self.algorithms {
            if a.i_bounds.contains(&0) {
                return bad("i-bounds must be at least 1");
            }
            if a.iterations == 0 {
                return bad("iterations must be at least 1");
            }
        }
        for g in &self.generators {
            g.validate()?;
        }
        Ok(())
    }

    /// Every instance of the batch, generators first, in id order.
    pub fn instance_specs(&self) -> Vec<InstanceSpec> {
        let mut out = Vec::new();
        for g in &self.generators {
            for r in 0..self.instances as u64 {
                let seed = self.seed_base.wrapping_add(r);
                out.push(InstanceSpec { id: out.len(), seed, source: InstanceSource::Generated(g.with_seed(seed)) });
            }
        }
        for (j, input) in self.inputs.iter().enumerate() {
            let seed = self.seed_base.wrapping_add(j as u64);
            out.push(InstanceSpec { id: out.len(), seed, source: InstanceSource::File(input.clone()) });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    Generated(GenSpec),
    File(InputSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub id: usize,
    pub seed: u64,
    pub source: InstanceSource,
}

/// A concrete problem ready to solve.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: usize,
    pub seed: u64,
    pub net: Network,
    pub ev: Evidence,
    pub truth: Option<CodingTruth>,
    pub spec: Option<GenSpec>,
}

/// Builds (or loads) an instance and its evidence.
pub fn materialize(spec: &InstanceSpec, evidence: usize) -> Result<Instance, HarnessError> {
    let ev_seed = spec.seed ^ EVIDENCE_SALT;
    match &spec.source {
        InstanceSource::Generated(g) if g.family == Family::Coding => {
            let (net, ev, truth) = gen_coding(g)?;
            Ok(Instance { id: spec.id, seed: spec.seed, net, ev, truth: Some(truth), spec: Some(*g) })
        }
        InstanceSource::Generated(g) => {
            let net = generate(g)?;
            let ev = sample_evidence(&net, evidence.min(net.num_vars()), ev_seed)?;
            Ok(Instance { id: spec.id, seed: spec.seed, net, ev, truth: None, spec: Some(*g) })
        }
        InstanceSource::File(input) => {
            let net = read_network(&input.network)?;
            let ev = match &input.evidence {
                Some(p) => read_evidence(p, &net)?,
                None => sample_evidence(&net, evidence.min(net.num_vars()), ev_seed)?,
            };
            Ok(Instance { id: spec.id, seed: spec.seed, net, ev, truth: None, spec: None })
        }
    }
}

/// One (instance, algorithm, i-bound) run. Column order is the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub instance: usize,
    pub family: String,
    pub n: usize,
    pub k: usize,
    pub c: usize,
    pub p: usize,
    pub sigma: Option<f64>,
    /// Induced width of the instance's search ordering.
    pub width: Option<usize>,
    pub algorithm: String,
    pub i_bound: Option<usize>,
    /// Wall-clock seconds of the run.
    pub elapsed: f64,
    /// Seconds until the run first reached the solved ratio (completion time for proofs).
    pub solve_time: Option<f64>,
    pub best_log: f64,
    pub exact_log: Option<f64>,
    pub opt_ratio: Option<f64>,
    pub solved: bool,
    pub completed: bool,
    pub nodes: u64,
    pub ber: Option<f64>,
    pub error: Option<String>,
    /// Persisted in the assignment sidecar, not in the main table.
    #[serde(skip)]
    pub assignment: Vec<usize>,
}

impl ResultRow {
    /// `bbbt(2)` for i-bounded algorithms, the bare name otherwise.
    pub fn label(&self) -> String {
        match self.i_bound {
            Some(i) => format!("{}({i})", self.algorithm),
            None => self.algorithm.clone(),
        }
    }

    fn base(inst: &Instance, alg: Algorithm, i: Option<usize>, exact: Option<f64>, width: Option<usize>) -> Self {
        let net = &inst.net;
        let (family, n, k, c, p, sigma) = match &inst.spec {
            Some(g) if g.family == Family::Coding => (g.family.to_string(), net.num_vars(), 2, g.k, g.p, Some(g.sigma)),
            Some(g) => (g.family.to_string(), g.n, g.k, g.c, g.p, None),
            None => {
                let nv = net.num_vars();
                let k = net.domains().iter().copied().max().unwrap_or(0);
                let c = (0..nv).filter(|&v| !net.parents(v).is_empty()).count();
                let p = (0..nv).map(|v| net.parents(v).len()).max().unwrap_or(0);
                ("file".to_string(), nv, k, c, p, None)
            }
        };
        ResultRow {
            instance: inst.id,
            family,
            n,
            k,
            c,
            p,
            sigma,
            width,
            algorithm: alg.name().to_string(),
            i_bound: i,
            elapsed: 0.0,
            solve_time: None,
            best_log: LOG_ZERO,
            exact_log: exact,
            opt_ratio: None,
            solved: false,
            completed: false,
            nodes: 0,
            ber: None,
            error: None,
            assignment: Vec::new(),
        }
    }
}

fn fill_row(row: &mut ResultRow, r: &SolveResult, truth: Option<&CodingTruth>) {
    row.elapsed = r.elapsed;
    row.best_log = r.best_log_value;
    row.completed = r.completed;
    row.nodes = r.nodes_expanded;
    row.assignment = r.best_assignment.to_values().unwrap_or_default();
    row.ber = truth.map(|t| bit_error_rate(&r.best_assignment, t));
    if let Some(exact) = row.exact_log {
        let ratio = |v: f64| if v == LOG_ZERO { 0.0 } else { (v - exact).exp() };
        let opt = ratio(r.best_log_value);
        row.opt_ratio = Some(opt);
        row.solved = opt >= SOLVED_RATIO;
        row.solve_time = if r.completed && row.solved {
            Some(r.elapsed)
        } else {
            r.anytime_trace.iter().find(|&&(_, v)| ratio(v) >= SOLVED_RATIO).map(|&(t, _)| t)
        };
    }
}

fn run_instance(cfg: &ExperimentConfig, spec: &InstanceSpec) -> Vec<ResultRow> {
    let runs: Vec<(Algorithm, Option<usize>, &AlgorithmSpec)> =
        cfg.algorithms.iter().flat_map(|a| a.runs().into_iter().map(move |i| (a.name, i, a))).collect();
    let inst = match materialize(spec, cfg.evidence) {
        Ok(inst) => inst,
        Err(e) => {
            return runs
                .iter()
                .map(|&(alg, i, _)| ResultRow {
                    instance: spec.id,
                    family: match &spec.source {
                        InstanceSource::Generated(g) => g.family.to_string(),
                        InstanceSource::File(_) => "file".into(),
                    },
                    n: 0,
                    k: 0,
                    c: 0,
                    p: 0,
                    sigma: None,
                    width: None,
                    algorithm: alg.name().into(),
                    i_bound: i,
                    elapsed: 0.0,
                    solve_time: None,
                    best_log: LOG_ZERO,
                    exact_log: None,
                    opt_ratio: None,
                    solved: false,
                    completed: false,
                    nodes: 0,
                    ber: None,
                    error: Some(e.to_string()),
                    assignment: Vec::new(),
                })
                .collect();
        }
    };
    let width = Problem::new(&inst.net, &inst.ev).ok().map(|p| search_ordering(&p, inst.seed).induced_width());
    let exact =
        if cfg.exact { exact_value(&inst.net, &inst.ev, inst.seed, cfg.memory_cap).ok().flatten() } else { None };
    runs.into_iter()
        .map(|(alg, i, aspec)| {
            let mut row = ResultRow::base(&inst, alg, i, exact, width);
            let opts = SolveOptions {
                time_limit: cfg.time_limit,
                seed: inst.seed,
                memory_cap: cfg.memory_cap,
                params: aspec.params,
                iterations: aspec.iterations,
            };
            match solve(alg, i.unwrap_or(2), &inst.net, &inst.ev, &opts) {
                Ok(r) => fill_row(&mut row, &r, inst.truth.as_ref()),
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}

/// Runs the batch on `cfg.jobs` threads; rows come back in (instance, algorithm) order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, HarnessError> {
    run_experiment_with_jobs(cfg, cfg.jobs)
}

pub fn run_experiment_with_jobs(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<ResultRow>, HarnessError> {
    cfg.validate()?;
    let specs = cfg.instance_specs();
    if jobs == 1 {
        return Ok(specs.iter().flat_map(|s| run_instance(cfg, s)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let per_instance: Vec<Vec<ResultRow>> = pool.install(|| specs.par_iter().map(|s| run_instance(cfg, s)).collect());
    Ok(per_instance.into_iter().flatten().collect())
}

fn sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "results".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.assignments.csv"))
}

#[derive(Debug, Serialize, Deserialize)]
struct AssignmentRecord {
    instance: usize,
    algorithm: String,
    i_bound: Option<usize>,
    assignment: String,
}

/// Writes the result table and its `<stem>.assignments.csv` sidecar.
pub fn write_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
    let side = sidecar(path);
    let mut w = csv::Writer::from_path(&side)?;
    for r in rows {
        let assignment = r.assignment.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        w.serialize(AssignmentRecord {
            instance: r.instance,
            algorithm: r.algorithm.clone(),
            i_bound: r.i_bound,
            assignment,
        })?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: side.display().to_string(), source })?;
    Ok(())
}

/// Reads a result table; assignments are attached from the sidecar when present.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>, HarnessError> {
    let path = path.as_ref();
    let mut rows: Vec<ResultRow> = csv::Reader::from_path(path)?.deserialize().collect::<Result<_, _>>()?;
    let side = sidecar(path);
    if side.exists() {
        let assignments = read_assignments(&side)?;
        if assignments.len() == rows.len() {
            for (r, a) in rows.iter_mut().zip(assignments) {
                r.assignment = a;
            }
        }
    }
    Ok(rows)
}

/// Assignments from a sidecar file, one per result row.
pub fn read_assignments(path: impl AsRef<Path>) -> Result<Vec<Vec<usize>>, HarnessError> {
    let mut out = Vec::new();
    for rec in csv::Reader::from_path(path.as_ref())?.deserialize() {
        let rec: AssignmentRecord = rec?;
        let values = rec
            .assignment
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| HarnessError::Parse { line: out.len() + 2, message: format!("bad value {t:?}") })
            })
            .collect::<Result<Vec<usize>, _>>()?;
        out.push(values);
    }
    Ok(out)
}

/// Fraction of `label`'s runs that reached the solved ratio strictly before `t` seconds.
pub fn solved_fraction(rows: &[ResultRow], label: &str, t: f64) -> f64 {
    let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.label() == label).collect();
    if mine.is_empty() {
        return 0.0;
    }
    let hit = mine.iter().filter(|r| r.solve_time.is_some_and(|s| s < t)).count();
    hit as f64 / mine.len() as f64
}

/// Per-algorithm aggregates over a result table.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub label: String,
    pub runs: usize,
    pub errors: usize,
    /// Solved fraction over all runs.
    pub solved: f64,
    /// Solved fraction by the requested time.
    pub solved_by_t: f64,
    pub mean_time_solved: Option<f64>,
    pub mean_time_all: f64,
    pub mean_opt: Option<f64>,
    pub mean_nodes: f64,
    pub mean_ber: Option<f64>,
    pub mean_width: Option<f64>,
    pub max_width: Option<usize>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// One summary per label, in order of first appearance.
pub fn summarize(rows: &[ResultRow], t: f64) -> Vec<AlgorithmSummary> {
    let mut labels: Vec<String> = Vec::new();
    for r in rows {
        let l = r.label();
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.label() == label).collect();
            let runs = mine.len();
            AlgorithmSummary {
                runs,
                errors: mine.iter().filter(|r| r.error.is_some()).count(),
                solved: mine.iter().filter(|r| r.solved).count() as f64 / runs as f64,
                solved_by_t: solved_fraction(rows, &label, t),
                mean_time_solved: mean(mine.iter().filter(|r| r.solved).map(|r| r.elapsed)),
                mean_time_all: mean(mine.iter().map(|r| r.elapsed)).unwrap_or(0.0),
                mean_opt: mean(mine.iter().filter_map(|r| r.opt_ratio)),
                mean_nodes: mean(mine.iter().map(|r| r.nodes as f64)).unwrap_or(0.0),
                mean_ber: mean(mine.iter().filter_map(|r| r.ber)),
                mean_width: mean(mine.iter().filter_map(|r| r.width.map(|w| w as f64))),
                max_width: mine.iter().filter_map(|r| r.width).max(),
                label,
            }
        })
        .collect()
}
