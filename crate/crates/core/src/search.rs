//! Depth-first branch and bound for MPE.
//!
//! [`bbmb_solve`] assembles its bound from functions compiled once by
//! mini-bucket elimination and searches in a static order. [`bbbt_solve`]
//! reruns mini-bucket-tree elimination at every node, prunes the domains of
//! all open variables and branches on the smallest live domain.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elim::{mbe_compile, CompiledHeuristic, ElimError, Mbte, DEFAULT_MEMORY_CAP};
use crate::graph::{interaction_graph, min_fill_ordering, GraphError, Ordering, TreeDecomposition};
use crate::model::{Assignment, Evidence, ModelError, Network, Problem, LOG_ZERO};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Elim(#[from] ElimError),
}

impl From<ModelError> for SearchError {
    fn from(e: ModelError) -> Self {
        SearchError::Elim(e.into())
    }
}

impl From<GraphError> for SearchError {
    fn from(e: GraphError) -> Self {
        SearchError::Elim(e.into())
    }
}

impl SearchError {
    /// True when the run was refused because a table would exceed the memory cap.
    pub fn is_resource(&self) -> bool {
        matches!(self, SearchError::Elim(ElimError::Resource { .. }))
    }
}

/// Outcome of any MPE solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub best_assignment: Assignment,
    pub best_log_value: f64,
    /// The search space was exhausted, so `best_log_value` is optimal.
    pub completed: bool,
    pub nodes_expanded: u64,
    /// Wall-clock seconds.
    pub elapsed: f64,
    /// (seconds since start, log value) at every incumbent improvement.
    pub anytime_trace: Vec<(f64, f64)>,
}

impl SolveResult {
    /// A result with nothing found yet.
    pub fn empty(n: usize) -> Self {
        SolveResult {
            best_assignment: Assignment::empty(n),
            best_log_value: LOG_ZERO,
            completed: false,
            nodes_expanded: 0,
            elapsed: 0.0,
            anytime_trace: Vec::new(),
        }
    }
}

/// Search nodes of a run: value-extension tests for BBMB, recursive calls for BBBT.
pub fn count_nodes(result: &SolveResult) -> u64 {
    result.nodes_expanded
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub i_bound: usize,
    /// Seconds; may be infinite.
    pub time_limit: f64,
    /// Seeds the min-fill tie-breaking.
    pub seed: u64,
    /// Largest table, in cells, any heuristic computation may build.
    pub memory_cap: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { i_bound: 2, time_limit: 30.0, seed: 0, memory_cap: DEFAULT_MEMORY_CAP }
    }
}

impl SearchConfig {
    pub fn new(i_bound: usize, time_limit: f64) -> Self {
        SearchConfig { i_bound, time_limit, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.i_bound == 0 {
            return Err(SearchError::Config("i-bound must be at least 1".into()));
        }
        check_time_limit(self.time_limit)
    }
}

pub(crate) fn check_time_limit(t: f64) -> Result<(), SearchError> {
    if t.is_nan() || t <= 0.0 {
        return Err(SearchError::Config("time limit must be positive".into()));
    }
    Ok(())
}

/// Wall clock with an optional deadline.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Clock {
    start: Instant,
    deadline: Option<Instant>,
}

impl Clock {
    pub(crate) fn start(limit: f64) -> Self {
        let start = Instant::now();
        let deadline = Duration::try_from_secs_f64(limit).ok().and_then(|d| start.checked_add(d));
        Clock { start, deadline }
    }

    pub(crate) fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    pub(crate) fn seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Best assignment so far and the trace of its improvements.
#[derive(Debug, Clone)]
pub(crate) struct Incumbent {
    pub(crate) value: f64,
    pub(crate) assignment: Option<Assignment>,
    trace: Vec<(f64, f64)>,
}

impl Incumbent {
    pub(crate) fn new() -> Self {
        Incumbent { value: LOG_ZERO, assignment: None, trace: Vec::new() }
    }

    /// Records `a` if it strictly improves on the incumbent.
    pub(crate) fn offer(&mut self, clock: &Clock, value: f64, a: &Assignment) -> bool {
        if value == LOG_ZERO {
            // kept as a fallback, never reported as an improvement
            if self.assignment.is_none() {
                self.assignment = Some(a.clone());
            }
            return false;
        }
        if value <= self.value {
            return false;
        }
        let mut t = clock.seconds();
        if let Some(&(last, _)) = self.trace.last() {
            if t <= last {
                t = last + 1e-9;
            }
        }
        self.trace.push((t, value));
        self.value = value;
        self.assignment = Some(a.clone());
        true
    }

    /// Falls back to the evidence completed with zeros when nothing was found.
    pub(crate) fn finish(
        self,
        net: &Network,
        evidence: &Assignment,
        completed: bool,
        nodes: u64,
        clock: &Clock,
    ) -> Result<SolveResult, SearchError> {
        let assignment = match self.assignment {
            Some(a) => a,
            None => {
                let mut a = evidence.clone();
                for v in 0..a.len() {
                    if a.get(v).is_none() {
                        a.set(v, 0);
                    }
                }
                a
            }
        };
        let value = net.evaluate(&assignment)?;
        Ok(SolveResult {
            best_assignment: assignment,
            best_log_value: value,
            completed,
            nodes_expanded: nodes,
            elapsed: clock.seconds(),
            anytime_trace: self.trace,
        })
    }
}

/// The ordering both solvers use: seeded min-fill on the evidence-conditioned graph.
pub fn search_ordering(problem: &Problem, seed: u64) -> Ordering {
    min_fill_ordering(&interaction_graph(problem), seed)
}

/// Branch and bound with a static mini-bucket heuristic.
pub fn bbmb_solve(net: &Network, ev: &Evidence, cfg: &SearchConfig) -> Result<SolveResult, SearchError> {
    cfg.validate()?;
    let clock = Clock::start(cfg.time_limit);
    let problem = Problem::new(net, ev)?;
    let ord = search_ordering(&problem, cfg.seed);
    let (bound, h) = mbe_compile(net, ev, &ord, cfg.i_bound)?;
    let vars: Vec<usize> = ord.order().iter().rev().copied().filter(|&v| problem.is_free(v)).collect();
    let mut s = Bbmb {
        net,
        h: &h,
        ord: &ord,
        vars,
        a: problem.evidence().clone(),
        inc: Incumbent::new(),
        clock,
        nodes: 0,
        aborted: false,
    };
    s.dfs(0, bound)?;
    let completed = !s.aborted;
    let Bbmb { inc, nodes, .. } = s;
    inc.finish(net, problem.evidence(), completed, nodes, &clock)
}

struct Bbmb<'a> {
    net: &'a Network,
    h: &'a CompiledHeuristic,
    ord: &'a Ordering,
    vars: Vec<usize>,
    a: Assignment,
    inc: Incumbent,
    clock: Clock,
    nodes: u64,
    aborted: bool,
}

impl Bbmb<'_> {
    /// Change of the bound when the bucket at position `p` becomes instantiated.
    fn delta(&self, p: usize) -> f64 {
        let at = |f: &crate::model::Factor| f.value_at(&self.a).expect("scope instantiated");
        let gained: f64 =
            self.h.originals(p).iter().map(at).sum::<f64>() + self.h.incoming(p).map(|m| at(&m.factor)).sum::<f64>();
        if gained == LOG_ZERO {
            return LOG_ZERO;
        }
        gained - self.h.generated(p).map(|m| at(&m.factor)).sum::<f64>()
    }

    fn dfs(&mut self, d: usize, f: f64) -> Result<(), SearchError> {
        if d == self.vars.len() {
            let value = self.net.evaluate(&self.a)?;
            let a = self.a.clone();
            self.inc.offer(&self.clock, value, &a);
            return Ok(());
        }
        let y = self.vars[d];
        let p = self.ord.position(y);
        let mut candidates = Vec::with_capacity(self.net.domain(y));
        for v in 0..self.net.domain(y) {
            self.nodes += 1;
            if self.clock.expired() {
                self.aborted = true;
                self.a.unset(y);
                return Ok(());
            }
            self.a.set(y, v);
            // generated messages are finite wherever the parent bound is, so
            // a -inf parent stays -inf
            let fv = if f == LOG_ZERO { LOG_ZERO } else { f + self.delta(p) };
            candidates.push((fv, v));
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        for (fv, v) in candidates {
            if fv <= self.inc.value {
                break;
            }
            self.a.set(y, v);
            self.dfs(d + 1, fv)?;
            if self.aborted {
                break;
            }
        }
        self.a.unset(y);
        Ok(())
    }
}

/// Branch and bound with mini-bucket-tree elimination at every node.
pub fn bbbt_solve(net: &Network, ev: &Evidence, cfg: &SearchConfig) -> Result<SolveResult, SearchError> {
    cfg.validate()?;
    let clock = Clock::start(cfg.time_limit);
    let problem = Problem::new(net, ev)?;
    let ord = search_ordering(&problem, cfg.seed);
    let td = TreeDecomposition::bucket_tree(net.num_vars(), &problem.scopes(), ord.order())?;
    let engine = Mbte::new(&td, problem.factors(), problem.domains());
    let live: Vec<Vec<usize>> = (0..net.num_vars())
        .map(|v| if problem.is_free(v) { (0..net.domain(v)).collect() } else { Vec::new() })
        .collect();
    let mut s = Bbbt {
        net,
        engine: &engine,
        cfg,
        a: problem.evidence().clone(),
        inc: Incumbent::new(),
        clock,
        nodes: 0,
        aborted: false,
    };
    s.bbt(live)?;
    let completed = !s.aborted;
    let Bbbt { inc, nodes, .. } = s;
    inc.finish(net, problem.evidence(), completed, nodes, &clock)
}

struct Bbbt<'a> {
    net: &'a Network,
    engine: &'a Mbte<'a>,
    cfg: &'a SearchConfig,
    a: Assignment,
    inc: Incumbent,
    clock: Clock,
    nodes: u64,
    aborted: bool,
}

impl Bbbt<'_> {
    /// `live[v]` holds the remaining values of every open variable `v`.
    fn bbt(&mut self, mut live: Vec<Vec<usize>>) -> Result<(), SearchError> {
        if self.a.is_complete() {
            let value = self.net.evaluate(&self.a)?;
            let a = self.a.clone();
            self.inc.offer(&self.clock, value, &a);
            return Ok(());
        }
        self.nodes += 1;
        if self.clock.expired() {
            self.aborted = true;
            return Ok(());
        }
        let mz = self.engine.run_capped(&self.a, self.cfg.i_bound, self.cfg.memory_cap)?;
        let lower = self.inc.value;
        let open: Vec<usize> = (0..self.a.len()).filter(|&v| self.a.get(v).is_none()).collect();
        for &v in &open {
            let table = mz.get(v).expect("open variable has a table");
            live[v].retain(|&x| table[x] > lower);
            if live[v].is_empty() {
                return Ok(());
            }
        }
        let j = *open.iter().min_by_key(|&&v| (live[v].len(), v)).expect("some variable is open");
        let table = mz.get(j).expect("open variable has a table").to_vec();
        let mut values = std::mem::take(&mut live[j]);
        values.sort_by(|&x, &y| table[y].total_cmp(&table[x]).then(x.cmp(&y)));
        for x in values {
            if table[x] <= self.inc.value {
                // sorted by decreasing estimate, so the rest prune too
                break;
            }
            self.a.set(j, x);
            self.bbt(live.clone())?;
            self.a.unset(j);
            if self.aborted {
                break;
            }
        }
        Ok(())
    }
}
