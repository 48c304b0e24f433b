//! Local search over the weighted-feature view of MPE.
//!
//! Every entry of every (evidence-conditioned) factor is a feature with
//! weight `-ln P` capped at `w_max`. A complete assignment activates exactly
//! one feature per factor and its cost is the sum of the active weights, so
//! minimizing cost maximizes probability. This is the same objective a
//! weighted MAX-SAT encoding would give, without materializing clauses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Assignment, Evidence, Factor, Network, Problem, LOG_ZERO};
use crate::search::{check_time_limit, Clock, Incumbent, SearchError, SolveResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LSParams {
    pub seed: u64,
    /// Flips between restarts (SLS only); `None` means 10 · n.
    pub restart_interval: Option<u64>,
    /// Probability of a random move (SLS only).
    pub noise_p: f64,
    pub penalty_increment: f64,
    pub w_max: f64,
    /// Stop after this many moves.
    pub max_flips: Option<u64>,
    /// Stop once the incumbent log value reaches this.
    pub target_log_value: Option<f64>,
}

impl Default for LSParams {
    fn default() -> Self {
        LSParams {
            seed: 0,
            restart_interval: None,
            noise_p: 0.2,
            penalty_increment: 1.0,
            w_max: 1e6,
            max_flips: None,
            target_log_value: None,
        }
    }
}

impl LSParams {
    pub fn with_seed(seed: u64) -> Self {
        LSParams { seed, ..Default::default() }
    }

    fn validate(&self, time_limit: f64) -> Result<(), SearchError> {
        check_time_limit(time_limit)?;
        if !(0.0..=1.0).contains(&self.noise_p) {
            return Err(SearchError::Config("noise_p must be a probability".into()));
        }
        if self.penalty_increment.is_nan() || self.penalty_increment <= 0.0 || self.w_max.is_nan() || self.w_max <= 0.0
        {
            return Err(SearchError::Config("penalty increment and w_max must be positive".into()));
        }
        if self.restart_interval == Some(0) {
            return Err(SearchError::Config("restart interval must be positive".into()));
        }
        if time_limit.is_infinite() && self.max_flips.is_none() && self.target_log_value.is_none() {
            return Err(SearchError::Config("local search needs a finite time limit or a flip budget".into()));
        }
        Ok(())
    }
}

/// Feature weights and penalties, indexed like the factor tables.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    factors: Vec<Factor>,
    weights: Vec<Vec<f64>>,
    penalties: Vec<Vec<f64>>,
}

impl FeatureTable {
    /// Features of the evidence-conditioned factors of `net`.
    pub fn new(net: &Network, ev: &Evidence, w_max: f64) -> Result<Self, SearchError> {
        let problem = Problem::new(net, ev)?;
        Ok(Self::from_factors(problem.factors().to_vec(), w_max))
    }

    pub fn from_factors(factors: Vec<Factor>, w_max: f64) -> Self {
        let weights: Vec<Vec<f64>> =
            factors.iter().map(|f| f.values().iter().map(|&v| (-v).min(w_max)).collect()).collect();
        let penalties = weights.iter().map(|w| vec![0.0; w.len()]).collect();
        FeatureTable { factors, weights, penalties }
    }

    pub fn num_families(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn weight(&self, k: usize, idx: usize) -> f64 {
        self.weights[k][idx]
    }

    pub fn penalty(&self, k: usize, idx: usize) -> f64 {
        self.penalties[k][idx]
    }

    pub fn penalties(&self, k: usize) -> &[f64] {
        &self.penalties[k]
    }

    /// Index of the feature of family `k` that `a` activates.
    pub fn active(&self, k: usize, a: &Assignment) -> usize {
        self.factors[k].index_at(a).expect("assignment covers the factor scope")
    }

    /// Augmented cost: active weights plus active penalties.
    pub fn penalized_cost(&self, a: &Assignment) -> f64 {
        (0..self.factors.len())
            .map(|k| {
                let i = self.active(k, a);
                self.weights[k][i] + self.penalties[k][i]
            })
            .sum()
    }
}

/// Sum of the active feature weights.
pub fn ls_cost(ft: &FeatureTable, a: &Assignment) -> f64 {
    (0..ft.num_families()).map(|k| ft.weights[k][ft.active(k, a)]).sum()
}

/// GLS utility of a feature.
pub fn utility(w: f64, lambda: f64) -> f64 {
    w / (1.0 + lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gls,
    Dlm,
    Sls,
}

/// Mutable search state with per-family active indices kept up to date.
struct State {
    ft: FeatureTable,
    x: Vec<usize>,
    free: Vec<usize>,
    domains: Vec<usize>,
    /// families mentioning each variable, with that variable's stride
    touching: Vec<Vec<(usize, usize)>>,
    active: Vec<usize>,
    /// Σ finite -ln P over active entries, and how many active entries are zero
    finite_cost: f64,
    zeros: usize,
}

impl State {
    fn new(ft: FeatureTable, problem: &Problem) -> Self {
        let n = problem.num_vars();
        let mut touching = vec![Vec::new(); n];
        for (k, f) in ft.factors.iter().enumerate() {
            let strides = f.strides();
            for (j, &v) in f.scope().iter().enumerate() {
                touching[v].push((k, strides[j]));
            }
        }
        let x: Vec<usize> = (0..n).map(|v| problem.evidence().get(v).unwrap_or(0)).collect();
        let free = problem.free_vars().collect();
        let nf = ft.factors.len();
        let mut s = State {
            ft,
            x,
            free,
            domains: problem.domains().to_vec(),
            touching,
            active: vec![0; nf],
            finite_cost: 0.0,
            zeros: 0,
        };
        s.reindex();
        s
    }

    fn assignment(&self) -> Assignment {
        Assignment::complete(self.x.clone())
    }

    fn reindex(&mut self) {
        let a = self.assignment();
        self.finite_cost = 0.0;
        self.zeros = 0;
        for k in 0..self.ft.factors.len() {
            let i = self.ft.active(k, &a);
            self.active[k] = i;
            let v = self.ft.factors[k].values()[i];
            if v == LOG_ZERO {
                self.zeros += 1;
            } else {
                self.finite_cost -= v;
            }
        }
    }

    fn randomize(&mut self, rng: &mut ChaCha8Rng) {
        for &v in &self.free {
            self.x[v] = rng.random_range(0..self.domains[v]);
        }
        self.reindex();
    }

    fn log_value(&self) -> f64 {
        if self.zeros > 0 {
            LOG_ZERO
        } else {
            -self.finite_cost
        }
    }

    /// Change in the objective if `v` takes `val`.
    fn delta(&self, v: usize, val: usize, penalized: bool) -> f64 {
        let shift = val as isize - self.x[v] as isize;
        let mut d = 0.0;
        for &(k, stride) in &self.touching[v] {
            let old = self.active[k];
            let new = (old as isize + shift * stride as isize) as usize;
            d += self.ft.weights[k][new] - self.ft.weights[k][old];
            if penalized {
                d += self.ft.penalties[k][new] - self.ft.penalties[k][old];
            }
        }
        d
    }

    fn apply(&mut self, v: usize, val: usize) {
        let shift = val as isize - self.x[v] as isize;
        for &(k, stride) in &self.touching[v] {
            let old = self.active[k];
            let new = (old as isize + shift * stride as isize) as usize;
            let values = self.ft.factors[k].values();
            for (idx, sign) in [(old, -1.0), (new, 1.0)] {
                let lv = values[idx];
                if lv == LOG_ZERO {
                    if sign > 0.0 {
                        self.zeros += 1;
                    } else {
                        self.zeros -= 1;
                    }
                } else {
                    self.finite_cost -= sign * lv;
                }
            }
            self.active[k] = new;
        }
        self.x[v] = val;
    }

    /// Best move by `delta`, uniformly random among ties.
    fn best_move(&self, penalized: bool, rng: &mut ChaCha8Rng) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        let mut ties = 0u32;
        for &v in &self.free {
            for val in 0..self.domains[v] {
                if val == self.x[v] {
                    continue;
                }
                let d = self.delta(v, val, penalized);
                match best {
                    Some((_, _, b)) if d > b => {}
                    Some((_, _, b)) if d == b => {
                        ties += 1;
                        if rng.random_range(0..ties) == 0 {
                            best = Some((v, val, d));
                        }
                    }
                    _ => {
                        best = Some((v, val, d));
                        ties = 1;
                    }
                }
            }
        }
        best
    }

    fn random_move(&self, rng: &mut ChaCha8Rng) -> Option<(usize, usize)> {
        let movable: Vec<usize> = self.free.iter().copied().filter(|&v| self.domains[v] > 1).collect();
        if movable.is_empty() {
            return None;
        }
        let v = movable[rng.random_range(0..movable.len())];
        let mut val = rng.random_range(0..self.domains[v] - 1);
        if val >= self.x[v] {
            val += 1;
        }
        Some((v, val))
    }

    /// Raises penalties at a local minimum; returns how many grew.
    fn penalize(&mut self, method: Method, inc: f64) -> usize {
        let nf = self.active.len();
        match method {
            Method::Dlm => {
                for k in 0..nf {
                    self.ft.penalties[k][self.active[k]] += inc;
                }
                nf
            }
            Method::Gls => {
                let util = |k: usize, s: &Self| {
                    let i = s.active[k];
                    utility(s.ft.weights[k][i], s.ft.penalties[k][i])
                };
                let top = (0..nf).map(|k| util(k, self)).fold(f64::NEG_INFINITY, f64::max);
                let chosen: Vec<usize> = (0..nf).filter(|&k| util(k, self) == top).collect();
                for &k in &chosen {
                    self.ft.penalties[k][self.active[k]] += inc;
                }
                chosen.len()
            }
            Method::Sls => 0,
        }
    }
}

/// What one call to [`LocalSearch::step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// One variable changed value.
    Moved,
    /// Local minimum: `raised` penalties grew, taking the penalized cost
    /// of the current point from `before` to `after`.
    Penalized { raised: usize, before: f64, after: f64 },
    /// Fresh random assignment (SLS).
    Restarted,
    /// Nothing can move: every variable is observed or has a single value.
    Stuck,
}

/// A local search run driven one step at a time.
pub struct LocalSearch {
    state: State,
    rng: ChaCha8Rng,
    method: Method,
    params: LSParams,
    restart: u64,
    since_restart: u64,
}

impl LocalSearch {
    /// Starts from a uniformly random assignment with the evidence clamped.
    pub fn new(net: &Network, ev: &Evidence, method: Method, params: &LSParams) -> Result<Self, SearchError> {
        let problem = Problem::new(net, ev)?;
        let ft = FeatureTable::from_factors(problem.factors().to_vec(), params.w_max);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut state = State::new(ft, &problem);
        state.randomize(&mut rng);
        let restart = params.restart_interval.unwrap_or(10 * net.num_vars().max(1) as u64);
        Ok(LocalSearch { state, rng, method, params: *params, restart, since_restart: 0 })
    }

    pub fn features(&self) -> &FeatureTable {
        &self.state.ft
    }

    pub fn assignment(&self) -> Assignment {
        self.state.assignment()
    }

    /// Log probability of the current point, tracked incrementally.
    pub fn log_value(&self) -> f64 {
        self.state.log_value()
    }

    pub fn penalized_cost(&self) -> f64 {
        self.state.ft.penalized_cost(&self.state.assignment())
    }

    pub fn step(&mut self) -> Step {
        let s = &mut self.state;
        let rng = &mut self.rng;
        if s.free.iter().all(|&v| s.domains[v] < 2) {
            return Step::Stuck;
        }
        match self.method {
            Method::Sls => {
                if self.since_restart >= self.restart {
                    s.randomize(rng);
                    self.since_restart = 0;
                    return Step::Restarted;
                }
                let noisy = rng.random::<f64>() < self.params.noise_p;
                let mv = if noisy {
                    s.random_move(rng)
                } else {
                    match s.best_move(false, rng) {
                        Some((v, val, d)) if d < 0.0 => Some((v, val)),
                        _ => s.random_move(rng),
                    }
                };
                let (v, val) = mv.expect("some variable can move");
                s.apply(v, val);
                self.since_restart += 1;
                Step::Moved
            }
            Method::Gls | Method::Dlm => match s.best_move(true, rng) {
                Some((v, val, d)) if d < 0.0 => {
                    s.apply(v, val);
                    Step::Moved
                }
                _ => {
                    let a = s.assignment();
                    let before = s.ft.penalized_cost(&a);
                    let raised = s.penalize(self.method, self.params.penalty_increment);
                    Step::Penalized { raised, before, after: s.ft.penalized_cost(&a) }
                }
            },
        }
    }
}

fn run(
    net: &Network,
    ev: &Evidence,
    time_limit: f64,
    params: &LSParams,
    method: Method,
) -> Result<SolveResult, SearchError> {
    params.validate(time_limit)?;
    let clock = Clock::start(time_limit);
    let problem = Problem::new(net, ev)?;
    let mut ls = LocalSearch::new(net, ev, method, params)?;
    let mut inc = Incumbent::new();
    let mut flips: u64 = 0;

    let consider = |ls: &LocalSearch, inc: &mut Incumbent| -> Result<bool, SearchError> {
        if ls.log_value() > inc.value + 1e-12 || inc.assignment.is_none() {
            let a = ls.assignment();
            let exact = net.evaluate(&a)?;
            inc.offer(&clock, exact, &a);
        }
        Ok(params.target_log_value.is_some_and(|t| inc.value >= t))
    };

    let mut done = consider(&ls, &mut inc)?;
    while !done && !clock.expired() && params.max_flips.is_none_or(|m| flips < m) {
        match ls.step() {
            Step::Stuck => break,
            Step::Penalized { .. } => continue,
            Step::Restarted => {}
            Step::Moved => flips += 1,
        }
        done = consider(&ls, &mut inc)?;
    }
    inc.finish(net, problem.evidence(), false, flips, &clock)
}

/// Guided local search: at local minima, penalize the active features of maximum utility.
pub fn gls_solve(net: &Network, ev: &Evidence, time_limit: f64, params: &LSParams) -> Result<SolveResult, SearchError> {
    run(net, ev, time_limit, params, Method::Gls)
}

/// Discrete Lagrangian method: at local minima, penalize every active feature.
pub fn dlm_solve(net: &Network, ev: &Evidence, time_limit: f64, params: &LSParams) -> Result<SolveResult, SearchError> {
    run(net, ev, time_limit, params, Method::Dlm)
}

/// Stochastic local search: noisy hill climbing with periodic restarts.
pub fn sls_solve(net: &Network, ev: &Evidence, time_limit: f64, params: &LSParams) -> Result<SolveResult, SearchError> {
    run(net, ev, time_limit, params, Method::Sls)
}
