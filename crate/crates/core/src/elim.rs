//! Exact bucket elimination, cluster-tree elimination and their mini-bucket
//! approximations.
//!
//! All mini-bucket variants share one partitioning rule: functions are sorted
//! by decreasing scope size (ties by scope, lexicographically) and each goes
//! into the first mini-bucket whose scope union stays within the i-bound, or
//! opens a new one. A function whose own scope exceeds the bound sits alone.

use thiserror::Error;

use crate::graph::{GraphError, Ordering, TreeDecomposition};
use crate::model::{try_combine_max, Assignment, Evidence, Factor, ModelError, Network, Problem, LOG_ZERO};

/// Default table-cell budget for exact elimination.
pub const DEFAULT_MEMORY_CAP: usize = 1 << 27;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElimError {
    #[error("table of {cells} cells exceeds the memory cap of {cap}")]
    Resource { cells: usize, cap: usize },
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("i-bound must be at least 1")]
    ZeroIBound,
}

impl From<ModelError> for ElimError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::TooLarge { cells, cap } => ElimError::Resource { cells, cap },
            other => ElimError::Model(other),
        }
    }
}

fn sorted(scope: &[usize]) -> Vec<usize> {
    let mut s = scope.to_vec();
    s.sort_unstable();
    s
}

/// Groups scopes into mini-buckets; returns indices into `scopes`.
pub fn partition_scopes<S: AsRef<[usize]>>(scopes: &[S], i: usize) -> Vec<Vec<usize>> {
    let keys: Vec<Vec<usize>> = scopes.iter().map(|s| sorted(s.as_ref())).collect();
    let mut idx: Vec<usize> = (0..scopes.len()).collect();
    idx.sort_by(|&a, &b| keys[b].len().cmp(&keys[a].len()).then_with(|| keys[a].cmp(&keys[b])));
    let mut parts: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for k in idx {
        let scope = &keys[k];
        let slot = parts
            .iter()
            .position(|(union, _)| union.len() + scope.iter().filter(|v| union.binary_search(v).is_err()).count() <= i);
        match slot {
            Some(p) => {
                let (union, members) = &mut parts[p];
                for &v in scope {
                    if let Err(pos) = union.binary_search(&v) {
                        union.insert(pos, v);
                    }
                }
                members.push(k);
            }
            None => parts.push((scope.clone(), vec![k])),
        }
    }
    parts.into_iter().map(|(_, members)| members).collect()
}

/// Splits `fs` into mini-buckets whose scope unions have at most `i` variables.
pub fn partition_minibuckets(fs: &[Factor], i: usize) -> Vec<Vec<Factor>> {
    let scopes: Vec<&[usize]> = fs.iter().map(Factor::scope).collect();
    partition_scopes(&scopes, i).into_iter().map(|part| part.into_iter().map(|k| fs[k].clone()).collect()).collect()
}

/// Output of eliminating variables from one cluster.
struct ClusterOutput {
    functions: Vec<Factor>,
    parts: usize,
}

/// Max-eliminates `elim` from a cluster of functions, mini-bucket style.
///
/// Scalars are folded into one scalar; functions that mention no eliminated
/// variable pass through untouched; the rest are partitioned and each part is
/// combined and maximized separately.
fn eliminate_cluster(fs: &[&Factor], elim: &[usize], i: usize, cap: usize) -> Result<ClusterOutput, ElimError> {
    let mut constant: Option<f64> = None;
    let mut functions = Vec::new();
    let mut touched: Vec<&Factor> = Vec::new();
    for &f in fs {
        if let Some(c) = f.scalar_value() {
            *constant.get_or_insert(0.0) += c;
        } else if f.scope().iter().any(|v| elim.contains(v)) {
            touched.push(f);
        } else {
            functions.push(f.clone());
        }
    }
    let scopes: Vec<&[usize]> = touched.iter().map(|f| f.scope()).collect();
    let parts = partition_scopes(&scopes, i);
    for part in &parts {
        let members: Vec<&Factor> = part.iter().map(|&k| touched[k]).collect();
        let m = try_combine_max(&members, elim, cap)?;
        match m.scalar_value() {
            Some(c) => *constant.get_or_insert(0.0) += c,
            None => functions.push(m),
        }
    }
    if let Some(c) = constant {
        functions.push(Factor::scalar(c));
    }
    Ok(ClusterOutput { functions, parts: parts.len() })
}

/// Per-variable max-marginal tables (exact `z_j`) or their upper bounds (`mz_j`).
#[derive(Debug, Clone, PartialEq)]
pub struct SingletonBounds {
    tables: Vec<Option<Vec<f64>>>,
}

impl SingletonBounds {
    /// Table for `var`, `None` when the variable was instantiated.
    pub fn get(&self, var: usize) -> Option<&[f64]> {
        self.tables[var].as_deref()
    }

    pub fn num_vars(&self) -> usize {
        self.tables.len()
    }

    /// max_x table(x).
    pub fn max_value(&self, var: usize) -> Option<f64> {
        self.get(var).map(|t| t.iter().copied().fold(LOG_ZERO, f64::max))
    }
}

/// Exact MPE by bucket elimination along `ord` under the default memory cap.
pub fn be_mpe(net: &Network, ev: &Evidence, ord: &Ordering) -> Result<(f64, Assignment), ElimError> {
    be_mpe_capped(net, ev, ord, DEFAULT_MEMORY_CAP)
}

/// Exact MPE value and one maximizing assignment (lowest values on ties).
pub fn be_mpe_capped(net: &Network, ev: &Evidence, ord: &Ordering, cap: usize) -> Result<(f64, Assignment), ElimError> {
    let problem = Problem::new(net, ev)?;
    let n = net.num_vars();
    if ord.len() != n {
        return Err(GraphError::NotPermutation(n).into());
    }
    let mut buckets: Vec<Vec<Factor>> = vec![Vec::new(); n];
    let mut value = 0.0;
    for f in problem.factors() {
        match f.scope().iter().map(|&v| ord.position(v)).min() {
            Some(p) => buckets[p].push(f.clone()),
            None => value += f.scalar_value().expect("empty scope is scalar"),
        }
    }
    for p in 0..n {
        if buckets[p].is_empty() {
            continue;
        }
        let x = ord.order()[p];
        let refs: Vec<&Factor> = buckets[p].iter().collect();
        let msg = try_combine_max(&refs, &[x], cap)?;
        match msg.scope().iter().map(|&v| ord.position(v)).min() {
            Some(q) => buckets[q].push(msg),
            None => value += msg.scalar_value().expect("empty scope is scalar"),
        }
    }
    let mut a = problem.evidence().clone();
    for p in (0..n).rev() {
        let x = ord.order()[p];
        if a.get(x).is_some() {
            continue;
        }
        let mut best = (0, LOG_ZERO);
        for v in 0..net.domain(x) {
            a.set(x, v);
            let s: f64 = buckets[p].iter().map(|f| f.value_at(&a).expect("later variables set")).sum();
            if s > best.1 {
                best = (v, s);
            }
        }
        a.set(x, best.0);
    }
    Ok((value, a))
}

/// Message-passing engine for (mini-)cluster-tree elimination on a bucket tree.
///
/// `factors` are indexed as in the decomposition's ψ labels. Each run
/// conditions them on a partial assignment and performs one upward and one
/// downward pass.
pub struct Mbte<'a> {
    td: &'a TreeDecomposition,
    factors: &'a [Factor],
    domains: &'a [usize],
    elim_up: Vec<Vec<usize>>,
    elim_down: Vec<Vec<usize>>,
}

impl<'a> Mbte<'a> {
    pub fn new(td: &'a TreeDecomposition, factors: &'a [Factor], domains: &'a [usize]) -> Self {
        let nv = td.num_vertices();
        let mut elim_up = vec![Vec::new(); nv];
        let mut elim_down = vec![Vec::new(); nv];
        for (c, p) in td.edges() {
            elim_up[c] = td.eliminator(c, p);
            elim_down[c] = td.eliminator(p, c);
        }
        Mbte { td, factors, domains, elim_up, elim_down }
    }

    /// Singleton bounds for every variable left unassigned by `partial`.
    pub fn run(&self, partial: &Assignment, i: usize) -> Result<SingletonBounds, ElimError> {
        self.run_capped(partial, i, usize::MAX)
    }

    pub fn run_capped(&self, partial: &Assignment, i: usize, cap: usize) -> Result<SingletonBounds, ElimError> {
        if i == 0 {
            return Err(ElimError::ZeroIBound);
        }
        let td = self.td;
        let nv = td.num_vertices();
        let conditioned: Vec<Factor> = self.factors.iter().map(|f| f.condition_on(partial)).collect();

        let mut up: Vec<Vec<Factor>> = vec![Vec::new(); nv];
        for v in 0..nv {
            if td.parent(v).is_none() {
                continue;
            }
            let inputs: Vec<&Factor> =
                own_functions(td, &conditioned, v).chain(td.children(v).iter().flat_map(|&c| up[c].iter())).collect();
            let out = eliminate_cluster(&inputs, &self.elim_up[v], i, cap)?.functions;
            up[v] = out;
        }

        let mut down: Vec<Vec<Factor>> = vec![Vec::new(); nv];
        for p in (0..nv).rev() {
            for &c in td.children(p) {
                let inputs: Vec<&Factor> = own_functions(td, &conditioned, p)
                    .chain(td.children(p).iter().filter(|&&s| s != c).flat_map(|&s| up[s].iter()))
                    .chain(down[p].iter())
                    .collect();
                let out = eliminate_cluster(&inputs, &self.elim_down[c], i, cap)?.functions;
                down[c] = out;
            }
        }

        let mut tables = vec![None; partial.len().max(self.domains.len())];
        for (v, from_parent) in down.iter().enumerate() {
            let x = td.variable(v);
            if partial.get(x).is_some() {
                continue;
            }
            let inputs: Vec<&Factor> = own_functions(td, &conditioned, v)
                .chain(td.children(v).iter().flat_map(|&c| up[c].iter()))
                .chain(from_parent.iter())
                .collect();
            tables[x] = Some(singleton(&inputs, x, self.domains[x], i, cap)?);
        }
        Ok(SingletonBounds { tables })
    }
}

fn own_functions<'b>(
    td: &'b TreeDecomposition,
    factors: &'b [Factor],
    v: usize,
) -> impl Iterator<Item = &'b Factor> + 'b {
    td.psi(v).iter().map(move |&k| &factors[k])
}

/// Σ over mini-buckets of max over everything but `x`.
fn singleton(fs: &[&Factor], x: usize, size: usize, i: usize, cap: usize) -> Result<Vec<f64>, ElimError> {
    let mut table = vec![0.0; size];
    let mut rest: Vec<&Factor> = Vec::new();
    for &f in fs {
        match f.scalar_value() {
            Some(c) => table.iter_mut().for_each(|t| *t += c),
            None => rest.push(f),
        }
    }
    let scopes: Vec<&[usize]> = rest.iter().map(|f| f.scope()).collect();
    for part in partition_scopes(&scopes, i) {
        let members: Vec<&Factor> = part.iter().map(|&k| rest[k]).collect();
        let mut elim: Vec<usize> = members.iter().flat_map(|f| f.scope().iter().copied()).collect();
        elim.retain(|&v| v != x);
        let m = try_combine_max(&members, &elim, cap)?;
        match m.scalar_value() {
            Some(c) => table.iter_mut().for_each(|t| *t += c),
            None => table.iter_mut().zip(m.values()).for_each(|(t, v)| *t += v),
        }
    }
    Ok(table)
}

/// Exact singleton-optimality tables by cluster-tree elimination.
pub fn cte_singletons(net: &Network, td: &TreeDecomposition, ev: &Evidence) -> Result<SingletonBounds, ElimError> {
    ev.validate(net)?;
    let partial = ev.to_assignment(net.num_vars());
    Mbte::new(td, net.factors(), net.domains()).run_capped(&partial, usize::MAX, DEFAULT_MEMORY_CAP)
}

/// Mini-bucket-tree elimination; `partial` must include the evidence.
pub fn mbte(
    net: &Network,
    td: &TreeDecomposition,
    partial: &Assignment,
    i: usize,
) -> Result<SingletonBounds, ElimError> {
    Mbte::new(td, net.factors(), net.domains()).run(partial, i)
}

/// A mini-bucket output recorded for heuristic assembly.
#[derive(Debug, Clone)]
pub struct CompiledMessage {
    /// Variable whose bucket generated the message.
    pub source: usize,
    /// Variable whose bucket received it; `None` for scalars.
    pub dest: Option<usize>,
    pub factor: Factor,
}

/// Mini-bucket functions compiled along a fixed ordering, indexed by bucket position.
#[derive(Debug, Clone)]
pub struct CompiledHeuristic {
    order: Vec<usize>,
    i_bound: usize,
    constant: f64,
    originals: Vec<Vec<Factor>>,
    messages: Vec<CompiledMessage>,
    incoming: Vec<Vec<usize>>,
    generated: Vec<Vec<usize>>,
    minibuckets: Vec<usize>,
}

impl CompiledHeuristic {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn i_bound(&self) -> usize {
        self.i_bound
    }

    /// Sum of the evidence-only (scalar) original factors.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Original factors placed in the bucket at position `p`.
    pub fn originals(&self, p: usize) -> &[Factor] {
        &self.originals[p]
    }

    pub fn messages(&self) -> &[CompiledMessage] {
        &self.messages
    }

    /// Messages routed into the bucket at position `p`.
    pub fn incoming(&self, p: usize) -> impl Iterator<Item = &CompiledMessage> {
        self.incoming[p].iter().map(move |&m| &self.messages[m])
    }

    /// Messages generated by the bucket at position `p`.
    pub fn generated(&self, p: usize) -> impl Iterator<Item = &CompiledMessage> {
        self.generated[p].iter().map(move |&m| &self.messages[m])
    }

    /// Number of mini-buckets the bucket at position `p` was split into.
    pub fn minibuckets(&self, p: usize) -> usize {
        self.minibuckets[p]
    }

    pub fn total_minibuckets(&self) -> usize {
        self.minibuckets.iter().sum()
    }
}

/// Mini-bucket elimination: an upper bound on the MPE and the compiled functions.
pub fn mbe_compile(
    net: &Network,
    ev: &Evidence,
    ord: &Ordering,
    i: usize,
) -> Result<(f64, CompiledHeuristic), ElimError> {
    if i == 0 {
        return Err(ElimError::ZeroIBound);
    }
    let problem = Problem::new(net, ev)?;
    let n = net.num_vars();
    if ord.len() != n {
        return Err(GraphError::NotPermutation(n).into());
    }
    let mut originals: Vec<Vec<Factor>> = vec![Vec::new(); n];
    let mut constant = 0.0;
    for f in problem.factors() {
        match f.scope().iter().map(|&v| ord.position(v)).min() {
            Some(p) => originals[p].push(f.clone()),
            None => constant += f.scalar_value().expect("empty scope is scalar"),
        }
    }
    let mut messages: Vec<CompiledMessage> = Vec::new();
    let mut incoming = vec![Vec::new(); n];
    let mut generated = vec![Vec::new(); n];
    let mut minibuckets = vec![0; n];
    let mut bound = constant;
    for p in 0..n {
        let x = ord.order()[p];
        let inputs: Vec<&Factor> =
            originals[p].iter().chain(incoming[p].iter().map(|&m: &usize| &messages[m].factor)).collect();
        if inputs.is_empty() {
            continue;
        }
        let out = eliminate_cluster(&inputs, &[x], i, usize::MAX)?;
        minibuckets[p] = out.parts;
        for f in out.functions {
            let dest = f.scope().iter().map(|&v| ord.position(v)).min();
            let id = messages.len();
            match dest {
                Some(q) => incoming[q].push(id),
                None => bound += f.scalar_value().expect("empty scope is scalar"),
            }
            generated[p].push(id);
            messages.push(CompiledMessage { source: x, dest: dest.map(|q| ord.order()[q]), factor: f });
        }
    }
    let compiled = CompiledHeuristic {
        order: ord.order().to_vec(),
        i_bound: i,
        constant,
        originals,
        messages,
        incoming,
        generated,
        minibuckets,
    };
    Ok((bound, compiled))
}
