//! Iterative max-product propagation on join graphs.
//!
//! The IJGP graph comes from running mini-bucket partitioning symbolically;
//! the IBP graph has one cluster per CPT family. Either way messages are sent
//! synchronously for a fixed number of rounds and each variable is decoded
//! from the lowest-id cluster that contains it.

use std::collections::BTreeSet;

use crate::elim::{partition_scopes, DEFAULT_MEMORY_CAP};
use crate::graph::Ordering;
use crate::model::{argmax, try_combine_max, Evidence, Factor, Network, Problem, LOG_ZERO};
use crate::search::{search_ordering, Clock, SearchError, SolveResult};

/// Rounds used when a caller has no preference.
pub const DEFAULT_ITERATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinArc {
    pub a: usize,
    pub b: usize,
    /// Separator variables, sorted.
    pub label: Vec<usize>,
}

/// Clusters of variables with attached factor indices, joined by labeled arcs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinGraph {
    vars: Vec<Vec<usize>>,
    factors: Vec<Vec<usize>>,
    arcs: Vec<JoinArc>,
}

impl JoinGraph {
    /// Mini-bucket join graph for arbitrary factor scopes along `order`.
    /// Empty scopes are not attached anywhere.
    pub fn minibucket<S: AsRef<[usize]>>(n: usize, scopes: &[S], order: &[usize], i: usize) -> Self {
        let mut position = vec![usize::MAX; n];
        for (p, &v) in order.iter().enumerate() {
            position[v] = p;
        }
        // bucket contents: originals by factor index, messages by source cluster
        #[derive(Clone, Copy)]
        enum Item {
            Original(usize),
            Message(usize),
        }
        let mut buckets: Vec<Vec<(Item, Vec<usize>)>> = vec![Vec::new(); n];
        for (k, s) in scopes.iter().enumerate() {
            let s = s.as_ref();
            if let Some(p) = s.iter().map(|&v| position[v]).min() {
                let mut scope = s.to_vec();
                scope.sort_unstable();
                buckets[p].push((Item::Original(k), scope));
            }
        }
        let mut g = JoinGraph { vars: Vec::new(), factors: Vec::new(), arcs: Vec::new() };
        for p in 0..n {
            let x = order[p];
            let items = std::mem::take(&mut buckets[p]);
            if items.is_empty() {
                continue;
            }
            let scope_refs: Vec<&[usize]> = items.iter().map(|(_, s)| s.as_slice()).collect();
            let mut prev: Option<usize> = None;
            for part in partition_scopes(&scope_refs, i) {
                let c = g.vars.len();
                let mut vars = BTreeSet::new();
                let mut attached = Vec::new();
                for &m in &part {
                    let (item, scope) = &items[m];
                    vars.extend(scope.iter().copied());
                    match *item {
                        Item::Original(k) => attached.push(k),
                        Item::Message(src) => {
                            g.arcs.push(JoinArc { a: src, b: c, label: scope.clone() });
                        }
                    }
                }
                let vars: Vec<usize> = vars.into_iter().collect();
                let message: Vec<usize> = vars.iter().copied().filter(|&v| v != x).collect();
                if let Some(q) = message.iter().map(|&v| position[v]).min() {
                    buckets[q].push((Item::Message(c), message));
                }
                g.vars.push(vars);
                g.factors.push(attached);
                if let Some(pc) = prev {
                    g.arcs.push(JoinArc { a: pc, b: c, label: vec![x] });
                }
                prev = Some(c);
            }
        }
        g.connect_components();
        g
    }

    /// One cluster per non-empty scope. Each factor is linked to the home
    /// cluster of every other variable in its scope, labeled by that variable;
    /// the home of `v` is the cluster of factor `home[v]`.
    pub fn families<S: AsRef<[usize]>>(scopes: &[S], home: &[usize]) -> Self {
        let mut cluster_of = vec![usize::MAX; scopes.len()];
        let mut g = JoinGraph { vars: Vec::new(), factors: Vec::new(), arcs: Vec::new() };
        for (k, s) in scopes.iter().enumerate() {
            let s = s.as_ref();
            if s.is_empty() {
                continue;
            }
            cluster_of[k] = g.vars.len();
            let mut vars = s.to_vec();
            vars.sort_unstable();
            g.vars.push(vars);
            g.factors.push(vec![k]);
        }
        for (k, s) in scopes.iter().enumerate() {
            for &v in s.as_ref() {
                let h = home[v];
                if h != k && cluster_of[h] != usize::MAX && cluster_of[k] != usize::MAX {
                    g.arcs.push(JoinArc { a: cluster_of[k], b: cluster_of[h], label: vec![v] });
                }
            }
        }
        g.connect_components();
        g
    }

    /// Links every component to cluster 0 with an empty-label arc.
    fn connect_components(&mut self) {
        let n = self.vars.len();
        let mut comp = vec![usize::MAX; n];
        let adj = self.adjacency();
        let mut roots = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            roots.push(s);
            comp[s] = s;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &(w, _) in &adj[u] {
                    if comp[w] == usize::MAX {
                        comp[w] = s;
                        stack.push(w);
                    }
                }
            }
        }
        for &r in roots.iter().skip(1) {
            self.arcs.push(JoinArc { a: roots[0], b: r, label: Vec::new() });
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.vars.len()];
        for (e, arc) in self.arcs.iter().enumerate() {
            adj[arc.a].push((arc.b, e));
            adj[arc.b].push((arc.a, e));
        }
        adj
    }

    pub fn num_clusters(&self) -> usize {
        self.vars.len()
    }

    pub fn cluster_vars(&self, c: usize) -> &[usize] {
        &self.vars[c]
    }

    /// Indices of the factors attached to cluster `c`.
    pub fn cluster_factors(&self, c: usize) -> &[usize] {
        &self.factors[c]
    }

    pub fn arcs(&self) -> &[JoinArc] {
        &self.arcs
    }

    /// Connected and acyclic.
    pub fn is_tree(&self) -> bool {
        self.arcs.len() + 1 == self.vars.len().max(1) && self.is_connected()
    }

    pub fn is_connected(&self) -> bool {
        if self.vars.is_empty() {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.vars.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(w, _) in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Checks attachment, arc labels and connectivity; `Err` describes the first violation.
    pub fn validate<S: AsRef<[usize]>>(&self, scopes: &[S]) -> Result<(), String> {
        let mut seen = vec![0usize; scopes.len()];
        for (c, fs) in self.factors.iter().enumerate() {
            for &k in fs {
                seen[k] += 1;
                if !scopes[k].as_ref().iter().all(|v| self.vars[c].binary_search(v).is_ok()) {
                    return Err(format!("cluster {c} does not cover factor {k}"));
                }
            }
        }
        for (k, s) in scopes.iter().enumerate() {
            let want = usize::from(!s.as_ref().is_empty());
            if seen[k] != want {
                return Err(format!("factor {k} attached {} times", seen[k]));
            }
        }
        for arc in &self.arcs {
            for v in &arc.label {
                if self.vars[arc.a].binary_search(v).is_err() || self.vars[arc.b].binary_search(v).is_err() {
                    return Err(format!("arc {}-{} label not in both clusters", arc.a, arc.b));
                }
            }
        }
        if !self.is_connected() {
            return Err("join graph is disconnected".into());
        }
        Ok(())
    }
}

/// Mini-bucket join graph of a network's factors along `ord`.
pub fn build_join_graph(net: &Network, ord: &Ordering, i: usize) -> JoinGraph {
    let scopes: Vec<&[usize]> = net.factors().iter().map(|f| f.scope()).collect();
    JoinGraph::minibucket(net.num_vars(), &scopes, ord.order(), i.max(1))
}

/// Synchronous max-product on `g` over `factors`; returns the decoded value of
/// every variable that appears in some cluster.
pub fn propagate(
    g: &JoinGraph,
    factors: &[Factor],
    domains: &[usize],
    iterations: usize,
) -> Result<Vec<Option<usize>>, SearchError> {
    let cap = DEFAULT_MEMORY_CAP;
    let adj = g.adjacency();
    // msgs[e][0] flows a -> b, msgs[e][1] flows b -> a
    let unit = |label: &[usize]| {
        let dims = label.iter().map(|&v| domains[v]).collect::<Vec<_>>();
        let size = dims.iter().product();
        Factor::new(label.to_vec(), dims, vec![0.0; size]).expect("label is sorted and distinct")
    };
    let mut msgs: Vec<[Factor; 2]> = g.arcs.iter().map(|a| [unit(&a.label), unit(&a.label)]).collect();
    let into = |e: usize, u: usize| usize::from(g.arcs[e].a == u);
    for _ in 0..iterations {
        let mut next = msgs.clone();
        for (e, arc) in g.arcs.iter().enumerate() {
            for (dir, (u, _)) in [(arc.a, arc.b), (arc.b, arc.a)].into_iter().enumerate() {
                let inputs: Vec<&Factor> = g.factors[u]
                    .iter()
                    .map(|&k| &factors[k])
                    .chain(adj[u].iter().filter(|&&(_, e2)| e2 != e).map(|&(_, e2)| &msgs[e2][into(e2, u)]))
                    .collect();
                let mut elim: Vec<usize> = inputs.iter().flat_map(|f| f.scope().iter().copied()).collect();
                elim.sort_unstable();
                elim.dedup();
                elim.retain(|v| arc.label.binary_search(v).is_err());
                let mut m = try_combine_max(&inputs, &elim, cap).map_err(crate::elim::ElimError::from)?;
                let top = m.values().iter().copied().filter(|v| v.is_finite()).fold(LOG_ZERO, f64::max);
                if top.is_finite() {
                    m.shift(-top);
                }
                next[e][dir] = m;
            }
        }
        msgs = next;
    }
    let mut decoded = vec![None; domains.len()];
    for c in 0..g.num_clusters() {
        let pending: Vec<usize> = g.vars[c].iter().copied().filter(|&v| decoded[v].is_none()).collect();
        if pending.is_empty() {
            continue;
        }
        let inputs: Vec<&Factor> = g.factors[c]
            .iter()
            .map(|&k| &factors[k])
            .chain(adj[c].iter().map(|&(_, e)| &msgs[e][into(e, c)]))
            .collect();
        for v in pending {
            let mut elim: Vec<usize> = inputs.iter().flat_map(|f| f.scope().iter().copied()).collect();
            elim.sort_unstable();
            elim.dedup();
            elim.retain(|&w| w != v);
            let belief = try_combine_max(&inputs, &elim, cap).map_err(crate::elim::ElimError::from)?;
            let values = if belief.contains(v) { belief.values().to_vec() } else { vec![0.0; domains[v]] };
            decoded[v] = Some(argmax(&values).0);
        }
    }
    Ok(decoded)
}

fn decode_result(
    net: &Network,
    problem: &Problem,
    decoded: Vec<Option<usize>>,
    clock: &Clock,
) -> Result<SolveResult, SearchError> {
    let mut a = problem.evidence().clone();
    for (v, x) in decoded.into_iter().enumerate() {
        if a.get(v).is_none() {
            a.set(v, x.unwrap_or(0));
        }
    }
    let value = net.evaluate(&a)?;
    let elapsed = clock.seconds();
    let trace = if value.is_finite() { vec![(elapsed, value)] } else { Vec::new() };
    Ok(SolveResult {
        best_assignment: a,
        best_log_value: value,
        completed: false,
        nodes_expanded: 0,
        elapsed,
        anytime_trace: trace,
    })
}

/// IJGP(i) adapted to MPE by max-product messages.
pub fn ijgp_mpe(net: &Network, ev: &Evidence, i: usize, iterations: usize) -> Result<SolveResult, SearchError> {
    if i == 0 || iterations == 0 {
        return Err(SearchError::Config("i-bound and iterations must be at least 1".into()));
    }
    let clock = Clock::start(f64::INFINITY);
    let problem = Problem::new(net, ev)?;
    let ord = search_ordering(&problem, 0);
    let g = JoinGraph::minibucket(net.num_vars(), &problem.scopes(), ord.order(), i);
    let decoded = propagate(&g, problem.factors(), problem.domains(), iterations)?;
    decode_result(net, &problem, decoded, &clock)
}

/// Max-product belief propagation on the family graph.
pub fn ibp_mpe(net: &Network, ev: &Evidence, iterations: usize) -> Result<SolveResult, SearchError> {
    if iterations == 0 {
        return Err(SearchError::Config("iterations must be at least 1".into()));
    }
    let clock = Clock::start(f64::INFINITY);
    let problem = Problem::new(net, ev)?;
    // the first n factors are the CPTs, factor v being the family of v
    let home: Vec<usize> = (0..net.num_vars()).collect();
    let g = JoinGraph::families(&problem.scopes(), &home);
    let decoded = propagate(&g, problem.factors(), problem.domains(), iterations)?;
    decode_result(net, &problem, decoded, &clock)
}
