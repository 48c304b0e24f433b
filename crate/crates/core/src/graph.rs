//! Moral graphs, elimination orderings and bucket-tree decompositions.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Network, Problem};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("ordering is not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("invalid tree decomposition: {0}")]
    InvalidDecomposition(String),
}

/// Simple undirected graph over vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    adj: Vec<BTreeSet<usize>>,
}

impl UndirectedGraph {
    pub fn new(n: usize) -> Self {
        UndirectedGraph { adj: vec![BTreeSet::new(); n] }
    }

    /// One clique per scope.
    pub fn from_scopes<S: AsRef<[usize]>>(n: usize, scopes: &[S]) -> Self {
        let mut g = UndirectedGraph::new(n);
        for scope in scopes {
            let scope = scope.as_ref();
            for (i, &u) in scope.iter().enumerate() {
                for &v in &scope[i + 1..] {
                    g.add_edge(u, v);
                }
            }
        }
        g
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        if u != v {
            self.adj[u].insert(v);
            self.adj[v].insert(u);
        }
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].contains(&v)
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    pub fn num_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.iter().enumerate().flat_map(|(u, ns)| ns.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }
}

/// Undirected DAG edges plus a clique over every family.
pub fn moralize(net: &Network) -> UndirectedGraph {
    let scopes: Vec<&[usize]> = net.factors().iter().map(|f| f.scope()).collect();
    UndirectedGraph::from_scopes(net.num_vars(), &scopes)
}

/// Moral graph of the evidence-conditioned problem: evidence variables are isolated.
pub fn interaction_graph(problem: &Problem) -> UndirectedGraph {
    let scopes: Vec<&[usize]> = problem.factors().iter().map(|f| f.scope()).collect();
    UndirectedGraph::from_scopes(problem.num_vars(), &scopes)
}

/// An elimination order (first-eliminated first) and its induced width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    order: Vec<usize>,
    position: Vec<usize>,
    induced_width: usize,
}

impl Ordering {
    pub fn new(g: &UndirectedGraph, order: Vec<usize>) -> Result<Self, GraphError> {
        let position = positions(&order, g.num_vertices())?;
        let induced_width = induced_width(g, &order);
        Ok(Ordering { order, position, induced_width })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn position(&self, var: usize) -> usize {
        self.position[var]
    }

    pub fn induced_width(&self) -> usize {
        self.induced_width
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

fn positions(order: &[usize], n: usize) -> Result<Vec<usize>, GraphError> {
    if order.len() != n {
        return Err(GraphError::NotPermutation(n));
    }
    let mut position = vec![usize::MAX; n];
    for (i, &v) in order.iter().enumerate() {
        if v >= n || position[v] != usize::MAX {
            return Err(GraphError::NotPermutation(n));
        }
        position[v] = i;
    }
    Ok(position)
}

/// Largest number of later neighbours any vertex has when eliminated along `order`.
pub fn induced_width(g: &UndirectedGraph, order: &[usize]) -> usize {
    let mut adj = g.adj.clone();
    let mut width = 0;
    for &v in order {
        let ns: Vec<usize> = adj[v].iter().copied().collect();
        width = width.max(ns.len());
        for (i, &a) in ns.iter().enumerate() {
            adj[a].remove(&v);
            for &b in &ns[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj[v].clear();
    }
    width
}

fn fill_in(adj: &[BTreeSet<usize>], v: usize) -> usize {
    let ns: Vec<usize> = adj[v].iter().copied().collect();
    let mut fill = 0;
    for (i, &a) in ns.iter().enumerate() {
        for &b in &ns[i + 1..] {
            if !adj[a].contains(&b) {
                fill += 1;
            }
        }
    }
    fill
}

/// Greedy min-fill elimination order, ties broken uniformly at random from `seed`.
pub fn min_fill_ordering(g: &UndirectedGraph, seed: u64) -> Ordering {
    let n = g.num_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = g.adj.clone();
    let mut alive = vec![true; n];
    let mut fill: Vec<usize> = (0..n).map(|v| fill_in(&adj, v)).collect();
    let mut order = Vec::with_capacity(n);
    let mut width = 0;
    let mut candidates = Vec::new();
    for _ in 0..n {
        let best = (0..n).filter(|&v| alive[v]).map(|v| fill[v]).min().unwrap_or(0);
        candidates.clear();
        candidates.extend((0..n).filter(|&v| alive[v] && fill[v] == best));
        let v = *candidates.choose(&mut rng).expect("a live vertex remains");
        let ns: Vec<usize> = adj[v].iter().copied().collect();
        width = width.max(ns.len());
        for (i, &a) in ns.iter().enumerate() {
            adj[a].remove(&v);
            for &b in &ns[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj[v].clear();
        alive[v] = false;
        order.push(v);
        let mut touched = BTreeSet::new();
        for &a in &ns {
            touched.insert(a);
            touched.extend(adj[a].iter().copied());
        }
        for u in touched {
            fill[u] = fill_in(&adj, u);
        }
    }
    let position = positions(&order, n).expect("min-fill emits a permutation");
    Ordering { order, position, induced_width: width }
}

/// Cluster-tree decomposition; vertex `v` is the bucket of `order[v]`.
///
/// Tree edges run from each bucket to its parent bucket, which always sits
/// later in the elimination order. The last bucket is the root.
#[derive(Debug, Clone)]
pub struct TreeDecomposition {
    vars: Vec<usize>,
    vertex_of: Vec<usize>,
    chi: Vec<Vec<usize>>,
    psi: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

/// Bucket tree of the network's factors along `ord`.
pub fn build_bucket_tree(net: &Network, ord: &Ordering) -> Result<TreeDecomposition, GraphError> {
    let scopes: Vec<&[usize]> = net.factors().iter().map(|f| f.scope()).collect();
    TreeDecomposition::bucket_tree(net.num_vars(), &scopes, ord.order())
}

impl TreeDecomposition {
    /// Bucket tree for arbitrary factor scopes. Factor `k` goes to the bucket of
    /// its earliest-eliminated variable; empty scopes go to the root.
    pub fn bucket_tree<S: AsRef<[usize]>>(n: usize, scopes: &[S], order: &[usize]) -> Result<Self, GraphError> {
        let position = positions(order, n)?;
        let g = UndirectedGraph::from_scopes(n, scopes);
        let mut adj = g.adj;
        let mut chi = Vec::with_capacity(n);
        for &x in order {
            let ns: Vec<usize> = adj[x].iter().copied().collect();
            let mut c = ns.clone();
            c.push(x);
            c.sort_unstable();
            chi.push(c);
            for (i, &a) in ns.iter().enumerate() {
                adj[a].remove(&x);
                for &b in &ns[i + 1..] {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            adj[x].clear();
        }
        let root = n.checked_sub(1);
        let mut psi = vec![Vec::new(); n];
        for (k, scope) in scopes.iter().enumerate() {
            let target = scope.as_ref().iter().map(|&v| position[v]).min().or(root);
            if let Some(t) = target {
                psi[t].push(k);
            }
        }
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for v in 0..n {
            let x = order[v];
            let next = chi[v].iter().filter(|&&u| u != x).map(|&u| position[u]).min();
            let p = match next {
                Some(p) => Some(p),
                None if Some(v) != root => root,
                None => None,
            };
            parent[v] = p;
            if let Some(p) = p {
                children[p].push(v);
            }
        }
        let td = TreeDecomposition { vars: order.to_vec(), vertex_of: position, chi, psi, parent, children };
        td.validate(scopes)?;
        Ok(td)
    }

    /// Checks both decomposition conditions against the given factor scopes.
    pub fn validate<S: AsRef<[usize]>>(&self, scopes: &[S]) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::InvalidDecomposition(m));
        let mut seen = vec![0usize; scopes.len()];
        for (v, fs) in self.psi.iter().enumerate() {
            for &k in fs {
                if k >= scopes.len() {
                    return bad(format!("vertex {v} holds unknown function {k}"));
                }
                seen[k] += 1;
                if !scopes[k].as_ref().iter().all(|x| self.chi[v].binary_search(x).is_ok()) {
                    return bad(format!("function {k} is not covered by vertex {v}"));
                }
            }
        }
        if let Some(k) = seen.iter().position(|&c| c != 1) {
            return bad(format!("function {k} is placed {} times", seen[k]));
        }
        for (v, p) in self.parent.iter().enumerate() {
            if let Some(p) = *p {
                if p <= v {
                    return bad(format!("edge {v}->{p} does not point later"));
                }
            } else if v + 1 != self.vars.len() {
                return bad(format!("vertex {v} has no parent"));
            }
        }
        for x in 0..self.vars.len() {
            let holders: Vec<usize> = (0..self.vars.len()).filter(|&v| self.chi[v].binary_search(&x).is_ok()).collect();
            let linked = holders
                .iter()
                .filter(|&&v| self.parent[v].is_some_and(|p| self.chi[p].binary_search(&x).is_ok()))
                .count();
            if !holders.is_empty() && linked + 1 != holders.len() {
                return bad(format!("variable {x} violates running intersection"));
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vars.len()
    }

    /// Variable whose bucket is vertex `v`.
    pub fn variable(&self, v: usize) -> usize {
        self.vars[v]
    }

    pub fn vertex_of(&self, var: usize) -> usize {
        self.vertex_of[var]
    }

    pub fn chi(&self, v: usize) -> &[usize] {
        &self.chi[v]
    }

    pub fn psi(&self, v: usize) -> &[usize] {
        &self.psi[v]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn root(&self) -> Option<usize> {
        self.vars.len().checked_sub(1)
    }

    /// Tree edges as (child, parent).
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent.iter().enumerate().filter_map(|(v, p)| p.map(|p| (v, p)))
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.children[v].iter().copied().chain(self.parent[v]).collect()
    }

    pub fn separator(&self, u: usize, v: usize) -> Vec<usize> {
        self.chi[u].iter().copied().filter(|x| self.chi[v].binary_search(x).is_ok()).collect()
    }

    pub fn eliminator(&self, u: usize, v: usize) -> Vec<usize> {
        self.chi[u].iter().copied().filter(|x| self.chi[v].binary_search(x).is_err()).collect()
    }

    /// max |χ(v)| − 1.
    pub fn tree_width(&self) -> usize {
        self.chi.iter().map(Vec::len).max().unwrap_or(1).saturating_sub(1)
    }

    /// max |ψ(v)|.
    pub fn hyper_width(&self) -> usize {
        self.psi.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// max |sep(u, v)| over tree edges.
    pub fn max_separator(&self) -> usize {
        self.edges().map(|(u, v)| self.separator(u, v).len()).max().unwrap_or(0)
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_vertices()).map(|v| self.neighbors(v).len()).max().unwrap_or(0)
    }
}
