//! Bayesian networks, log-space factors, assignments and evidence.
//!
//! Every table in the crate is stored in natural-log space. The value
//! [`LOG_ZERO`] stands for probability zero: it absorbs under addition and
//! loses every `max` against a finite value. Tables are dense and row-major
//! over their scope, with the last scope variable varying fastest.

use std::collections::BTreeMap;

use thiserror::Error;

/// log(0).
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// Row sums of a CPT must be within this distance of one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("assignment leaves variable {0} unassigned")]
    IncompleteAssignment(usize),
    #[error("variable {0} is not in the factor scope")]
    NotInScope(usize),
    #[error("value {value} is outside the domain of variable {var} (size {size})")]
    OutOfDomain { var: usize, value: usize, size: usize },
    #[error("variable {0} appears twice in a scope")]
    DuplicateScope(usize),
    #[error("table has {got} entries but the scope requires {expected}")]
    TableSize { expected: usize, got: usize },
    #[error("table entry {0} is neither finite nor log(0)")]
    InvalidEntry(f64),
    #[error("variable {0} has an empty domain")]
    EmptyDomain(usize),
    #[error("variable {var} is declared with domain {declared} but a factor uses {found}")]
    DomainMismatch { var: usize, declared: usize, found: usize },
    #[error("CPT {0} must have its own variable last in scope")]
    BadCptScope(usize),
    #[error("parent graph contains a cycle through variable {0}")]
    Cyclic(usize),
    #[error("CPT of variable {var} has a row summing to {sum}")]
    Unnormalized { var: usize, sum: f64 },
    #[error("expected {expected} CPTs, got {got}")]
    CptCount { expected: usize, got: usize },
    #[error("table of {cells} cells exceeds the memory cap of {cap}")]
    TooLarge { cells: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variable {
    pub id: usize,
    pub domain_size: usize,
}

/// A (possibly partial) assignment of domain values to variables `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Assignment {
    values: Vec<Option<usize>>,
}

impl Assignment {
    pub fn empty(n: usize) -> Self {
        Assignment { values: vec![None; n] }
    }

    pub fn complete(values: Vec<usize>) -> Self {
        Assignment { values: values.into_iter().map(Some).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, var: usize) -> Option<usize> {
        self.values[var]
    }

    #[inline]
    pub fn set(&mut self, var: usize, value: usize) {
        self.values[var] = Some(value);
    }

    #[inline]
    pub fn unset(&mut self, var: usize) {
        self.values[var] = None;
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn num_assigned(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.values.iter().enumerate().filter_map(|(i, v)| v.map(|x| (i, x)))
    }

    /// Values of a complete assignment, `None` if any variable is unassigned.
    pub fn to_values(&self) -> Option<Vec<usize>> {
        self.values.iter().copied().collect()
    }
}

/// Fixed observations. Evidence variables are never reassigned by a solver.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Evidence {
    pairs: BTreeMap<usize, usize>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, var: usize, value: usize) {
        self.pairs.insert(var, value);
    }

    pub fn get(&self, var: usize) -> Option<usize> {
        self.pairs.get(&var).copied()
    }

    pub fn contains(&self, var: usize) -> bool {
        self.pairs.contains_key(&var)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().map(|(&k, &v)| (k, v))
    }

    pub fn to_assignment(&self, n: usize) -> Assignment {
        let mut a = Assignment::empty(n);
        for (var, value) in self.iter() {
            a.set(var, value);
        }
        a
    }

    pub fn validate(&self, net: &Network) -> Result<(), ModelError> {
        for (var, value) in self.iter() {
            if var >= net.num_vars() {
                return Err(ModelError::OutOfDomain { var, value, size: 0 });
            }
            let size = net.domain(var);
            if value >= size {
                return Err(ModelError::OutOfDomain { var, value, size });
            }
        }
        Ok(())
    }
}

impl FromIterator<(usize, usize)> for Evidence {
    fn from_iter<T: IntoIterator<Item = (usize, usize)>>(iter: T) -> Self {
        Evidence { pairs: iter.into_iter().collect() }
    }
}

/// A dense log-space table over an ordered scope.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    scope: Vec<usize>,
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl Factor {
    pub fn new(scope: Vec<usize>, dims: Vec<usize>, values: Vec<f64>) -> Result<Self, ModelError> {
        if scope.len() != dims.len() {
            return Err(ModelError::TableSize { expected: scope.len(), got: dims.len() });
        }
        for (i, &v) in scope.iter().enumerate() {
            if scope[..i].contains(&v) {
                return Err(ModelError::DuplicateScope(v));
            }
            if dims[i] == 0 {
                return Err(ModelError::EmptyDomain(v));
            }
        }
        let expected: usize = dims.iter().product();
        if values.len() != expected {
            return Err(ModelError::TableSize { expected, got: values.len() });
        }
        if let Some(&bad) = values.iter().find(|x| !(x.is_finite() || **x == LOG_ZERO)) {
            return Err(ModelError::InvalidEntry(bad));
        }
        Ok(Factor { scope, dims, values })
    }

    /// Builds a factor from linear-space probabilities.
    pub fn from_probabilities(scope: Vec<usize>, dims: Vec<usize>, probs: &[f64]) -> Result<Self, ModelError> {
        let values = probs.iter().map(|&p| if p > 0.0 { p.ln() } else { LOG_ZERO }).collect();
        Factor::new(scope, dims, values)
    }

    pub fn scalar(value: f64) -> Self {
        Factor { scope: Vec::new(), dims: Vec::new(), values: vec![value] }
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.scope.is_empty()
    }

    /// The single entry of a scalar factor.
    pub fn scalar_value(&self) -> Option<f64> {
        self.is_scalar().then(|| self.values[0])
    }

    pub fn contains(&self, var: usize) -> bool {
        self.scope.contains(&var)
    }

    pub fn position(&self, var: usize) -> Option<usize> {
        self.scope.iter().position(|&v| v == var)
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for j in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * self.dims[j + 1];
        }
        strides
    }

    /// Row-major index of a tuple given in scope order.
    pub fn index_of(&self, tuple: &[usize]) -> usize {
        debug_assert_eq!(tuple.len(), self.scope.len());
        tuple.iter().zip(&self.dims).fold(0, |acc, (&x, &d)| acc * d + x)
    }

    /// Index of the entry selected by `a`, or `None` if `a` misses a scope variable.
    #[inline]
    pub fn index_at(&self, a: &Assignment) -> Option<usize> {
        let mut idx = 0;
        for (&v, &d) in self.scope.iter().zip(&self.dims) {
            idx = idx * d + a.get(v)?;
        }
        Some(idx)
    }

    #[inline]
    pub fn value_at(&self, a: &Assignment) -> Option<f64> {
        self.index_at(a).map(|i| self.values[i])
    }

    /// Fixes `var` to `value`, dropping it from the scope.
    pub fn condition(&self, var: usize, value: usize) -> Result<Factor, ModelError> {
        let pos = self.position(var).ok_or(ModelError::NotInScope(var))?;
        if value >= self.dims[pos] {
            return Err(ModelError::OutOfDomain { var, value, size: self.dims[pos] });
        }
        Ok(self.restrict(|v| if v == var { Some(value) } else { None }))
    }

    /// Fixes every scope variable that `a` assigns.
    pub fn condition_on(&self, a: &Assignment) -> Factor {
        self.restrict(|v| if v < a.len() { a.get(v) } else { None })
    }

    fn restrict(&self, fixed: impl Fn(usize) -> Option<usize>) -> Factor {
        let strides = self.strides();
        let mut base = 0;
        let mut scope = Vec::with_capacity(self.scope.len());
        let mut dims = Vec::with_capacity(self.scope.len());
        let mut free_strides = Vec::with_capacity(self.scope.len());
        for (j, &v) in self.scope.iter().enumerate() {
            match fixed(v) {
                Some(x) => base += x * strides[j],
                None => {
                    scope.push(v);
                    dims.push(self.dims[j]);
                    free_strides.push(strides[j]);
                }
            }
        }
        if scope.len() == self.scope.len() {
            return self.clone();
        }
        let len: usize = dims.iter().product();
        let mut values = Vec::with_capacity(len);
        let mut digits = vec![0usize; dims.len()];
        let mut idx = base;
        for _ in 0..len {
            values.push(self.values[idx]);
            let mut j = dims.len();
            while j > 0 {
                j -= 1;
                digits[j] += 1;
                idx += free_strides[j];
                if digits[j] < dims[j] {
                    break;
                }
                idx -= free_strides[j] * dims[j];
                digits[j] = 0;
            }
        }
        Factor { scope, dims, values }
    }

    /// Maximizes out `vars`; every variable must be in scope.
    pub fn max_eliminate(&self, vars: &[usize]) -> Result<Factor, ModelError> {
        if let Some(&v) = vars.iter().find(|&&v| !self.contains(v)) {
            return Err(ModelError::NotInScope(v));
        }
        if vars.is_empty() {
            return Ok(self.clone());
        }
        Ok(combine_max(&[self], vars))
    }

    /// Max-marginal of a single scope variable.
    pub fn max_marginal(&self, var: usize) -> Result<Vec<f64>, ModelError> {
        if !self.contains(var) {
            return Err(ModelError::NotInScope(var));
        }
        let others: Vec<usize> = self.scope.iter().copied().filter(|&v| v != var).collect();
        Ok(combine_max(&[self], &others).values)
    }

    /// Largest entry and its lowest index.
    pub fn argmax(&self) -> (usize, f64) {
        argmax(&self.values)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(LOG_ZERO, f64::max)
    }

    /// Adds `delta` to every finite entry.
    pub fn shift(&mut self, delta: f64) {
        for v in &mut self.values {
            if *v != LOG_ZERO {
                *v += delta;
            }
        }
    }
}

/// Lowest index of the maximum, `LOG_ZERO` losing to anything finite.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, LOG_ZERO);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Product (log-space sum) of factors. The empty product is the scalar 0.0.
pub fn multiply(fs: &[&Factor]) -> Factor {
    combine_max(fs, &[])
}

/// Product of `fs` with `elim` maximized out, computed without materializing
/// the joint table. Variables of `elim` absent from every scope are ignored.
/// The output scope is sorted ascending.
pub fn combine_max(fs: &[&Factor], elim: &[usize]) -> Factor {
    try_combine_max(fs, elim, usize::MAX).expect("uncapped combination cannot fail")
}

/// [`combine_max`] refusing to allocate an output larger than `cap` cells.
pub fn try_combine_max(fs: &[&Factor], elim: &[usize], cap: usize) -> Result<Factor, ModelError> {
    let mut vars: Vec<(usize, usize)> = Vec::new();
    for f in fs {
        for (&v, &d) in f.scope.iter().zip(&f.dims) {
            if !vars.iter().any(|&(u, _)| u == v) {
                vars.push((v, d));
            }
        }
    }
    vars.sort_unstable();
    let (kept, gone): (Vec<_>, Vec<_>) = vars.into_iter().partition(|(v, _)| !elim.contains(v));

    let out_len = kept.iter().try_fold(1usize, |acc, &(_, d)| acc.checked_mul(d));
    let out_len = match out_len {
        Some(l) if l <= cap => l,
        Some(l) => return Err(ModelError::TooLarge { cells: l, cap }),
        None => return Err(ModelError::TooLarge { cells: usize::MAX, cap }),
    };
    let inner: usize = gone.iter().map(|&(_, d)| d).product();

    let order: Vec<(usize, usize)> = kept.iter().chain(gone.iter()).copied().collect();
    let m = order.len();
    let k = fs.len();
    let mut strides = vec![0usize; k * m];
    for (fi, f) in fs.iter().enumerate() {
        let fst = f.strides();
        for (j, &(v, _)) in order.iter().enumerate() {
            if let Some(p) = f.position(v) {
                strides[fi * m + j] = fst[p];
            }
        }
    }
    let dims: Vec<usize> = order.iter().map(|&(_, d)| d).collect();

    let mut out = vec![LOG_ZERO; out_len];
    let mut digits = vec![0usize; m];
    let mut idx = vec![0usize; k];
    for slot in out.iter_mut() {
        let mut best = LOG_ZERO;
        for _ in 0..inner {
            let mut s = 0.0;
            for (fi, f) in fs.iter().enumerate() {
                s += f.values[idx[fi]];
            }
            if s > best {
                best = s;
            }
            let mut j = m;
            while j > 0 {
                j -= 1;
                digits[j] += 1;
                for fi in 0..k {
                    idx[fi] += strides[fi * m + j];
                }
                if digits[j] < dims[j] {
                    break;
                }
                for fi in 0..k {
                    idx[fi] -= strides[fi * m + j] * dims[j];
                }
                digits[j] = 0;
            }
        }
        *slot = best;
    }
    Ok(Factor {
        scope: kept.iter().map(|&(v, _)| v).collect(),
        dims: kept.iter().map(|&(_, d)| d).collect(),
        values: out,
    })
}

/// A Bayesian network: one CPT per variable, optionally followed by extra
/// non-negative factors (e.g. channel likelihoods) that are not CPTs.
///
/// The CPT of variable `i` has scope `parents(i) ++ [i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    domains: Vec<usize>,
    parents: Vec<Vec<usize>>,
    factors: Vec<Factor>,
}

impl Network {
    /// Builds and validates a network. `cpts[i]` must be the CPT of variable `i`.
    pub fn new(domains: Vec<usize>, cpts: Vec<Factor>) -> Result<Self, ModelError> {
        Network::with_extra_factors(domains, cpts, Vec::new())
    }

    pub fn with_extra_factors(domains: Vec<usize>, cpts: Vec<Factor>, extra: Vec<Factor>) -> Result<Self, ModelError> {
        let n = domains.len();
        if let Some(i) = domains.iter().position(|&d| d == 0) {
            return Err(ModelError::EmptyDomain(i));
        }
        if cpts.len() != n {
            return Err(ModelError::CptCount { expected: n, got: cpts.len() });
        }
        let mut parents = Vec::with_capacity(n);
        for (i, cpt) in cpts.iter().enumerate() {
            if cpt.scope.last() != Some(&i) {
                return Err(ModelError::BadCptScope(i));
            }
            parents.push(cpt.scope[..cpt.scope.len() - 1].to_vec());
        }
        for f in cpts.iter().chain(&extra) {
            for (&v, &d) in f.scope.iter().zip(&f.dims) {
                if v >= n {
                    return Err(ModelError::OutOfDomain { var: v, value: 0, size: 0 });
                }
                if d != domains[v] {
                    return Err(ModelError::DomainMismatch { var: v, declared: domains[v], found: d });
                }
            }
        }
        let mut factors = cpts;
        factors.extend(extra);
        let net = Network { domains, parents, factors };
        net.topological_order()?;
        for i in 0..n {
            net.check_normalized(i)?;
        }
        Ok(net)
    }

    fn check_normalized(&self, i: usize) -> Result<(), ModelError> {
        let cpt = &self.factors[i];
        let k = self.domains[i];
        for row in cpt.values.chunks(k) {
            let sum: f64 = row.iter().map(|v| v.exp()).sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(ModelError::Unnormalized { var: i, sum });
            }
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.domains.len()
    }

    pub fn domain(&self, var: usize) -> usize {
        self.domains[var]
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn variables(&self) -> impl Iterator<Item = Variable> + '_ {
        self.domains.iter().enumerate().map(|(id, &domain_size)| Variable { id, domain_size })
    }

    pub fn parents(&self, var: usize) -> &[usize] {
        &self.parents[var]
    }

    pub fn cpt(&self, var: usize) -> &Factor {
        &self.factors[var]
    }

    pub fn cpts(&self) -> &[Factor] {
        &self.factors[..self.num_vars()]
    }

    pub fn extra_factors(&self) -> &[Factor] {
        &self.factors[self.num_vars()..]
    }

    /// CPTs followed by extra factors.
    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Parent-before-child order, or the variable on a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>, ModelError> {
        let n = self.num_vars();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut children = vec![Vec::new(); n];
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        let mut stack: Vec<usize> = (0..n).rev().filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = stack.pop() {
            order.push(v);
            for &c in children[v].iter().rev() {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    stack.push(c);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(ModelError::Cyclic(stuck));
        }
        Ok(order)
    }

    /// log Π_k f_k(a) over every factor of the network.
    pub fn evaluate(&self, a: &Assignment) -> Result<f64, ModelError> {
        if let Some(v) = (0..self.num_vars()).find(|&v| v >= a.len() || a.get(v).is_none()) {
            return Err(ModelError::IncompleteAssignment(v));
        }
        for (var, value) in a.iter() {
            if value >= self.domains[var] {
                return Err(ModelError::OutOfDomain { var, value, size: self.domains[var] });
            }
        }
        let mut total = 0.0;
        for f in &self.factors {
            total += f.value_at(a).expect("complete assignment covers every scope");
            if total == LOG_ZERO {
                break;
            }
        }
        Ok(total)
    }
}

/// A network with evidence applied: every factor conditioned on the evidence.
///
/// Factor `k` of the problem corresponds to factor `k` of the network.
#[derive(Debug, Clone)]
pub struct Problem {
    domains: Vec<usize>,
    evidence: Assignment,
    factors: Vec<Factor>,
}

impl Problem {
    pub fn new(net: &Network, ev: &Evidence) -> Result<Self, ModelError> {
        ev.validate(net)?;
        let evidence = ev.to_assignment(net.num_vars());
        let factors = net.factors().iter().map(|f| f.condition_on(&evidence)).collect();
        Ok(Problem { domains: net.domains().to_vec(), evidence, factors })
    }

    pub fn num_vars(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn domain(&self, var: usize) -> usize {
        self.domains[var]
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn evidence(&self) -> &Assignment {
        &self.evidence
    }

    pub fn is_free(&self, var: usize) -> bool {
        self.evidence.get(var).is_none()
    }

    pub fn free_vars(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_vars()).filter(|&v| self.is_free(v))
    }

    pub fn scopes(&self) -> Vec<Vec<usize>> {
        self.factors.iter().map(|f| f.scope.clone()).collect()
    }
}
