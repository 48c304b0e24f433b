//! Seeded random instance families: uniform random networks, noisy-OR
//! networks, grids and linear-block coding networks.
//!
//! All randomness comes from `ChaCha8Rng` seeded with `seed_from_u64`, so a
//! (spec, seed) pair identifies an instance on every platform.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Assignment, Evidence, Factor, ModelError, Network, LOG_ZERO};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The instance family to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Uniform,
    NoisyOr,
    Grid,
    Coding,
}

impl std::str::FromStr for Family {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Family::Uniform),
            "noisy-or" | "noisyor" => Ok(Family::NoisyOr),
            "grid" => Ok(Family::Grid),
            "coding" => Ok(Family::Coding),
            other => Err(GenError::Invalid(format!("unknown family {other:?}"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Uniform => "uniform",
            Family::NoisyOr => "noisy-or",
            Family::Grid => "grid",
            Family::Coding => "coding",
        })
    }
}

/// How grid CPTs are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridCpt {
    #[default]
    Uniform,
    NoisyOr,
}

/// Generator parameters.
///
/// `n` variables of domain `k`; `c` of them receive `p` parents. For grids
/// `n` must be a perfect square. For coding networks `k` is the number of
/// information bits per layer and `p` the number of parents of each parity bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub family: Family,
    pub n: usize,
    pub k: usize,
    pub c: usize,
    pub p: usize,
    pub p_noise: f64,
    pub p_leak: f64,
    pub sigma: f64,
    pub grid_cpt: GridCpt,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            family: Family::Uniform,
            n: 10,
            k: 2,
            c: 8,
            p: 2,
            p_noise: 0.2,
            p_leak: 0.01,
            sigma: 0.32,
            grid_cpt: GridCpt::Uniform,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn uniform(n: usize, k: usize, c: usize, p: usize, seed: u64) -> Self {
        GenSpec { family: Family::Uniform, n, k, c, p, seed, ..Default::default() }
    }

    pub fn noisy_or(n: usize, k: usize, c: usize, p: usize, seed: u64) -> Self {
        GenSpec { family: Family::NoisyOr, n, k, c, p, seed, ..Default::default() }
    }

    pub fn grid(n: usize, k: usize, seed: u64) -> Self {
        GenSpec { family: Family::Grid, n, k, c: 0, p: 2, seed, ..Default::default() }
    }

    pub fn coding(bits: usize, p: usize, sigma: f64, seed: u64) -> Self {
        GenSpec { family: Family::Coding, n: 2 * bits, k: bits, c: bits, p, sigma, seed, ..Default::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Invalid(m.to_string()));
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        match self.family {
            Family::Uniform | Family::NoisyOr => {
                if self.n == 0 || self.k == 0 {
                    return bad("n and k must be positive");
                }
                if self.c > self.n {
                    return bad("c must not exceed n");
                }
                if self.p >= self.n && self.c > 0 {
                    return bad("p must be smaller than n");
                }
            }
            Family::Grid => {
                if self.n == 0 || self.k == 0 || integer_sqrt(self.n).is_none() {
                    return bad("grid n must be a positive perfect square");
                }
            }
            Family::Coding => {
                if self.k == 0 || self.p == 0 || self.p > self.k {
                    return bad("coding needs 1 <= p <= k information bits");
                }
                if !(self.sigma > 0.0 && self.sigma.is_finite()) {
                    return bad("sigma must be positive");
                }
            }
        }
        let noisy =
            self.family == Family::NoisyOr || (self.family == Family::Grid && self.grid_cpt == GridCpt::NoisyOr);
        if noisy && !(prob(self.p_noise) && prob(self.p_leak)) {
            return bad("p_noise and p_leak must be probabilities");
        }
        Ok(())
    }
}

fn integer_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `c` random variables each get `min(p, i)` parents among `0..i`.
fn random_structure(rng: &mut ChaCha8Rng, n: usize, c: usize, p: usize) -> Vec<Vec<usize>> {
    let mut chosen = index::sample(rng, n, c).into_vec();
    chosen.sort_unstable();
    let mut parents = vec![Vec::new(); n];
    for v in chosen {
        let mut ps = index::sample(rng, v, p.min(v)).into_vec();
        ps.sort_unstable();
        parents[v] = ps;
    }
    parents
}

fn random_cpt(rng: &mut ChaCha8Rng, var: usize, parents: &[usize], domains: &[usize]) -> Result<Factor, ModelError> {
    let k = domains[var];
    let rows: usize = parents.iter().map(|&p| domains[p]).product();
    let mut probs = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        // (0, 1] keeps every entry strictly positive
        let row: Vec<f64> = (0..k).map(|_| 1.0 - rng.random::<f64>()).collect();
        let total: f64 = row.iter().sum();
        probs.extend(row.iter().map(|x| x / total));
    }
    family_factor(var, parents, domains, &probs)
}

fn noisy_or_cpt(
    var: usize,
    parents: &[usize],
    domains: &[usize],
    p_noise: f64,
    p_leak: f64,
) -> Result<Factor, ModelError> {
    let k = domains[var];
    let pdims: Vec<usize> = parents.iter().map(|&p| domains[p]).collect();
    let rows: usize = pdims.iter().product();
    let mut probs = Vec::with_capacity(rows * k);
    let mut tuple = vec![0usize; pdims.len()];
    for _ in 0..rows {
        let active = tuple.iter().filter(|&&x| x != 0).count();
        let zero = if k == 1 { 1.0 } else { p_leak * p_noise.powi(active as i32) };
        probs.push(zero);
        for _ in 1..k {
            probs.push((1.0 - zero) / (k - 1) as f64);
        }
        for j in (0..tuple.len()).rev() {
            tuple[j] += 1;
            if tuple[j] < pdims[j] {
                break;
            }
            tuple[j] = 0;
        }
    }
    family_factor(var, parents, domains, &probs)
}

fn family_factor(var: usize, parents: &[usize], domains: &[usize], probs: &[f64]) -> Result<Factor, ModelError> {
    let mut scope = parents.to_vec();
    scope.push(var);
    let dims = scope.iter().map(|&v| domains[v]).collect();
    Factor::from_probabilities(scope, dims, probs)
}

/// Random network with uniformly drawn CPT entries, normalized per row.
pub fn gen_uniform(spec: &GenSpec) -> Result<Network, GenError> {
    if spec.family != Family::Uniform {
        return Err(GenError::Invalid("expected the uniform family".into()));
    }
    spec.validate()?;
    let mut rng = rng_for(spec.seed);
    let parents = random_structure(&mut rng, spec.n, spec.c, spec.p);
    let domains = vec![spec.k; spec.n];
    let cpts = (0..spec.n).map(|v| random_cpt(&mut rng, v, &parents[v], &domains)).collect::<Result<Vec<_>, _>>()?;
    Ok(Network::new(domains, cpts)?)
}

/// Random network with noisy-OR CPTs for non-roots and random priors for roots.
pub fn gen_noisyor(spec: &GenSpec) -> Result<Network, GenError> {
    if spec.family != Family::NoisyOr {
        return Err(GenError::Invalid("expected the noisy-or family".into()));
    }
    spec.validate()?;
    let mut rng = rng_for(spec.seed);
    let parents = random_structure(&mut rng, spec.n, spec.c, spec.p);
    let domains = vec![spec.k; spec.n];
    let cpts = (0..spec.n)
        .map(|v| {
            if parents[v].is_empty() {
                random_cpt(&mut rng, v, &[], &domains)
            } else {
                noisy_or_cpt(v, &parents[v], &domains, spec.p_noise, spec.p_leak)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Network::new(domains, cpts)?)
}

/// √n × √n lattice in row-major order; each cell's parents are its top and left neighbours.
pub fn gen_grid(spec: &GenSpec) -> Result<Network, GenError> {
    if spec.family != Family::Grid {
        return Err(GenError::Invalid("expected the grid family".into()));
    }
    spec.validate()?;
    let side = integer_sqrt(spec.n).expect("validated");
    let mut rng = rng_for(spec.seed);
    let domains = vec![spec.k; spec.n];
    let mut cpts = Vec::with_capacity(spec.n);
    for v in 0..spec.n {
        let (r, c) = (v / side, v % side);
        let mut parents = Vec::new();
        if r > 0 {
            parents.push(v - side);
        }
        if c > 0 {
            parents.push(v - 1);
        }
        let cpt = match spec.grid_cpt {
            GridCpt::NoisyOr if !parents.is_empty() => noisy_or_cpt(v, &parents, &domains, spec.p_noise, spec.p_leak)?,
            _ => random_cpt(&mut rng, v, &parents, &domains)?,
        };
        cpts.push(cpt);
    }
    Ok(Network::new(domains, cpts)?)
}

/// Transmitted bits and channel observations of a coding instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingTruth {
    /// Information bits, variables `0..k`.
    pub input_bits: Vec<u8>,
    /// Channel outputs for the information bits followed by the parity bits.
    pub channel_outputs: Vec<f64>,
}

/// Linear block code: `k` information bits (variables `0..k`) with uniform
/// priors, `k` parity bits (variables `k..2k`) each the XOR of `p` distinct
/// information bits, and one normalized Gaussian-channel likelihood factor per
/// bit. Bit `b` is transmitted as `1 − 2b`.
pub fn gen_coding(spec: &GenSpec) -> Result<(Network, Evidence, CodingTruth), GenError> {
    if spec.family != Family::Coding {
        return Err(GenError::Invalid("expected the coding family".into()));
    }
    spec.validate()?;
    let k = spec.k;
    let mut rng = rng_for(spec.seed);
    let domains = vec![2; 2 * k];
    let mut cpts = Vec::with_capacity(2 * k);
    for v in 0..k {
        cpts.push(Factor::from_probabilities(vec![v], vec![2], &[0.5, 0.5])?);
    }
    let mut parity_parents = Vec::with_capacity(k);
    for j in 0..k {
        let mut ps = index::sample(&mut rng, k, spec.p).into_vec();
        ps.sort_unstable();
        let rows = 1usize << ps.len();
        let mut probs = Vec::with_capacity(rows * 2);
        for row in 0..rows {
            let parity = row.count_ones() & 1;
            probs.extend(if parity == 0 { [1.0, 0.0] } else { [0.0, 1.0] });
        }
        cpts.push(family_factor(k + j, &ps, &domains, &probs)?);
        parity_parents.push(ps);
    }
    let input_bits: Vec<u8> = (0..k).map(|_| rng.random_bool(0.5) as u8).collect();
    let parity_bits: Vec<u8> =
        parity_parents.iter().map(|ps| ps.iter().fold(0u8, |acc, &u| acc ^ input_bits[u])).collect();
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| GenError::Invalid(e.to_string()))?;
    let mut channel_outputs = Vec::with_capacity(2 * k);
    let mut likelihoods = Vec::with_capacity(2 * k);
    for (v, &b) in input_bits.iter().chain(&parity_bits).enumerate() {
        let y = (1.0 - 2.0 * b as f64) + noise.sample(&mut rng);
        channel_outputs.push(y);
        let log_density = |bit: f64| -(y - (1.0 - 2.0 * bit)).powi(2) / (2.0 * spec.sigma * spec.sigma);
        let (l0, l1) = (log_density(0.0), log_density(1.0));
        let top = l0.max(l1);
        let norm = top + ((l0 - top).exp() + (l1 - top).exp()).ln();
        likelihoods.push(Factor::new(vec![v], vec![2], vec![l0 - norm, l1 - norm])?);
    }
    let net = Network::with_extra_factors(domains, cpts, likelihoods)?;
    Ok((net, Evidence::new(), CodingTruth { input_bits, channel_outputs }))
}

/// Dispatches on the spec's family. Coding evidence and truth are discarded.
pub fn generate(spec: &GenSpec) -> Result<Network, GenError> {
    match spec.family {
        Family::Uniform => gen_uniform(spec),
        Family::NoisyOr => gen_noisyor(spec),
        Family::Grid => gen_grid(spec),
        Family::Coding => gen_coding(spec).map(|(net, _, _)| net),
    }
}

/// Forward-samples a complete assignment and keeps `count` random variables of
/// it as evidence, so the evidence has positive probability under the CPTs.
pub fn sample_evidence(net: &Network, count: usize, seed: u64) -> Result<Evidence, GenError> {
    let n = net.num_vars();
    if count > n {
        return Err(GenError::Invalid(format!("cannot observe {count} of {n} variables")));
    }
    let mut rng = rng_for(seed);
    let order = net.topological_order()?;
    let mut a = Assignment::empty(n);
    for v in order {
        let cpt = net.cpt(v);
        let k = net.domain(v);
        let weights: Vec<f64> = (0..k)
            .map(|x| {
                a.set(v, x);
                let lv = cpt.value_at(&a).expect("parents sampled first");
                if lv == LOG_ZERO {
                    0.0
                } else {
                    lv.exp()
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut r = rng.random::<f64>() * total;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        for (x, &w) in weights.iter().enumerate() {
            if w > 0.0 && r < w {
                pick = x;
                break;
            }
            r -= w;
        }
        a.set(v, pick);
    }
    let mut vars = index::sample(&mut rng, n, count).into_vec();
    vars.sort_unstable();
    Ok(vars.into_iter().map(|v| (v, a.get(v).expect("complete sample"))).collect())
}

/// Fraction of information bits decoded incorrectly; unassigned bits count as errors.
pub fn bit_error_rate(decoded: &Assignment, truth: &CodingTruth) -> f64 {
    let k = truth.input_bits.len();
    if k == 0 {
        return 0.0;
    }
    let wrong = truth
        .input_bits
        .iter()
        .enumerate()
        .filter(|&(v, &b)| v >= decoded.len() || decoded.get(v) != Some(b as usize))
        .count();
    wrong as f64 / k as f64
}
