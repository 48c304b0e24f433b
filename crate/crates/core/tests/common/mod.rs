//! Brute-force reference computations shared by the integration tests.
//! Everything here enumerates complete assignments directly and only relies
//! on the library for reading CPT tables.

#![allow(dead_code)]

pub mod criteria;
pub mod properties;

use mpe_core::generators::{gen_noisyor, gen_uniform, sample_evidence, GenSpec};
use mpe_core::model::{Evidence, Network, LOG_ZERO};

/// Log probability of a complete tuple, computed from raw table lookups.
pub fn log_prob(net: &Network, x: &[usize]) -> f64 {
    let mut total = 0.0;
    for f in net.factors() {
        let mut idx = 0;
        for (&v, &d) in f.scope().iter().zip(f.dims()) {
            idx = idx * d + x[v];
        }
        total += f.values()[idx];
    }
    total
}

/// Calls `visit` on every complete tuple consistent with `ev`.
pub fn for_each_tuple(net: &Network, ev: &Evidence, mut visit: impl FnMut(&[usize])) {
    let n = net.num_vars();
    let free: Vec<usize> = (0..n).filter(|&v| !ev.contains(v)).collect();
    let mut x = vec![0; n];
    for (v, val) in ev.iter() {
        x[v] = val;
    }
    loop {
        visit(&x);
        let mut k = free.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            let v = free[k];
            x[v] += 1;
            if x[v] < net.domain(v) {
                break;
            }
            x[v] = 0;
        }
    }
}

/// Exact MPE value and its maximizers (all of them, within 1e-12).
pub fn enumerate_mpe(net: &Network, ev: &Evidence) -> (f64, Vec<Vec<usize>>) {
    let mut best = LOG_ZERO;
    let mut args: Vec<Vec<usize>> = Vec::new();
    for_each_tuple(net, ev, |x| {
        let p = log_prob(net, x);
        if p > best + 1e-12 {
            best = p;
            args = vec![x.to_vec()];
        } else if (p - best).abs() <= 1e-12 {
            args.push(x.to_vec());
        }
    });
    (best, args)
}

/// z_j(x) for every variable: best log probability of a tuple with X_j = x.
/// Evidence variables get LOG_ZERO outside their observed value.
pub fn enumerate_singletons(net: &Network, ev: &Evidence) -> Vec<Vec<f64>> {
    let mut z: Vec<Vec<f64>> = (0..net.num_vars()).map(|v| vec![LOG_ZERO; net.domain(v)]).collect();
    for_each_tuple(net, ev, |x| {
        let p = log_prob(net, x);
        for (v, &val) in x.iter().enumerate() {
            if p > z[v][val] {
                z[v][val] = p;
            }
        }
    });
    z
}

/// The small oracle batch: alternating uniform / noisy-OR networks with
/// N ≤ 12, K ≤ 3, P = 2 and `evidence` observed variables.
pub fn small_batch(count: usize, evidence: usize, base_seed: u64) -> Vec<(Network, Evidence)> {
    (0..count as u64)
        .map(|s| {
            let seed = base_seed + s;
            let n = 6 + (seed % 7) as usize;
            let k = 2 + (seed / 7 % 2) as usize;
            let k = if n > 10 && k == 3 { 2 } else { k };
            let c = n - 1 - (seed % 3) as usize;
            let net = if s % 2 == 0 {
                gen_uniform(&GenSpec::uniform(n, k, c, 2, seed)).unwrap()
            } else {
                gen_noisyor(&GenSpec::noisy_or(n, k, c, 2, seed)).unwrap()
            };
            let ev = sample_evidence(&net, evidence, seed ^ 0x5eed).unwrap();
            (net, ev)
        })
        .collect()
}
