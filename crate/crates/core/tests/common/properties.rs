//! Randomized invariant checks. Each check drives its own proptest runner so
//! both the `properties` test target and the acceptance runner can call it.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use mpe_core::elim::be_mpe;
use mpe_core::generators::{generate, sample_evidence, Family, GenSpec, GridCpt};
use mpe_core::graph::{build_bucket_tree, induced_width, min_fill_ordering, moralize};
use mpe_core::harness::{
    format_evidence, format_network, parse_evidence, parse_network, solve, Algorithm, SolveOptions,
};
use mpe_core::localsearch::{FeatureTable, LSParams, LocalSearch, Method, Step};
use mpe_core::model::{combine_max, multiply, Assignment, Evidence, Factor, Network, LOG_ZERO};
use mpe_core::propagation::build_join_graph;

/// Fixed domain sizes for the variables random factors draw from.
const DOMS: [usize; 5] = [2, 3, 2, 4, 3];

pub type Check = fn(u32) -> Result<(), String>;

/// Every property, by name.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("factor product commutes", factor_product_commutes as Check),
        ("combine_max matches multiply then maximize", combine_max_matches_two_step),
        ("max elimination is order independent", max_elimination_commutes),
        ("decompositions are valid", decompositions_are_valid),
        ("local search penalties never decrease", penalties_are_monotone),
        ("feature weights are well formed", feature_weights_are_well_formed),
        ("sampled evidence has positive probability", evidence_is_positive),
        ("network and evidence files round trip", io_round_trips),
        ("generators are deterministic and normalized", generators_are_sound),
        ("solver results are self consistent", solver_results_are_consistent),
    ]
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn factor() -> impl Strategy<Value = Factor> {
    Just((0..DOMS.len()).collect::<Vec<usize>>())
        .prop_shuffle()
        .prop_flat_map(|vars| (Just(vars), 0..=3usize))
        .prop_flat_map(|(vars, len)| {
            let scope: Vec<usize> = vars[..len].to_vec();
            let cells: usize = scope.iter().map(|&v| DOMS[v]).product();
            let entry = prop_oneof![1 => Just(LOG_ZERO), 6 => -8.0..0.5f64];
            (Just(scope), proptest::collection::vec(entry, cells))
        })
        .prop_map(|(scope, values)| {
            let dims = scope.iter().map(|&v| DOMS[v]).collect();
            Factor::new(scope, dims, values).unwrap()
        })
}

/// Every complete tuple over the fixed domains.
fn all_tuples() -> Vec<Assignment> {
    let mut out = vec![Vec::new()];
    for &d in &DOMS {
        out = out.into_iter().flat_map(|t: Vec<usize>| (0..d).map(move |x| [t.clone(), vec![x]].concat())).collect();
    }
    out.into_iter().map(Assignment::complete).collect()
}

fn same(a: f64, b: f64, tol: f64) -> bool {
    (a == LOG_ZERO && b == LOG_ZERO) || (a - b).abs() <= tol
}

fn factor_product_commutes(cases: u32) -> Result<(), String> {
    let tuples = all_tuples();
    run(cases, (factor(), factor(), factor()), |(f, g, h)| {
        let fg = multiply(&[&f, &g]);
        let gf = multiply(&[&g, &f]);
        let left = multiply(&[&fg, &h]);
        let right = multiply(&[&f, &multiply(&[&g, &h])]);
        for t in &tuples {
            let expect: f64 = [&f, &g].iter().map(|x| x.value_at(t).unwrap()).sum();
            prop_assert!(same(fg.value_at(t).unwrap(), gf.value_at(t).unwrap(), 1e-12));
            prop_assert!(same(fg.value_at(t).unwrap(), expect, 1e-12));
            prop_assert!(same(left.value_at(t).unwrap(), right.value_at(t).unwrap(), 1e-12));
        }
        Ok(())
    })
}

fn combine_max_matches_two_step(cases: u32) -> Result<(), String> {
    let elim = proptest::sample::subsequence((0..DOMS.len()).collect::<Vec<_>>(), 0..=DOMS.len());
    run(cases, (factor(), factor(), elim), |(f, g, elim)| {
        let fused = combine_max(&[&f, &g], &elim);
        let present: Vec<usize> = elim.iter().copied().filter(|&v| f.contains(v) || g.contains(v)).collect();
        let two_step = multiply(&[&f, &g]).max_eliminate(&present).unwrap();
        prop_assert_eq!(fused.scope(), two_step.scope());
        for (a, b) in fused.values().iter().zip(two_step.values()) {
            prop_assert!(same(*a, *b, 1e-12));
        }
        Ok(())
    })
}

fn max_elimination_commutes(cases: u32) -> Result<(), String> {
    let picked = factor().prop_filter("needs two variables", |f| f.scope().len() >= 2).prop_flat_map(|f| {
        let len = f.scope().len();
        (Just(f), proptest::sample::subsequence((0..len).collect::<Vec<_>>(), 2))
    });
    run(cases, picked, |(f, pos)| {
        let (a, b) = (f.scope()[pos[0]], f.scope()[pos[1]]);
        let ab = f.max_eliminate(&[a]).unwrap().max_eliminate(&[b]).unwrap();
        let ba = f.max_eliminate(&[b]).unwrap().max_eliminate(&[a]).unwrap();
        let both = f.max_eliminate(&[a, b]).unwrap();
        prop_assert_eq!(ab.scope(), ba.scope());
        for ((x, y), z) in ab.values().iter().zip(ba.values()).zip(both.values()) {
            prop_assert!(same(*x, *y, 1e-12) && same(*x, *z, 1e-12));
        }
        Ok(())
    })
}

/// A small random network from one of the structured families.
fn network() -> impl Strategy<Value = Network> {
    (0..4u8, 4..=14usize, 2..=3usize, any::<u64>()).prop_map(|(fam, n, k, seed)| {
        let spec = match fam {
            0 => GenSpec::uniform(n, k, n - 2, 2, seed),
            1 => GenSpec::noisy_or(n, k, n - 1, 3.min(n - 1), seed),
            2 => GenSpec { grid_cpt: GridCpt::NoisyOr, ..GenSpec::grid(9, k, seed) },
            _ => GenSpec::grid(16, 2, seed),
        };
        generate(&spec).unwrap()
    })
}

fn decompositions_are_valid(cases: u32) -> Result<(), String> {
    run(cases, (network(), any::<u64>(), 1..=4usize), |(net, seed, i)| {
        let g = moralize(&net);
        let ord = min_fill_ordering(&g, seed);
        let mut sorted = ord.order().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..net.num_vars()).collect::<Vec<_>>());
        prop_assert_eq!(ord.induced_width(), induced_width(&g, ord.order()));

        let scopes: Vec<&[usize]> = net.factors().iter().map(|f| f.scope()).collect();
        let td = build_bucket_tree(&net, &ord).map_err(|e| TestCaseError::fail(e.to_string()))?;
        td.validate(&scopes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(td.tree_width(), ord.induced_width());

        let jg = build_join_graph(&net, &ord, i);
        jg.validate(&scopes).map_err(TestCaseError::fail)?;
        prop_assert!(jg.is_connected());
        let widest = scopes.iter().map(|s| s.len()).max().unwrap_or(0);
        for c in 0..jg.num_clusters() {
            prop_assert!(jg.cluster_vars(c).len() <= i.max(widest));
        }
        Ok(())
    })
}

fn penalties_are_monotone(cases: u32) -> Result<(), String> {
    run(cases, (network(), any::<u64>(), any::<bool>()), |(net, seed, dlm)| {
        let method = if dlm { Method::Dlm } else { Method::Gls };
        let params = LSParams { seed, ..LSParams::default() };
        let mut ls = LocalSearch::new(&net, &Evidence::new(), method, &params).unwrap();
        let snapshot = |ls: &LocalSearch| -> Vec<Vec<f64>> {
            let ft = ls.features();
            (0..ft.num_families()).map(|k| ft.penalties(k).to_vec()).collect()
        };
        let mut prev = snapshot(&ls);
        prop_assert!(prev.iter().flatten().all(|&l| l == 0.0));
        for _ in 0..300 {
            let step = ls.step();
            let now = snapshot(&ls);
            let grew = prev.iter().flatten().zip(now.iter().flatten()).filter(|(a, b)| b > a).count();
            prop_assert!(prev.iter().flatten().zip(now.iter().flatten()).all(|(a, b)| b >= a));
            match step {
                Step::Penalized { raised, before, after } => {
                    prop_assert!(raised >= 1);
                    prop_assert_eq!(grew, raised);
                    prop_assert!(after > before);
                }
                Step::Stuck => break,
                _ => prop_assert_eq!(grew, 0),
            }
            prev = now;
        }
        Ok(())
    })
}

fn feature_weights_are_well_formed(cases: u32) -> Result<(), String> {
    run(cases, network(), |net| {
        let w_max = 1e6;
        let ft = FeatureTable::new(&net, &Evidence::new(), w_max).unwrap();
        for (k, f) in ft.factors().iter().enumerate() {
            for (idx, &lp) in f.values().iter().enumerate() {
                let w = ft.weight(k, idx);
                prop_assert!((0.0..=w_max).contains(&w));
                if lp == 0.0 {
                    prop_assert_eq!(w, 0.0);
                }
                if lp == LOG_ZERO {
                    prop_assert_eq!(w, w_max);
                }
                prop_assert_eq!(ft.penalty(k, idx), 0.0);
            }
        }
        Ok(())
    })
}

fn evidence_is_positive(cases: u32) -> Result<(), String> {
    run(cases, (network(), any::<u64>()), |(net, seed)| {
        let count = seed as usize % (net.num_vars() + 1);
        let ev = sample_evidence(&net, count, seed).unwrap();
        prop_assert_eq!(ev.len(), count);
        let ord = min_fill_ordering(&moralize(&net), 0);
        let (value, a) = be_mpe(&net, &ev, &ord).unwrap();
        prop_assert!(value.is_finite());
        for (v, x) in ev.iter() {
            prop_assert_eq!(a.get(v), Some(x));
        }
        Ok(())
    })
}

fn io_round_trips(cases: u32) -> Result<(), String> {
    run(cases, (network(), any::<u64>()), |(net, seed)| {
        let back = parse_network(&format_network(&net)).unwrap();
        prop_assert_eq!(back.domains(), net.domains());
        prop_assert_eq!(back.factors().len(), net.factors().len());
        for (f, g) in net.factors().iter().zip(back.factors()) {
            prop_assert_eq!(f.scope(), g.scope());
            for (a, b) in f.values().iter().zip(g.values()) {
                prop_assert!(same(a.exp(), b.exp(), 1e-12));
            }
        }
        prop_assert_eq!(format_network(&back), format_network(&net));

        let ev = sample_evidence(&net, seed as usize % net.num_vars(), seed).unwrap();
        prop_assert_eq!(parse_evidence(&format_evidence(&ev), &net).unwrap(), ev);
        Ok(())
    })
}

fn generators_are_sound(cases: u32) -> Result<(), String> {
    let family = prop_oneof![Just(Family::Uniform), Just(Family::NoisyOr)];
    run(cases, (family, 3..=30usize, 2..=4usize, 1..=4usize, any::<u64>()), |(family, n, k, p, seed)| {
        let p = p.min(n - 1);
        let c = n / 2 + seed as usize % (n - n / 2);
        let spec = GenSpec { family, n, k, c, p, seed, ..GenSpec::default() };
        let net = generate(&spec).unwrap();
        prop_assert_eq!(&net, &generate(&spec).unwrap());
        prop_assert!(net.topological_order().is_ok());
        // the first variable in the order can be chosen but has no candidates
        let with_parents = (0..n).filter(|&v| !net.parents(v).is_empty()).count();
        prop_assert!(with_parents == c || with_parents + 1 == c);
        for v in 0..n {
            let pa = net.parents(v);
            prop_assert!(pa.is_empty() || pa.len() == p.min(v));
            prop_assert!(pa.iter().all(|&u| u < v));
            let cpt = net.cpt(v);
            for row in cpt.values().chunks(k) {
                let total: f64 = row.iter().map(|x| x.exp()).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
        Ok(())
    })
}

fn solver_results_are_consistent(cases: u32) -> Result<(), String> {
    let algorithm = proptest::sample::select(Algorithm::ALL.to_vec());
    run(cases, (network(), algorithm, any::<u64>()), |(net, alg, seed)| {
        let ev = sample_evidence(&net, seed as usize % 4, seed).unwrap();
        let opts = SolveOptions {
            time_limit: 5.0,
            seed,
            params: LSParams { max_flips: Some(500), ..LSParams::default() },
            ..SolveOptions::default()
        };
        let r = solve(alg, 2, &net, &ev, &opts).unwrap();
        prop_assert!(same(net.evaluate(&r.best_assignment).unwrap(), r.best_log_value, 1e-9));
        for (v, x) in ev.iter() {
            prop_assert_eq!(r.best_assignment.get(v), Some(x));
        }
        for w in r.anytime_trace.windows(2) {
            prop_assert!(w[1].0 > w[0].0 && w[1].1 > w[0].1);
        }
        let ord = min_fill_ordering(&moralize(&net), 0);
        let (exact, _) = be_mpe(&net, &ev, &ord).unwrap();
        prop_assert!(r.best_log_value <= exact + 1e-9);
        if r.completed {
            prop_assert!(same(r.best_log_value, exact, 1e-9));
        }
        Ok(())
    })
}
