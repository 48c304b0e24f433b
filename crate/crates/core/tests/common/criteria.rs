//! Acceptance checks, parameterized by batch size so the regular test targets
//! can run scaled-down versions and the acceptance runner the full ones.

use std::path::Path;
use std::time::Instant;

use mpe_core::elim::{be_mpe, cte_singletons, mbe_compile, mbte};
use mpe_core::generators::{bit_error_rate, gen_coding, generate, sample_evidence, GenSpec, GridCpt};
use mpe_core::graph::{build_bucket_tree, min_fill_ordering, moralize, Ordering};
use mpe_core::harness::{
    materialize, read_results, run_experiment_with_jobs, write_results, Algorithm, AlgorithmSpec, ExperimentConfig,
    ResultRow,
};
use mpe_core::localsearch::{dlm_solve, gls_solve, sls_solve, LSParams};
use mpe_core::model::{Evidence, Network, Problem, LOG_ZERO};
use mpe_core::propagation::{ijgp_mpe, DEFAULT_ITERATIONS};
use mpe_core::search::{bbbt_solve, bbmb_solve, search_ordering, SearchConfig, SolveResult};

use super::{enumerate_mpe, enumerate_singletons, properties, small_batch};

const TOL: f64 = 1e-9;

/// Result of one criterion.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a == LOG_ZERO && b == LOG_ZERO) || (a - b).abs() <= TOL
}

fn moral_order(net: &Network) -> Ordering {
    min_fill_ordering(&moralize(net), 0)
}

fn median(mut xs: Vec<u64>) -> f64 {
    xs.sort_unstable();
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        xs[n / 2] as f64
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) as f64 / 2.0
    }
}

/// Seeds of the shared oracle batch.
const ORACLE_BASE: u64 = 10_000;

/// Exact algorithms agree with enumeration.
pub fn oracle_exactness(count: usize) -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let cfg = SearchConfig::new(2, 600.0);
    for (idx, (net, ev)) in small_batch(count, 2, ORACLE_BASE).into_iter().enumerate() {
        let (exact, _) = enumerate_mpe(&net, &ev);
        let ord = moral_order(&net);
        let be = be_mpe(&net, &ev, &ord).map(|r| r.0);
        let td = build_bucket_tree(&net, &ord).expect("bucket tree");
        let cte = cte_singletons(&net, &td, &ev)
            .map(|z| (0..net.num_vars()).filter_map(|v| z.max_value(v)).fold(LOG_ZERO, f64::max));
        let bbbt = bbbt_solve(&net, &ev, &cfg);
        let bbmb = bbmb_solve(&net, &ev, &cfg);
        let checks = [
            ("be", be.ok()),
            ("cte", cte.ok()),
            ("bbbt", bbbt.ok().filter(|r| r.completed).map(|r| r.best_log_value)),
            ("bbmb", bbmb.ok().filter(|r| r.completed).map(|r| r.best_log_value)),
        ];
        for (name, got) in checks {
            if !got.is_some_and(|g| close(g, exact)) {
                failures.push(format!("instance {idx} {name}: {got:?} vs {exact}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 120.0;
    Outcome::new(pass, format!("{count} instances, {} mismatches, {secs:.1}s{}", failures.len(), first(&failures)))
}

fn first(failures: &[String]) -> String {
    failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
}

/// Mini-bucket bounds never fall below the exact quantities.
pub fn upper_bound_soundness(count: usize) -> Outcome {
    let mut failures = Vec::new();
    let mut checked = 0usize;
    for (idx, (net, ev)) in small_batch(count, 2, ORACLE_BASE).into_iter().enumerate() {
        let (exact, _) = enumerate_mpe(&net, &ev);
        let z = enumerate_singletons(&net, &ev);
        let ord = moral_order(&net);
        let td = build_bucket_tree(&net, &ord).expect("bucket tree");
        let partial = ev.to_assignment(net.num_vars());
        for i in 1..=3 {
            match mbe_compile(&net, &ev, &ord, i) {
                Ok((bound, _)) if bound >= exact - TOL => {}
                other => failures.push(format!("instance {idx} mbe({i}): {:?} < {exact}", other.map(|o| o.0))),
            }
            let mz = match mbte(&net, &td, &partial, i) {
                Ok(mz) => mz,
                Err(e) => {
                    failures.push(format!("instance {idx} mbte({i}): {e}"));
                    continue;
                }
            };
            for (v, zv) in z.iter().enumerate() {
                let Some(table) = mz.get(v) else { continue };
                for (x, (&bound, &truth)) in table.iter().zip(zv).enumerate() {
                    checked += 1;
                    if bound < truth - TOL {
                        failures.push(format!("instance {idx} mbte({i}) z[{v}][{x}]: {bound} < {truth}"));
                    }
                }
            }
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!("{count} instances, {checked} singleton entries, {} violations{}", failures.len(), first(&failures)),
    )
}

/// With i above the induced width the approximations become exact.
pub fn exactness_collapse(count: usize) -> Outcome {
    let mut failures = Vec::new();
    let (mut used, mut ijgp_checked) = (0usize, 0usize);
    for (idx, (net, ev)) in small_batch(count, 2, ORACLE_BASE).into_iter().enumerate() {
        let ord = moral_order(&net);
        let w = ord.induced_width();
        if w > 6 {
            continue;
        }
        used += 1;
        let (exact, args) = enumerate_mpe(&net, &ev);
        let td = build_bucket_tree(&net, &ord).expect("bucket tree");
        let cte = cte_singletons(&net, &td, &ev).expect("cte");
        let partial = ev.to_assignment(net.num_vars());
        for i in [w + 1, w + 2] {
            let bound = mbe_compile(&net, &ev, &ord, i).map(|r| r.0);
            if !bound.as_ref().is_ok_and(|&b| close(b, exact)) {
                failures.push(format!("instance {idx} mbe({i}) = {bound:?}, exact {exact}"));
            }
            let mz = mbte(&net, &td, &partial, i).expect("mbte");
            for v in 0..net.num_vars() {
                let same = match (mz.get(v), cte.get(v)) {
                    (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| close(*x, *y)),
                    (None, None) => true,
                    _ => false,
                };
                if !same {
                    failures.push(format!("instance {idx} mbte({i}) differs from cte at variable {v}"));
                }
            }
        }
        if args.len() == 1 {
            let problem = Problem::new(&net, &ev).expect("problem");
            let wj = search_ordering(&problem, 0).induced_width();
            for i in [wj + 1, wj + 2] {
                ijgp_checked += 1;
                let got = ijgp_mpe(&net, &ev, i, DEFAULT_ITERATIONS).map(|r| r.best_log_value);
                if !got.as_ref().is_ok_and(|&g| close(g, exact)) {
                    failures.push(format!("instance {idx} ijgp({i}) = {got:?}, exact {exact}"));
                }
            }
        }
    }
    let pass = failures.is_empty() && used > 0;
    Outcome::new(
        pass,
        format!(
            "{used} instances with w* <= 6, {ijgp_checked} ijgp runs, {} failures{}",
            failures.len(),
            first(&failures)
        ),
    )
}

/// Random instance with sampled evidence; the generator seed also seeds the evidence.
fn random_instance(n: usize, k: usize, c: usize, p: usize, evidence: usize, seed: u64) -> (Network, Evidence) {
    let net = generate(&GenSpec::uniform(n, k, c, p, seed)).expect("generator");
    let ev = sample_evidence(&net, evidence, seed ^ 0xe1de_0ce5).expect("evidence");
    (net, ev)
}

/// BBBT(2) expands far fewer nodes than BBMB(2).
pub fn pruning_power(count: usize) -> Outcome {
    let cfg = SearchConfig::new(2, 3600.0);
    let (mut bbbt, mut bbmb) = (Vec::new(), Vec::new());
    let mut incomplete = 0;
    for s in 0..count as u64 {
        let (net, ev) = random_instance(30, 3, 27, 2, 10, 40_000 + s);
        let a = bbbt_solve(&net, &ev, &cfg);
        let b = bbmb_solve(&net, &ev, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) if a.completed && b.completed => {
                bbbt.push(a.nodes_expanded);
                bbmb.push(b.nodes_expanded);
            }
            _ => incomplete += 1,
        }
    }
    let (mt, mm) = (median(bbbt), median(bbmb));
    let pass = incomplete == 0 && mt < 0.1 * mm;
    Outcome::new(
        pass,
        format!("median nodes bbbt(2) {mt} vs bbmb(2) {mm} over {count} instances, {incomplete} incomplete"),
    )
}

/// Local search success rates on random K=2 networks.
pub fn local_search_rates(count: usize, time_limit: f64) -> Outcome {
    let solved_ratio: f64 = 0.95;
    let mut solved = [0usize; 3];
    for s in 0..count as u64 {
        let seed = 50_000 + s;
        let (net, ev) = random_instance(40, 2, 36, 2, 10, seed);
        let (exact, _) = be_mpe(&net, &ev, &moral_order(&net)).expect("exact");
        let params = LSParams { seed, target_log_value: Some(exact + solved_ratio.ln()), ..LSParams::default() };
        let solvers: [fn(&Network, &Evidence, f64, &LSParams) -> _; 3] = [gls_solve, dlm_solve, sls_solve];
        for (slot, f) in solvers.iter().enumerate() {
            let r: SolveResult = f(&net, &ev, time_limit, &params).expect("local search");
            if (r.best_log_value - exact).exp() >= solved_ratio {
                solved[slot] += 1;
            }
        }
    }
    let frac = solved.map(|x| x as f64 / count as f64);
    let pass = frac[0] >= 0.9 && frac[0] >= frac[1] && frac[0] >= frac[2];
    Outcome::new(
        pass,
        format!(
            "solved within {time_limit}s: gls {:.2}, dlm {:.2}, sls {:.2} over {count} instances",
            frac[0], frac[1], frac[2]
        ),
    )
}

/// Exact and IBP decoding error rates on coding networks.
pub fn coding_ber(count: usize) -> Outcome {
    let start = Instant::now();
    let sigmas = [0.32, 0.40, 0.52];
    let mut exact_ber = [0.0; 3];
    let mut ibp_ber = 0.0;
    for (slot, &sigma) in sigmas.iter().enumerate() {
        for s in 0..count as u64 {
            let (net, ev, truth) = gen_coding(&GenSpec::coding(16, 4, sigma, 60_000 + s)).expect("coding");
            let (_, a) = be_mpe(&net, &ev, &moral_order(&net)).expect("exact decoder");
            exact_ber[slot] += bit_error_rate(&a, &truth) / count as f64;
            if slot == 0 {
                let r = mpe_core::propagation::ibp_mpe(&net, &ev, DEFAULT_ITERATIONS).expect("ibp");
                ibp_ber += bit_error_rate(&r.best_assignment, &truth) / count as f64;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass =
        exact_ber[0] < exact_ber[1] && exact_ber[1] < exact_ber[2] && ibp_ber <= 2.0 * exact_ber[0] && secs < 300.0;
    Outcome::new(
        pass,
        format!(
            "exact ber {:.6} / {:.6} / {:.6} at sigma 0.32 / 0.40 / 0.52, ibp {:.6} at 0.32, {count} seeds, {secs:.1}s",
            exact_ber[0], exact_ber[1], exact_ber[2], ibp_ber
        ),
    )
}

/// A batch touching every algorithm and generator family. Local search runs
/// on flip budgets so the batch is reproducible.
pub fn mixed_config(instances: usize, seed_base: u64) -> ExperimentConfig {
    let ls = LSParams { max_flips: Some(3000), ..LSParams::default() };
    let mut algorithms: Vec<AlgorithmSpec> = Algorithm::ALL
        .iter()
        .map(|&a| if a.uses_i_bound() { AlgorithmSpec::with_i_bounds(a, &[2, 3]) } else { AlgorithmSpec::new(a) })
        .collect();
    for a in &mut algorithms {
        a.params = ls;
    }
    ExperimentConfig {
        generators: vec![
            GenSpec::uniform(14, 3, 12, 2, 0),
            GenSpec::noisy_or(16, 2, 14, 3, 0),
            GenSpec { grid_cpt: GridCpt::NoisyOr, ..GenSpec::grid(16, 2, 0) },
            GenSpec::coding(8, 3, 0.4, 0),
        ],
        inputs: Vec::new(),
        algorithms,
        time_limit: 60.0,
        instances,
        evidence: 3,
        seed_base,
        exact: true,
        memory_cap: mpe_core::elim::DEFAULT_MEMORY_CAP,
        jobs: 1,
        output: None,
    }
}

/// Checks persisted rows against freshly regenerated instances.
pub fn audit_rows(cfg: &ExperimentConfig, rows: &[ResultRow], failures: &mut Vec<String>) {
    let specs = cfg.instance_specs();
    for r in rows {
        let tag = format!("instance {} {}", r.instance, r.label());
        if let Some(e) = &r.error {
            failures.push(format!("{tag}: error {e}"));
            continue;
        }
        if let Some(opt) = r.opt_ratio {
            if opt > 1.0 + TOL {
                failures.push(format!("{tag}: opt ratio {opt}"));
            }
        }
        let inst = materialize(&specs[r.instance], cfg.evidence).expect("regenerate");
        let a = mpe_core::model::Assignment::complete(r.assignment.clone());
        match inst.net.evaluate(&a) {
            Ok(v) if close(v, r.best_log) => {}
            other => failures.push(format!("{tag}: assignment evaluates to {other:?}, reported {}", r.best_log)),
        }
        for (v, x) in inst.ev.iter() {
            if r.assignment.get(v) != Some(&x) {
                failures.push(format!("{tag}: evidence on {v} changed"));
            }
        }
    }
}

/// Runs `cfg`, persists it under `dir`, and reads it back.
pub fn run_persisted(cfg: &ExperimentConfig, jobs: usize, path: &Path) -> Vec<ResultRow> {
    let rows = run_experiment_with_jobs(cfg, jobs).expect("experiment");
    write_results(&rows, path).expect("write results");
    read_results(path).expect("read results")
}

/// Every persisted row is sound.
pub fn solver_soundness(instances: usize, dir: &Path) -> Outcome {
    let mut failures = Vec::new();
    let mut total = 0;
    for (b, seed_base) in [0u64, 500].into_iter().enumerate() {
        let cfg = mixed_config(instances, seed_base);
        let rows = run_persisted(&cfg, 1, &dir.join(format!("soundness{b}.csv")));
        total += rows.len();
        audit_rows(&cfg, &rows, &mut failures);
    }
    Outcome::new(failures.is_empty(), format!("{total} rows audited, {} failures{}", failures.len(), first(&failures)))
}

/// The result table with the timing columns removed.
pub fn strip_timing(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).expect("open results");
    let headers = reader.headers().expect("headers").clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| !matches!(&headers[i], "elapsed" | "solve_time")).collect();
    let mut out = vec![keep.iter().map(|&i| headers[i].to_string()).collect()];
    for rec in reader.records() {
        let rec = rec.expect("record");
        out.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    out
}

/// Two runs of the same batch agree; one serial, one on a thread pool.
pub fn determinism(instances: usize, dir: &Path) -> Outcome {
    let cfg = mixed_config(instances, 900);
    let (a, b) = (dir.join("first.csv"), dir.join("second.csv"));
    let rows = run_persisted(&cfg, 1, &a);
    run_persisted(&cfg, 0, &b);
    let (ta, tb) = (strip_timing(&a), strip_timing(&b));
    let sidecar = |p: &Path| std::fs::read_to_string(p.with_extension("assignments.csv")).unwrap_or_default();
    let pass = ta == tb && ta.len() == rows.len() + 1 && sidecar(&a) == sidecar(&b);
    Outcome::new(pass, format!("{} rows compared, tables identical: {}", rows.len(), ta == tb))
}

/// All randomized invariant suites.
pub fn property_suites(cases: u32) -> Outcome {
    let mut failures = Vec::new();
    let all = properties::all();
    for (name, check) in &all {
        if let Err(e) = check(cases) {
            failures.push(format!("{name}: {e}"));
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!("{} suites x {cases} cases, {} failed{}", all.len(), failures.len(), first(&failures)),
    )
}
