mod common;

use common::{enumerate_mpe, small_batch};
use mpe_core::search::{bbbt_solve, bbmb_solve, SearchConfig};

const TOL: f64 = 1e-9;

#[test]
fn bbmb_matches_enumeration() {
    for (net, ev) in small_batch(100, 2, 1000) {
        let (exact, _) = enumerate_mpe(&net, &ev);
        let r = bbmb_solve(&net, &ev, &SearchConfig::new(2, 60.0)).unwrap();
        assert!(r.completed);
        assert!((r.best_log_value - exact).abs() < TOL, "{} vs {}", r.best_log_value, exact);
        assert!((net.evaluate(&r.best_assignment).unwrap() - r.best_log_value).abs() < TOL);
    }
}

#[test]
fn bbbt_matches_enumeration() {
    for (net, ev) in small_batch(100, 2, 2000) {
        let (exact, _) = enumerate_mpe(&net, &ev);
        let r = bbbt_solve(&net, &ev, &SearchConfig::new(2, 60.0)).unwrap();
        assert!(r.completed);
        assert!((r.best_log_value - exact).abs() < TOL, "{} vs {}", r.best_log_value, exact);
        for (v, val) in ev.iter() {
            assert_eq!(r.best_assignment.get(v), Some(val));
        }
    }
}

#[test]
fn node_counts_are_reproducible() {
    let (net, ev) = small_batch(1, 2, 77).pop().unwrap();
    let cfg = SearchConfig::new(2, 60.0);
    assert_eq!(
        bbbt_solve(&net, &ev, &cfg).unwrap().nodes_expanded,
        bbbt_solve(&net, &ev, &cfg).unwrap().nodes_expanded
    );
    assert_eq!(
        bbmb_solve(&net, &ev, &cfg).unwrap().nodes_expanded,
        bbmb_solve(&net, &ev, &cfg).unwrap().nodes_expanded
    );
}

#[test]
fn expired_clock_returns_best_so_far() {
    let (net, ev) = small_batch(1, 0, 5).pop().unwrap();
    let r = bbbt_solve(&net, &ev, &SearchConfig::new(1, 1e-12)).unwrap();
    assert!(!r.completed);
    assert!((net.evaluate(&r.best_assignment).unwrap() - r.best_log_value).abs() < TOL);
}
