mod common;

use common::criteria;
use mpe_core::generators::{generate, sample_evidence, GenSpec};
use mpe_core::harness::{
    read_evidence, read_network, read_results, summarize, write_evidence, write_network, write_results,
    ExperimentConfig,
};

#[test]
fn grid_network_survives_files() {
    let dir = tempfile::tempdir().unwrap();
    let net = generate(&GenSpec::grid(9, 3, 4)).unwrap();
    let ev = sample_evidence(&net, 3, 4).unwrap();
    let (np, ep) = (dir.path().join("grid.uai"), dir.path().join("grid.evid"));
    write_network(&net, &np).unwrap();
    write_evidence(&ev, &ep).unwrap();
    let back = read_network(&np).unwrap();
    assert_eq!(back.domains(), net.domains());
    for (f, g) in net.factors().iter().zip(back.factors()) {
        assert_eq!(f.scope(), g.scope());
        for (a, b) in f.values().iter().zip(g.values()) {
            assert!((a.exp() - b.exp()).abs() < 1e-12);
        }
    }
    assert_eq!(read_evidence(&ep, &back).unwrap(), ev);
}

#[test]
fn results_round_trip_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = criteria::mixed_config(1, 7);
    let path = dir.path().join("rows.csv");
    let rows = criteria::run_persisted(&cfg, 1, &path);
    let mut failures = Vec::new();
    criteria::audit_rows(&cfg, &rows, &mut failures);
    assert!(failures.is_empty(), "{failures:?}");
    let again = read_results(&path).unwrap();
    assert_eq!(rows, again);
    write_results(&again, dir.path().join("copy.csv")).unwrap();
    assert!(!summarize(&rows, f64::INFINITY).is_empty());
}

#[test]
fn batches_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let o = criteria::determinism(1, dir.path());
    assert!(o.pass, "{}", o.detail);
}

#[test]
fn shipped_configs_parse() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap();
            assert!(!cfg.instance_specs().is_empty());
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
