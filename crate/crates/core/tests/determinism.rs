use byzgossip_core::sim::{run, run_to_dir, SimConfig, METRICS_FILE};

fn config() -> SimConfig {
    SimConfig::default()
        .with_overrides(&[
            "n=80",
            "rounds=30",
            "byzantine_fraction=0.2",
            "attack.kind=alie",
            "aggregator=cs",
            "learning.eval_every=5",
            "seed=42",
        ])
        .unwrap()
}

#[test]
fn same_seed_gives_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to_dir(config(), a.path()).unwrap();
    run_to_dir(config(), b.path()).unwrap();
    let left = std::fs::read(a.path().join(METRICS_FILE)).unwrap();
    let right = std::fs::read(b.path().join(METRICS_FILE)).unwrap();
    assert!(!left.is_empty());
    assert_eq!(left, right);
}

#[test]
fn config_echo_reproduces_the_run() {
    let first = run(config()).unwrap();
    let echoed = SimConfig::from_value(first.config.to_value()).unwrap();
    let second = run(echoed).unwrap();
    assert_eq!(first.rows, second.rows);
    assert_eq!(first.final_f1, second.final_f1);
}

#[test]
fn different_seeds_diverge() {
    let a = run(config()).unwrap();
    let b = run(config().with_overrides(&["seed=43"]).unwrap()).unwrap();
    assert_ne!(a.rows, b.rows);
}
