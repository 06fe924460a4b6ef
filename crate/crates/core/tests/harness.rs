use rangepoison::harness::*;
use rangepoison::{Interval, RangeQuery};
use tempfile::tempdir;

fn small(protocol: Protocol) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(protocol, 1.0);
    c.users = 20_000;
    c.seeds = vec![7, 8];
    c.query.count = 3;
    c.defense.enabled = true;
    if protocol == Protocol::Hdg {
        c.hdg.d = 3;
    }
    c
}

#[test]
fn no_attack_leaves_response_unchanged() {
    for protocol in [Protocol::Ahead, Protocol::Hdg] {
        let c = small(protocol);
        let out = run_experiment(&c, Some(2)).unwrap();
        assert_eq!(out.trials.len(), 6);
        for t in &out.trials {
            assert_eq!(t.poisoned_response, Some(t.honest_response));
            assert_eq!(t.efficiency, None);
            assert_eq!(t.fake_users, 0);
        }
        assert_eq!(out.summary.mean_efficiency, None);
    }
}

#[test]
fn fixed_seed_gives_identical_files() {
    let mut c = small(Protocol::Ahead);
    c.rho = 0.05;
    c.attack.kind = AttackKind::Aot;
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    write_outputs(&run_experiment(&c, Some(1)).unwrap(), a.path()).unwrap();
    write_outputs(&run_experiment(&c, Some(3)).unwrap(), b.path()).unwrap();
    for f in ["results.jsonl", "summary.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn results_round_trip() {
    let mut c = small(Protocol::Hdg);
    c.rho = 0.1;
    c.attack.kind = AttackKind::Aog;
    let out = run_experiment(&c, None).unwrap();
    let dir = tempdir().unwrap();
    write_outputs(&out, dir.path()).unwrap();
    let back = read_results(&dir.path().join("results.jsonl")).unwrap();
    assert_eq!(back, out.trials);
}

#[test]
fn poisoning_raises_the_target() {
    for (protocol, attack) in [(Protocol::Ahead, AttackKind::Aot), (Protocol::Hdg, AttackKind::Aog)] {
        let mut c = small(protocol);
        c.rho = 0.1;
        c.attack.kind = attack;
        let out = run_experiment(&c, None).unwrap();
        for t in &out.trials {
            assert!(t.poisoned_response.unwrap() >= t.honest_response, "{t:?}");
            let e = t.efficiency.unwrap();
            assert!((e - (t.poisoned_response.unwrap() - t.honest_response) / 0.1).abs() < 1e-12);
        }
    }
}

#[test]
fn honest_full_domain_response_is_one() {
    use rand::SeedableRng;
    use rangepoison::{ahead, hdg};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let recs = gen_synthetic(DataKind::Gaussian, 20_000, 3, 32.0, 8.0, 64, &mut rng).unwrap();
    let cfg = hdg::HdgConfig { d: 3, ..hdg::HdgConfig::new(1.0) };
    let run = hdg::run_hdg(&recs, &cfg, None, 0.0, &mut rng).unwrap();
    for a in 0..3 {
        let q = RangeQuery::new(vec![(a, Interval::new(0, 64))], 64).unwrap();
        assert!((hdg::estimate_query(&run.grids, &q).unwrap() - 1.0).abs() < 1e-9);
    }
    let values: Vec<usize> = recs.iter().map(|r| r[0] * 16).collect();
    let run = ahead::run_ahead(&values, &ahead::AheadConfig::new(1.0), None, 0.0, &mut rng).unwrap();
    let q = RangeQuery::one_dim(0, 1024, 1024).unwrap();
    assert!((ahead::estimate_query(&run.tree, &q).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn csv_experiment_runs() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut text = String::from("x,y\n");
    for i in 0..3000 {
        text.push_str(&format!("{},{}\n", i % 97, (i * 7) % 13));
    }
    text.push_str("bad,1\n");
    std::fs::write(&path, text).unwrap();
    let mut c = small(Protocol::Ahead);
    c.dataset.kind = DataKind::Csv;
    c.dataset.path = Some(path);
    c.dataset.columns = vec!["x".into(), "y".into()];
    c.ahead.domain = 128;
    let out = run_experiment(&c, None).unwrap();
    assert_eq!(out.dropped_rows, 1);
    assert_eq!(out.trials.len(), 6);
}

#[test]
fn infeasible_configs_report_precisely() {
    let mut c = small(Protocol::Hdg);
    c.query.dims = Some(4);
    let e = run_experiment(&c, None).unwrap_err();
    assert!(e.to_string().contains("query.dims"), "{e}");
    assert_eq!(e.exit_code(), 2);
}
