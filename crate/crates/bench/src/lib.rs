//! Criterion benchmarks for the protocol and attack kernels.

use criterion::{black_box, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rangepoison::ahead::{run_ahead, AheadConfig};
use rangepoison::attacks::{aot_assignment_bruteforce, aot_assignment_fast, AotProblem};
use rangepoison::defense::{max_load_cdf, tree_detect_counts, TreeDefenseParams};
use rangepoison::fo::olh::{olh_aggregate, olh_perturb, OlhParams};
use rangepoison::fo::oue::{OueParams, OueTally};
use rangepoison::fo::HashFamily;
use rangepoison::harness::{gen_synthetic, DataKind};
use rangepoison::postprocess::norm_sub;

fn problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> AotProblem {
    let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..1.0)).collect();
    let mut freqs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let s: f64 = freqs.iter().sum();
    freqs.iter_mut().for_each(|f| *f /= s);
    AotProblem::new(&coeffs, &freqs, 10_000, m, &OueParams::new(1.0, n).unwrap()).unwrap()
}

pub fn postprocess(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("norm_sub");
    for n in [64, 1024, 16384] {
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-0.01..0.02)).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| b.iter(|| norm_sub(black_box(f))));
    }
    g.finish();
}

pub fn aot_search(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = c.benchmark_group("aot_search");
    for n in [16, 64, 256] {
        let p = problem(&mut rng, n, 200);
        g.bench_with_input(BenchmarkId::new("fast", n), &p, |b, p| b.iter(|| aot_assignment_fast(p)));
        g.bench_with_input(BenchmarkId::new("bruteforce", n), &p, |b, p| {
            b.iter(|| aot_assignment_bruteforce(p))
        });
    }
    g.finish();
}

pub fn oracles(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..256)).collect();
    let oue = OueParams::new(1.0, 256).unwrap();
    c.bench_function("oue_tally_10k_users_256", |b| {
        b.iter(|| {
            let mut t = OueTally::new(oue);
            for &v in &values {
                t.add_honest(v, &mut rng);
            }
            t.estimate().unwrap()
        })
    });
    let olh = OlhParams::new(1.0).unwrap();
    let family = HashFamily::for_cells(256, olh.g, 10_000).unwrap();
    let pairs: Vec<_> = values.iter().map(|&v| olh_perturb(v, &family, &olh, &mut rng).unwrap()).collect();
    c.bench_function("olh_aggregate_10k_users_256", |b| {
        b.iter(|| olh_aggregate(black_box(&pairs), &family, 256, &olh).unwrap())
    });
}

pub fn defenses(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    c.bench_function("max_load_cdf_20k_balls_100_trials", |b| {
        b.iter(|| max_load_cdf(20_000, 20_000, 100, &mut rng).unwrap())
    });
    let ones: Vec<u32> = (0..10_000).map(|_| rng.random_range(0..40)).collect();
    let params = TreeDefenseParams::new(0.005).unwrap();
    c.bench_function("tree_detect_10k_users_128", |b| {
        b.iter(|| tree_detect_counts(black_box(&ones), 128, 0.5, 0.27, &params).unwrap())
    });
}

pub fn protocols(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let recs = gen_synthetic(DataKind::Gaussian, 20_000, 1, 512.0, 40.0, 1024, &mut rng).unwrap();
    let values: Vec<usize> = recs.iter().map(|r| r[0]).collect();
    let cfg = AheadConfig::new(1.0);
    let mut g = c.benchmark_group("protocols");
    g.sample_size(10);
    g.bench_function("ahead_20k_users", |b| b.iter(|| run_ahead(&values, &cfg, None, 0.0, &mut rng).unwrap()));
    g.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    postprocess(c);
    aot_search(c);
    oracles(c);
    defenses(c);
    protocols(c);
}
