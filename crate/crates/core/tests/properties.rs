use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rangepoison::attacks::{
    aot_assignment_bruteforce, aot_assignment_fast, blocking_pairs, stable_match, AotProblem,
};
use rangepoison::defense::observed_max_load;
use rangepoison::fo::oue::OueParams;
use rangepoison::fo::HashFamily;
use rangepoison::harness::{efficiency, gen_queries};
use rangepoison::postprocess::norm_sub;
use rangepoison::{Interval, RangeQuery};

proptest! {
    #[test]
    fn norm_sub_is_a_distribution(f in prop::collection::vec(-2.0f64..2.0, 1..200)) {
        let r = norm_sub(&f).unwrap();
        prop_assert!(r.normalized.iter().all(|x| *x >= 0.0));
        prop_assert!((r.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // order is kept
        for i in 0..f.len() {
            for j in 0..f.len() {
                if f[i] > f[j] {
                    prop_assert!(r.normalized[i] >= r.normalized[j]);
                }
            }
        }
    }

    #[test]
    fn fast_search_matches_bruteforce(
        coeffs in prop::collection::vec(-0.5f64..1.0, 1..24),
        fake in 0usize..60,
        real in 50usize..5000,
        eps in 0.3f64..3.0,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut freqs: Vec<f64> = coeffs.iter().map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = freqs.iter().sum();
        freqs.iter_mut().for_each(|f| *f /= s);
        let p = AotProblem::new(&coeffs, &freqs, real, fake, &OueParams::new(eps, coeffs.len()).unwrap()).unwrap();
        match (aot_assignment_fast(&p), aot_assignment_bruteforce(&p)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a.value - b.value).abs() < 1e-9);
                prop_assert!(a.counts.iter().all(|c| *c <= fake));
                prop_assert!((p.value(&a.counts) - a.value).abs() < 1e-12);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn hash_ids_round_trip(cells in 1usize..300, g in 2u32..20, id in any::<u32>(), cell in any::<usize>()) {
        let fam = HashFamily::for_cells(cells, g, 0).unwrap();
        let id = id % fam.size() as u32;
        let (a, b) = fam.coefficients(id);
        prop_assert_eq!(fam.id_of(a, b), id);
        prop_assert!(fam.eval(id, cell % cells) < g);
    }

    #[test]
    fn snapping_contains_the_query(lo in 0usize..63, len in 1usize..64, w in prop::sample::select(vec![1usize, 2, 4, 8, 16])) {
        let hi = (lo + len).min(64);
        let q = RangeQuery::one_dim(lo, hi, 64).unwrap();
        let s = q.snapped(w, 64).single().unwrap();
        prop_assert!(Interval::new(lo, hi).is_subset_of(&s));
        prop_assert!(s.lo % w == 0 && (s.hi % w == 0 || s.hi == 64));
    }

    #[test]
    fn queries_stay_in_domain(seed in any::<u64>(), c in 8usize..2048, dq in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for q in gen_queries(10, c, 5, dq, (0.125, 0.375), &mut rng).unwrap() {
            prop_assert_eq!(q.dims(), dq);
            prop_assert!(q.ranges().iter().all(|(a, iv)| *a < 5 && iv.lo < iv.hi && iv.hi <= c));
        }
    }

    #[test]
    fn efficiency_is_linear(f in 0.0f64..1.0, d in -1.0f64..1.0, rho in 0.01f64..0.9) {
        let e = efficiency(f, f + d, rho).unwrap();
        prop_assert!((e * rho - d).abs() < 1e-12);
    }

    #[test]
    fn max_load_obeys_pigeonhole(ids in prop::collection::vec(0u32..50, 1..500)) {
        let distinct = ids.iter().collect::<std::collections::HashSet<_>>().len();
        let m = observed_max_load(&ids);
        prop_assert!(m >= ids.len().div_ceil(distinct) && m <= ids.len());
    }

    #[test]
    fn stable_matching_has_no_blocking_pair(
        grids in 1usize..5,
        funcs in 1usize..30,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<Vec<(f64, f64)>> = (0..grids)
            .map(|_| (0..funcs).map(|_| (-(rng.random_range(0..4) as f64), rng.random_range(0..6) as f64)).collect())
            .collect();
        let quotas: Vec<usize> = (0..grids).map(|_| rng.random_range(0..=funcs / grids)).collect();
        let m = stable_match(&scores, &quotas);
        prop_assert!(blocking_pairs(&scores, &quotas, &m).is_empty());
        let mut seen = std::collections::HashSet::new();
        for (g, fs) in m.iter().enumerate() {
            prop_assert!(fs.len() <= quotas[g]);
            prop_assert!(fs.iter().all(|f| seen.insert(*f)));
        }
    }
}
