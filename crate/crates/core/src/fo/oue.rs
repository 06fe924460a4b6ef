//! Optimized unary encoding.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Perturbation probabilities for an `n`-bit OUE round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OueParams {
    pub epsilon: f64,
    pub n: usize,
    pub p: f64,
    pub q: f64,
}

impl OueParams {
    pub fn new(epsilon: f64, n: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
        }
        if n == 0 {
            return Err(Error::param("OUE vector length must be positive"));
        }
        Ok(OueParams {
            epsilon,
            n,
            p: 0.5,
            q: 1.0 / (epsilon.exp() + 1.0),
        })
    }

    /// Same probabilities, different vector length.
    pub fn with_len(&self, n: usize) -> Self {
        OueParams { n, ..*self }
    }

    /// Standard deviation of a single frequency estimate over `users`
    /// reports when the true frequency is `f`.
    pub fn estimate_std(&self, users: usize, f: f64) -> f64 {
        let var = f * self.p * (1.0 - self.p) + (1.0 - f) * self.q * (1.0 - self.q);
        (var / users as f64).sqrt() / (self.p - self.q)
    }

    /// Expected number of ones in an honest report.
    pub fn expected_ones(&self) -> f64 {
        self.p + (self.n as f64 - 1.0) * self.q
    }
}

/// One user's perturbed bit vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OueReport {
    pub bits: Vec<bool>,
}

impl OueReport {
    pub fn zeros(n: usize) -> Self {
        OueReport { bits: vec![false; n] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn oue_perturb<R: Rng + ?Sized>(
    true_index: usize,
    params: &OueParams,
    rng: &mut R,
) -> Result<OueReport> {
    if true_index >= params.n {
        return Err(Error::IndexOutOfRange { index: true_index, size: params.n });
    }
    let bits = (0..params.n)
        .map(|i| {
            let prob = if i == true_index { params.p } else { params.q };
            rng.random::<f64>() < prob
        })
        .collect();
    Ok(OueReport { bits })
}

/// Unbiased estimate from per-position one counts over `users` reports.
pub fn oue_estimate(counts: &[u64], users: usize, params: &OueParams) -> Result<Vec<f64>> {
    if users == 0 {
        return Err(Error::EmptyInput("OUE aggregation needs at least one report"));
    }
    let n = users as f64;
    let denom = n * (params.p - params.q);
    Ok(counts
        .iter()
        .map(|&c| (c as f64 - n * params.q) / denom)
        .collect())
}

pub fn oue_aggregate(reports: &[OueReport], params: &OueParams) -> Result<Vec<f64>> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("OUE aggregation needs at least one report"));
    }
    let n = params.n;
    let mut counts = vec![0u64; n];
    for r in reports {
        if r.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: r.len() });
        }
        for (c, b) in counts.iter_mut().zip(&r.bits) {
            *c += u64::from(*b);
        }
    }
    oue_estimate(&counts, reports.len(), params)
}

/// Running tally of one OUE round.
///
/// Honest users can be added one at a time (the per-user one count is kept
/// for the detector) or in bulk, where only the aggregate counts are sampled.
#[derive(Debug, Clone)]
pub struct OueTally {
    params: OueParams,
    counts: Vec<u64>,
    users: usize,
    ones: Vec<u32>,
    geometric: Geometric,
}

impl OueTally {
    pub fn new(params: OueParams) -> Self {
        let geometric = Geometric::new(params.q).expect("q lies in (0, 1/2)");
        OueTally {
            params,
            counts: vec![0; params.n],
            users: 0,
            ones: Vec::new(),
            geometric,
        }
    }

    pub fn params(&self) -> &OueParams {
        &self.params
    }

    /// Perturb and record one honest user, returning their number of ones.
    pub fn add_honest<R: Rng + ?Sized>(&mut self, true_index: usize, rng: &mut R) -> u32 {
        let n = self.params.n;
        let mut ones = 0u32;
        if rng.random::<f64>() < self.params.p {
            self.counts[true_index] += 1;
            ones += 1;
        }
        // skip over runs of zeros; the true position was drawn above
        let mut pos: u64 = 0;
        loop {
            pos = pos.saturating_add(self.geometric.sample(rng));
            if pos >= n as u64 {
                break;
            }
            let i = pos as usize;
            if i != true_index {
                self.counts[i] += 1;
                ones += 1;
            }
            pos += 1;
        }
        self.users += 1;
        self.ones.push(ones);
        ones
    }

    /// Record `holders[v]` honest users holding position `v`, sampling the
    /// aggregate counts directly. No per-user one counts are kept.
    pub fn add_honest_bulk<R: Rng + ?Sized>(&mut self, holders: &[usize], rng: &mut R) {
        let total: usize = holders.iter().sum();
        for (v, &h) in holders.iter().enumerate() {
            let own = Binomial::new(h as u64, self.params.p).expect("valid p").sample(rng);
            let other = Binomial::new((total - h) as u64, self.params.q)
                .expect("valid q")
                .sample(rng);
            self.counts[v] += own + other;
        }
        self.users += total;
    }

    pub fn add_report(&mut self, report: &OueReport) -> Result<()> {
        if report.len() != self.params.n {
            return Err(Error::LengthMismatch { expected: self.params.n, found: report.len() });
        }
        for (c, b) in self.counts.iter_mut().zip(&report.bits) {
            *c += u64::from(*b);
        }
        self.users += 1;
        self.ones.push(report.ones() as u32);
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Per-user one counts for users added individually.
    pub fn ones_per_user(&self) -> &[u32] {
        &self.ones
    }

    pub fn estimate(&self) -> Result<Vec<f64>> {
        oue_estimate(&self.counts, self.users, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn q_at_ln3_is_a_quarter() {
        let p = OueParams::new(3f64.ln(), 4).unwrap();
        assert!((p.q - 0.25).abs() < 1e-15);
        assert_eq!(p.p, 0.5);
    }

    #[test]
    fn q_decreases_with_epsilon() {
        let qs: Vec<f64> = [0.1, 0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|e| OueParams::new(*e, 2).unwrap().q)
            .collect();
        assert!(qs.windows(2).all(|w| w[1] < w[0] && w[0] < 0.5));
    }

    #[test]
    fn rejects_out_of_range_index() {
        let p = OueParams::new(1.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            oue_perturb(4, &p, &mut rng),
            Err(Error::IndexOutOfRange { index: 4, size: 4 })
        ));
    }

    #[test]
    fn aggregate_at_presence_and_absence_expectations() {
        let p = OueParams { epsilon: 3f64.ln(), n: 2, p: 0.5, q: 0.25 };
        let est = oue_estimate(&[50, 25], 100, &p).unwrap();
        assert!((est[0] - 1.0).abs() < 1e-12);
        assert!(est[1].abs() < 1e-12);
    }

    #[test]
    fn aggregate_errors() {
        let p = OueParams::new(1.0, 3).unwrap();
        assert!(matches!(oue_aggregate(&[], &p), Err(Error::EmptyInput(_))));
        let bad = [OueReport::zeros(2)];
        assert!(matches!(oue_aggregate(&bad, &p), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn large_epsilon_true_bit_rate_is_half() {
        let p = OueParams::new(40.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 100_000;
        let mut hits = 0usize;
        let mut stray = 0usize;
        for _ in 0..trials {
            let r = oue_perturb(3, &p, &mut rng).unwrap();
            hits += usize::from(r.bits[3]);
            stray += r.ones() - usize::from(r.bits[3]);
        }
        let sigma = (0.25 / trials as f64).sqrt();
        assert!((hits as f64 / trials as f64 - 0.5).abs() < 3.0 * sigma);
        assert_eq!(stray, 0);
    }

    #[test]
    fn mean_ones_matches_analytic() {
        let p = OueParams::new(1.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        let mut tally = OueTally::new(p);
        for _ in 0..trials {
            tally.add_honest(0, &mut rng);
        }
        let mean = tally.ones_per_user().iter().map(|&o| o as f64).sum::<f64>() / trials as f64;
        let expected = 0.5 + 63.0 / (1f64.exp() + 1.0);
        let var = 0.25 + 63.0 * p.q * (1.0 - p.q);
        assert!((mean - expected).abs() < 3.0 * (var / trials as f64).sqrt());
    }

    #[test]
    fn estimate_matches_closed_form_reimplementation() {
        use rand::Rng;
        let p = OueParams::new(0.7, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let users = 5_000usize;
        let counts: Vec<u64> = (0..40).map(|_| rng.random_range(0..=users as u64)).collect();
        let est = oue_estimate(&counts, users, &p).unwrap();
        let q = 1.0 / (0.7f64.exp() + 1.0);
        for (c, e) in counts.iter().zip(&est) {
            let oracle = (*c as f64 / users as f64 - q) / (0.5 - q);
            assert!((oracle - e).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_of_estimates_is_additive() {
        let p = OueParams::new(1.3, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reports: Vec<OueReport> = (0..777)
            .map(|i| oue_perturb(i % 16, &p, &mut rng).unwrap())
            .collect();
        let est = oue_aggregate(&reports, &p).unwrap();
        let total_ones: usize = reports.iter().map(OueReport::ones).sum();
        let n = reports.len() as f64;
        let expect = (total_ones as f64 - n * 16.0 * p.q) / (n * (p.p - p.q));
        assert!((est.iter().sum::<f64>() - expect).abs() < 1e-9);
    }

    #[test]
    fn doubling_counts_and_users_is_invariant() {
        let p = OueParams::new(1.0, 3).unwrap();
        let a = oue_estimate(&[10, 40, 7], 60, &p).unwrap();
        let b = oue_estimate(&[20, 80, 14], 120, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
