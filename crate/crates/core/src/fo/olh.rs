//! Optimized local hashing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hash::{HashFamily, HashPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlhParams {
    pub epsilon: f64,
    pub g: u32,
    /// Aggregation-side background rate `1/g`.
    pub q: f64,
}

impl OlhParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
        }
        let g = (epsilon.exp() + 1.0).round() as u32;
        Self::with_g(epsilon, g)
    }

    pub fn with_g(epsilon: f64, g: u32) -> Result<Self> {
        if g < 2 {
            return Err(Error::param(format!("OLH needs g >= 2, got {g}")));
        }
        Ok(OlhParams { epsilon, g, q: 1.0 / g as f64 })
    }

    /// Probability of each individual wrong key.
    pub fn wrong_key_prob(&self) -> f64 {
        0.5 / (self.g - 1) as f64
    }

    /// `1/2 - 1/g`, the estimator's scale.
    pub fn gap(&self) -> f64 {
        0.5 - self.q
    }

    pub fn estimate_std(&self, users: usize) -> f64 {
        (self.q * (1.0 - self.q) / users as f64).sqrt() / self.gap()
    }
}

pub fn olh_perturb<R: Rng + ?Sized>(
    true_cell: usize,
    family: &HashFamily,
    params: &OlhParams,
    rng: &mut R,
) -> Result<HashPair> {
    if true_cell as u64 >= family.prime {
        return Err(Error::IndexOutOfRange { index: true_cell, size: family.prime as usize });
    }
    if family.g != params.g {
        return Err(Error::param(format!(
            "family hashes into {} keys but OLH uses g = {}",
            family.g, params.g
        )));
    }
    let fn_id = rng.random_range(0..family.size() as u32);
    let own = family.eval(fn_id, true_cell);
    let key = if rng.random::<f64>() < 0.5 {
        own
    } else {
        // uniform over the g-1 other keys
        let k = rng.random_range(0..params.g - 1);
        if k >= own {
            k + 1
        } else {
            k
        }
    };
    Ok(HashPair { fn_id, key })
}

/// Cells in `0..cells` that `pair.fn_id` maps to `pair.key`.
pub fn olh_support(pair: HashPair, family: &HashFamily, cells: usize) -> Vec<usize> {
    (0..cells).filter(|&c| family.eval(pair.fn_id, c) == pair.key).collect()
}

/// Number of reports whose support contains each cell.
pub fn support_counts(pairs: &[HashPair], family: &HashFamily, cells: usize) -> Vec<u64> {
    let mut counts = vec![0u64; cells];
    for p in pairs {
        for (c, slot) in counts.iter_mut().enumerate() {
            if family.eval(p.fn_id, c) == p.key {
                *slot += 1;
            }
        }
    }
    counts
}

pub fn olh_estimate(counts: &[u64], users: usize, params: &OlhParams) -> Result<Vec<f64>> {
    if users == 0 {
        return Err(Error::EmptyInput("OLH aggregation needs at least one report"));
    }
    if params.g <= 2 {
        return Err(Error::param("OLH estimator is degenerate for g = 2"));
    }
    let n = users as f64;
    Ok(counts
        .iter()
        .map(|&c| (c as f64 - n * params.q) / (n * params.gap()))
        .collect())
}

pub fn olh_aggregate(
    pairs: &[HashPair],
    family: &HashFamily,
    cells: usize,
    params: &OlhParams,
) -> Result<Vec<f64>> {
    let counts = support_counts(pairs, family, cells);
    olh_estimate(&counts, pairs.len(), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn g_rounds_e_eps_plus_one() {
        assert_eq!(OlhParams::new(3f64.ln()).unwrap().g, 4);
        assert_eq!(OlhParams::new(1.0).unwrap().g, 4);
        assert_eq!(OlhParams::new(0.5).unwrap().g, 3);
        assert_eq!(OlhParams::new(2.0).unwrap().g, 8);
    }

    #[test]
    fn constant_hash_support() {
        let f = HashFamily::new(17, 4).unwrap();
        assert_eq!(olh_support(HashPair { fn_id: 0, key: 0 }, &f, 16).len(), 16);
        assert!(olh_support(HashPair { fn_id: 0, key: 1 }, &f, 16).is_empty());
    }

    #[test]
    fn supports_partition_cells_for_each_function() {
        let f = HashFamily::new(37, 5).unwrap();
        for fn_id in [0u32, 40, 77, 1000, 1368] {
            let mut seen = vec![0u8; 30];
            for key in 0..5 {
                for c in olh_support(HashPair { fn_id, key }, &f, 30) {
                    seen[c] += 1;
                }
            }
            assert!(seen.iter().all(|&s| s == 1));
        }
    }

    #[test]
    fn single_cell_supports_give_closed_form() {
        // every report supports exactly cell 0
        let params = OlhParams::with_g(1.0, 4).unwrap();
        let est = olh_estimate(&[1000, 0], 1000, &params).unwrap();
        assert!((est[0] - 3.0).abs() < 1e-12);
        let est = olh_estimate(&[250], 1000, &params).unwrap();
        assert!(est[0].abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_empty() {
        let f = HashFamily::new(17, 4).unwrap();
        let p = OlhParams::new(1.0).unwrap();
        assert!(olh_aggregate(&[], &f, 16, &p).is_err());
    }

    #[test]
    fn two_key_flip_rate() {
        let f = HashFamily::new(17, 2).unwrap();
        let p = OlhParams::with_g(0.3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 100_000;
        let mut same = 0usize;
        for _ in 0..trials {
            let pair = olh_perturb(6, &f, &p, &mut rng).unwrap();
            same += usize::from(f.eval(pair.fn_id, 6) == pair.key);
        }
        let sigma = (0.25 / trials as f64).sqrt();
        assert!((same as f64 / trials as f64 - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn wrong_keys_are_uniform() {
        let f = HashFamily::new(17, 4).unwrap();
        let p = OlhParams::new(3f64.ln()).unwrap();
        assert_eq!(p.g, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let trials = 120_000;
        // offset of reported key from the true key, mod g
        let mut by_offset = [0usize; 4];
        for _ in 0..trials {
            let pair = olh_perturb(9, &f, &p, &mut rng).unwrap();
            let own = f.eval(pair.fn_id, 9);
            by_offset[((pair.key + 4 - own) % 4) as usize] += 1;
        }
        let expect = [0.5, 0.5 / 3.0, 0.5 / 3.0, 0.5 / 3.0];
        for (o, e) in by_offset.iter().zip(expect) {
            let sigma = (e * (1.0 - e) / trials as f64).sqrt();
            assert!((*o as f64 / trials as f64 - e).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn function_choice_is_uniform() {
        // chi-square goodness of fit over 289 functions, alpha = 0.01
        let f = HashFamily::new(17, 4).unwrap();
        let p = OlhParams::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let draws = 100_000;
        let mut hist = vec![0f64; f.size()];
        for _ in 0..draws {
            hist[olh_perturb(3, &f, &p, &mut rng).unwrap().fn_id as usize] += 1.0;
        }
        let e = draws as f64 / f.size() as f64;
        let chi2: f64 = hist.iter().map(|o| (o - e).powi(2) / e).sum();
        let crit = crate::stats::chi_square_critical(f.size() - 1, 0.01);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }
}
