//! Attack efficiency and the PRISM counterexample.

use crate::error::{Error, Result};

/// `(poisoned - baseline) / rho`.
pub fn efficiency(baseline: f64, poisoned: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::param(format!("efficiency needs rho > 0, got {rho}")));
    }
    Ok((poisoned - baseline) / rho)
}

/// Probability that PRISM's randomized-response encoding of `data` (bit `i`
/// set iff `i <= data`, then each bit kept with probability `p`) produces
/// `outcome`.
pub fn prism_outcome_prob(data: usize, outcome: &[bool], epsilon: f64) -> f64 {
    let e = epsilon.exp();
    let p = e / (e + 1.0);
    outcome
        .iter()
        .enumerate()
        .map(|(i, &o)| if (i <= data) == o { p } else { 1.0 - p })
        .product()
}

/// Ratio of the probabilities of outcome `(0, 0, 0)` for data 0 and data 2.
pub fn prism_violation_ratio(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
    }
    let e = epsilon.exp();
    let (p, q) = (e / (e + 1.0), 1.0 / (e + 1.0));
    Ok(p * p * q / (q * q * q))
}

/// The same ratio by enumerating all eight flip patterns of the two
/// encodings and summing those that land on `(0, 0, 0)`.
pub fn prism_violation_bruteforce(epsilon: f64) -> f64 {
    let e = epsilon.exp();
    let keep = e / (e + 1.0);
    let prob_zero = |data: usize| -> f64 {
        let enc: Vec<bool> = (0..3).map(|i| i <= data).collect();
        (0u8..8)
            .map(|flips| {
                let mut pr = 1.0;
                let mut out = [false; 3];
                for i in 0..3 {
                    let flip = flips >> i & 1 == 1;
                    pr *= if flip { 1.0 - keep } else { keep };
                    out[i] = enc[i] ^ flip;
                }
                if out == [false; 3] { pr } else { 0.0 }
            })
            .sum()
    };
    prob_zero(0) / prob_zero(2)
}
