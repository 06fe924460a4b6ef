//! Linear congruential universal hash family `h_{a,b}(x) = ((a x + b) mod P) mod g`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest number of functions the harness will configure (17²).
pub const MIN_FAMILY_SIZE: usize = 289;

/// The family of `P²` functions indexed by `(a, b) ∈ [P] × [P]`.
///
/// Function `id` maps to `a = id / P`, `b = id % P`. The `a = 0` members are
/// constant functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFamily {
    pub prime: u64,
    pub g: u32,
}

/// A reported (function, key) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HashPair {
    pub fn_id: u32,
    pub key: u32,
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

pub fn next_prime_above(n: u64) -> u64 {
    let mut p = n + 1;
    while !is_prime(p) {
        p += 1;
    }
    p
}

impl HashFamily {
    pub fn new(prime: u64, g: u32) -> Result<Self> {
        if !is_prime(prime) {
            return Err(Error::param(format!("{prime} is not prime")));
        }
        if g < 2 {
            return Err(Error::param(format!("hash range g must be at least 2, got {g}")));
        }
        Ok(HashFamily { prime, g })
    }

    /// Smallest prime `P > cells` whose family has at least `min_size` members.
    pub fn for_cells(cells: usize, g: u32, min_size: usize) -> Result<Self> {
        let mut p = next_prime_above(cells as u64);
        while (p * p) < min_size as u64 {
            p = next_prime_above(p);
        }
        Self::new(p, g)
    }

    pub fn size(&self) -> usize {
        (self.prime * self.prime) as usize
    }

    pub fn coefficients(&self, fn_id: u32) -> (u64, u64) {
        let id = fn_id as u64;
        (id / self.prime, id % self.prime)
    }

    /// Unchecked evaluation; `fn_id < size()` and `cell < prime` are the caller's job.
    #[inline]
    pub fn eval(&self, fn_id: u32, cell: usize) -> u32 {
        let (a, b) = self.coefficients(fn_id);
        (((a * cell as u64 + b) % self.prime) % self.g as u64) as u32
    }

    pub fn hash_eval(&self, fn_id: u32, cell: usize) -> Result<u32> {
        if fn_id as usize >= self.size() {
            return Err(Error::IndexOutOfRange { index: fn_id as usize, size: self.size() });
        }
        if cell as u64 >= self.prime {
            return Err(Error::IndexOutOfRange { index: cell, size: self.prime as usize });
        }
        Ok(self.eval(fn_id, cell))
    }

    pub fn id_of(&self, a: u64, b: u64) -> u32 {
        (a * self.prime + b) as u32
    }

    /// Keys of all `cells` under function `fn_id`.
    pub fn keys(&self, fn_id: u32, cells: usize) -> Vec<u32> {
        (0..cells).map(|c| self.eval(fn_id, c)).collect()
    }
}
