//! Hypothesis-test detectors: the one-count interval test on tree rounds and
//! the maximum-load test on grid rounds.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};

use crate::error::{Error, Result};
use crate::fo::OueReport;
use crate::rng;
use crate::stats::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detected: bool,
    pub statistic: f64,
    pub threshold: f64,
}

impl DetectionResult {
    fn new(statistic: f64, threshold: f64) -> Self {
        DetectionResult { detected: statistic > threshold, statistic, threshold }
    }
}

/// Distribution of the one count of an honest OUE report of length `n`:
/// `Bin(n - 1, q) + Bin(1, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnesCountLaw {
    pub pmf: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl OnesCountLaw {
    pub fn new(n: usize, p: f64, q: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("report length must be positive"));
        }
        let noise = Binomial::new(q, (n - 1) as u64).map_err(|e| Error::param(e.to_string()))?;
        let b: Vec<f64> = (0..n as u64).map(|x| noise.pmf(x)).collect();
        let mut pmf = vec![0.0; n + 1];
        for (x, w) in b.iter().enumerate() {
            pmf[x] += (1.0 - p) * w;
            pmf[x + 1] += p * w;
        }
        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        for w in &pmf {
            acc += w;
            cdf.push(acc.min(1.0));
        }
        *cdf.last_mut().expect("n + 1 entries") = 1.0;
        Ok(OnesCountLaw { pmf, cdf })
    }

    /// `F(x)`; zero below the support, one above it.
    pub fn cdf_at(&self, x: i64) -> f64 {
        if x < 0 {
            0.0
        } else {
            self.cdf.get(x as usize).copied().unwrap_or(1.0)
        }
    }

    /// Largest `x` with `F(x) <= mass`, or `-1` if none.
    pub fn lower(&self, mass: f64) -> i64 {
        self.cdf.iter().rposition(|c| *c <= mass).map_or(-1, |x| x as i64)
    }

    /// Smallest `x` with `F(x) >= mass`.
    pub fn upper(&self, mass: f64) -> i64 {
        self.cdf.iter().position(|c| *c >= mass).unwrap_or(self.cdf.len() - 1) as i64
    }
}

/// Exact CDF of `Bin(n - 1, q) + Bin(1, 1/2)` at `0..=n`.
pub fn ones_count_cdf(n: usize, q: f64) -> Result<Vec<f64>> {
    Ok(OnesCountLaw::new(n, 0.5, q)?.cdf)
}

/// How the interval mass of the tree test is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassReading {
    /// `f` is the honest mass outside `I`, split evenly between the tails;
    /// the threshold is `N f + z sqrt(N f (1 - f))`.
    #[default]
    Tail,
    /// `f` is the honest mass inside a central `I`; the threshold on the
    /// outside count is `N (1 - f) + z sqrt(N f (1 - f))`.
    Inside,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeDefenseParams {
    pub alpha: f64,
    pub z_alpha: f64,
    pub reading: MassReading,
}

impl TreeDefenseParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::param(format!("alpha must lie in (0, 0.5), got {alpha}")));
        }
        Ok(TreeDefenseParams {
            alpha,
            z_alpha: normal_quantile(1.0 - alpha),
            reading: MassReading::Tail,
        })
    }

    /// `(1 - sqrt(1 / (1 + z²))) / 2`.
    pub fn f(&self) -> f64 {
        (1.0 - (1.0 / (1.0 + self.z_alpha * self.z_alpha)).sqrt()) / 2.0
    }

    /// Interval `[lo, hi]`; a one count outside it is an outlier.
    pub fn interval(&self, law: &OnesCountLaw) -> (i64, i64) {
        let tail = match self.reading {
            MassReading::Tail => self.f() / 2.0,
            MassReading::Inside => (1.0 - self.f()) / 2.0,
        };
        (law.lower(tail), law.upper(1.0 - tail))
    }

    pub fn threshold(&self, users: usize) -> f64 {
        let n = users as f64;
        let f = self.f();
        let mean = match self.reading {
            MassReading::Tail => n * f,
            MassReading::Inside => n * (1.0 - f),
        };
        mean + self.z_alpha * (n * f * (1.0 - f)).sqrt()
    }
}

/// Tree test on one round given every user's one count.
pub fn tree_detect_counts(
    ones: &[u32],
    n: usize,
    p: f64,
    q: f64,
    params: &TreeDefenseParams,
) -> Result<DetectionResult> {
    let law = OnesCountLaw::new(n, p, q)?;
    let (lo, hi) = params.interval(&law);
    let outside = ones.iter().filter(|&&x| (x as i64) < lo || (x as i64) > hi).count();
    Ok(DetectionResult::new(outside as f64, params.threshold(ones.len())))
}

pub fn tree_detect(
    reports: &[OueReport],
    p: f64,
    q: f64,
    params: &TreeDefenseParams,
) -> Result<DetectionResult> {
    let n = reports.first().ok_or(Error::EmptyInput("no reports"))?.len();
    if let Some(r) = reports.iter().find(|r| r.len() != n) {
        return Err(Error::LengthMismatch { expected: n, found: r.len() });
    }
    let ones: Vec<u32> = reports.iter().map(|r| r.ones() as u32).collect();
    tree_detect_counts(&ones, n, p, q, params)
}

/// Empirical law of the largest bin after `balls` uniform throws into `bins`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxLoadCdf {
    pub balls: usize,
    pub bins: usize,
    /// `hist[x]`: trials whose maximum load was `x`.
    pub hist: Vec<u64>,
    pub trials: u64,
}

impl MaxLoadCdf {
    /// `P[max <= x]`.
    pub fn cdf(&self, x: usize) -> f64 {
        let below: u64 = self.hist.iter().take(x + 1).sum();
        below as f64 / self.trials as f64
    }

    /// `P[max >= x]`.
    pub fn survival(&self, x: usize) -> f64 {
        if x == 0 {
            return 1.0;
        }
        1.0 - self.cdf(x - 1)
    }

    /// Largest load still accepted at level `alpha`: one more than this is
    /// the smallest `x` with `P[max >= x] < alpha`.
    pub fn threshold(&self, alpha: f64) -> usize {
        (1..=self.hist.len()).find(|&x| self.survival(x) < alpha).expect("survival reaches 0") - 1
    }

    pub fn quantile(&self, p: f64) -> usize {
        (0..self.hist.len()).find(|&x| self.cdf(x) >= p).unwrap_or(self.hist.len() - 1)
    }
}

pub fn max_load<R: Rng + ?Sized>(balls: usize, bins: usize, rng: &mut R) -> usize {
    let mut load = vec![0u32; bins];
    let mut best = 0;
    for _ in 0..balls {
        let b = &mut load[rng.random_range(0..bins)];
        *b += 1;
        best = best.max(*b);
    }
    best as usize
}

/// Simulate `trials` throws; trial `i` uses stream `i` under a seed drawn
/// from `rng`.
pub fn max_load_cdf<R: Rng + ?Sized>(
    balls: usize,
    bins: usize,
    trials: usize,
    rng: &mut R,
) -> Result<MaxLoadCdf> {
    if bins == 0 {
        return Err(Error::param("need at least one bin"));
    }
    if trials < 100 {
        return Err(Error::param(format!("need at least 100 trials, got {trials}")));
    }
    let seed: u64 = rng.random();
    let loads: Vec<usize> = (0..trials)
        .into_par_iter()
        .map(|i| max_load(balls, bins, &mut rng::stream(seed, i as u64)))
        .collect();
    let mut hist = vec![0u64; loads.iter().max().copied().unwrap_or(0) + 1];
    for l in loads {
        hist[l] += 1;
    }
    Ok(MaxLoadCdf { balls, bins, hist, trials: trials as u64 })
}

pub const DEFAULT_TRIALS: usize = 1000;

type CacheKey = (usize, usize, usize);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<MaxLoadCdf>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<MaxLoadCdf>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// [`max_load_cdf`] under a seed fixed by `(balls, bins)`, memoized.
pub fn cached_max_load_cdf(balls: usize, bins: usize, trials: usize) -> Result<Arc<MaxLoadCdf>> {
    let key = (balls, bins, trials);
    if let Some(c) = cache().lock().expect("cache lock").get(&key) {
        return Ok(c.clone());
    }
    let seed = (balls as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ bins as u64;
    let cdf = Arc::new(max_load_cdf(balls, bins, trials, &mut rng::stream(seed, rng::DEFENSE))?);
    cache().lock().expect("cache lock").insert(key, cdf.clone());
    Ok(cdf)
}

/// Highest usage count of any function.
pub fn observed_max_load(fn_ids: &[u32]) -> usize {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for f in fn_ids {
        *counts.entry(*f).or_default() += 1;
    }
    counts.values().copied().max().unwrap_or(0)
}

/// Flags a round whose maximum load `L` has `P[max >= L] < alpha` under
/// honest behavior.
pub fn grid_detect(fn_ids: &[u32], family_size: usize, alpha: f64) -> Result<DetectionResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let cdf = cached_max_load_cdf(fn_ids.len(), family_size, DEFAULT_TRIALS)?;
    let stat = observed_max_load(fn_ids);
    Ok(DetectionResult::new(stat as f64, cdf.threshold(alpha) as f64))
}

/// `log N / (log N - log |H|)`; infinite when `|H| >= N`.
pub fn analytic_max_load(balls: usize, bins: usize) -> f64 {
    let (n, h) = ((balls as f64).ln(), (bins as f64).ln());
    if n <= h {
        f64::INFINITY
    } else {
        n / (n - h)
    }
}
