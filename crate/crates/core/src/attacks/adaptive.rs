//! AAoG: spread fake users over enough hash functions that no function's
//! load gives them away, matching functions to grids by stable matching.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defense::{cached_max_load_cdf, DEFAULT_TRIALS};
use crate::error::{Error, Result};
use crate::fo::HashPair;
use crate::grid::GridKind;
use crate::hdg::{GridAttack, GridRequest};
use crate::query::RangeQuery;
use crate::rng;

use super::grid::{best_key, relevant, tables, uniform_pairs, KeyTable};

/// Loads of the first `k` of `bins` bins after `balls` uniform throws.
pub fn partial_loads<R: Rng + ?Sized>(balls: usize, bins: usize, k: usize, rng: &mut R) -> Vec<u64> {
    let mut left = balls as u64;
    (0..k.min(bins))
        .map(|i| {
            let p = 1.0 / (bins - i) as f64;
            let x = if left == 0 { 0 } else { Binomial::new(left, p).expect("p in (0, 1]").sample(rng) };
            left -= x;
            x
        })
        .collect()
}

/// Functions the attacker needs at per-function load `l`.
pub fn functions_needed(fake: &[usize], l: usize) -> usize {
    fake.iter().map(|m| m.div_ceil(l)).sum()
}

/// Per candidate `l`: estimated probability that the honest load on every
/// chosen function stays below `t - l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadLimit {
    pub l: Option<usize>,
    /// `(l, probability)` for every `l` in `1..t`.
    pub curve: Vec<(usize, f64)>,
}

/// Largest `l` with `P[max load of the chosen bins < t - l] >= 1 - beta`,
/// where the loads come from `balls` throws into `bins` bins and the number
/// of chosen bins is `Σ ⌈M_G / l⌉`.
pub fn aaog_load_limit<R: Rng + ?Sized>(
    balls: usize,
    bins: usize,
    fake: &[usize],
    t: usize,
    beta: f64,
    trials: usize,
    rng: &mut R,
) -> Result<LoadLimit> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param(format!("beta must lie in (0, 1), got {beta}")));
    }
    if trials == 0 || bins == 0 {
        return Err(Error::param("need trials and bins"));
    }
    let widest = functions_needed(fake, 1).min(bins);
    let seed: u64 = rng.random();
    // prefix maxima of the chosen bins, per trial
    let prefix: Vec<Vec<u64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let loads = partial_loads(balls, bins, widest, &mut rng::stream(seed, i as u64));
            let mut m = 0;
            loads.iter().map(|x| {
                m = m.max(*x);
                m
            }).collect()
        })
        .collect();
    let mut curve = Vec::new();
    let mut best = None;
    for l in 1..t {
        let k = functions_needed(fake, l);
        if k > bins {
            curve.push((l, 0.0));
            continue;
        }
        let cap = (t - l) as u64;
        let ok = prefix.iter().filter(|p| k == 0 || p[k - 1] < cap).count();
        let prob = ok as f64 / trials as f64;
        curve.push((l, prob));
        if prob >= 1.0 - beta {
            best = Some(l);
        }
    }
    Ok(LoadLimit { l: best, curve })
}

/// Grid-proposing deferred acceptance. `scores[g][h]` is how much grid `g`
/// and function `h` like each other; ties go to the lower function id on the
/// grid side and the lower grid index on the function side.
pub fn stable_match(scores: &[Vec<(f64, f64)>], quotas: &[usize]) -> Vec<Vec<u32>> {
    let grids = scores.len();
    let funcs = scores.first().map_or(0, Vec::len);
    let ranking: Vec<Vec<u32>> = scores
        .iter()
        .map(|s| {
            let mut r: Vec<u32> = (0..funcs as u32).collect();
            r.sort_by(|a, b| pref_desc(s[*a as usize], s[*b as usize]).then(a.cmp(b)));
            r
        })
        .collect();
    let mut holder: Vec<Option<usize>> = vec![None; funcs];
    let mut filled = vec![0usize; grids];
    let mut next = vec![0usize; grids];
    let mut queue: Vec<usize> = (0..grids).rev().collect();
    while let Some(g) = queue.pop() {
        while filled[g] < quotas[g] && next[g] < funcs {
            let h = ranking[g][next[g]] as usize;
            next[g] += 1;
            match holder[h] {
                None => {
                    holder[h] = Some(g);
                    filled[g] += 1;
                }
                Some(o) if prefers(scores, h, g, o) => {
                    holder[h] = Some(g);
                    filled[g] += 1;
                    filled[o] -= 1;
                    queue.push(o);
                }
                Some(_) => {}
            }
        }
    }
    let mut out = vec![Vec::new(); grids];
    for g in 0..grids {
        out[g] = ranking[g].iter().copied().filter(|h| holder[*h as usize] == Some(g)).collect();
    }
    out
}

fn pref_desc(a: (f64, f64), b: (f64, f64)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1))
}

/// Whether function `h` would rather serve grid `g` than grid `o`.
fn prefers(scores: &[Vec<(f64, f64)>], h: usize, g: usize, o: usize) -> bool {
    pref_desc(scores[g][h], scores[o][h]).then(g.cmp(&o)).is_lt()
}

/// Pairs `(grid, function)` that would both rather be matched to each other.
pub fn blocking_pairs(
    scores: &[Vec<(f64, f64)>],
    quotas: &[usize],
    matching: &[Vec<u32>],
) -> Vec<(usize, u32)> {
    let funcs = scores.first().map_or(0, Vec::len);
    let mut holder: Vec<Option<usize>> = vec![None; funcs];
    for (g, hs) in matching.iter().enumerate() {
        for h in hs {
            holder[*h as usize] = Some(g);
        }
    }
    let grid_rank = |g: usize, a: usize, b: usize| pref_desc(scores[g][a], scores[g][b]).then(a.cmp(&b));
    let mut out = Vec::new();
    for (g, hs) in matching.iter().enumerate() {
        let worst = hs.iter().map(|h| *h as usize).max_by(|a, b| grid_rank(g, *a, *b));
        for h in 0..funcs {
            if holder[h] == Some(g) {
                continue;
            }
            let grid_wants = hs.len() < quotas[g] || worst.is_some_and(|w| grid_rank(g, h, w).is_lt());
            let func_wants = holder[h].is_none_or(|o| prefers(scores, h, g, o));
            if grid_wants && func_wants {
                out.push((g, h as u32));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaogPlan {
    pub l: usize,
    pub threshold: usize,
    pub limit: LoadLimit,
    /// Relevant grids, and per grid the matched functions with their keys.
    pub grids: Vec<GridKind>,
    pub quotas: Vec<usize>,
    pub pairs: Vec<Vec<HashPair>>,
    pub stable: bool,
}

/// AAoG. The detection threshold is the defender's published one for
/// significance `alpha`.
#[derive(Debug, Clone)]
pub struct Aaog {
    pub target: RangeQuery,
    pub beta: f64,
    pub alpha: f64,
    pub trials: usize,
    pub plan: Option<AaogPlan>,
}

impl Aaog {
    pub fn new(target: RangeQuery, beta: f64, alpha: f64) -> Self {
        Aaog { target, beta, alpha, trials: DEFAULT_TRIALS, plan: None }
    }
}

impl GridAttack for Aaog {
    fn reports(&mut self, req: &GridRequest<'_>, rng: &mut dyn RngCore) -> Result<Vec<Vec<HashPair>>> {
        let layout = req.layout;
        let q = layout.trim(&self.target);
        let kinds = layout.kinds();
        let balls: usize = req.fake.iter().chain(req.real).sum();
        let bins = req.family.size();
        let threshold = cached_max_load_cdf(balls, bins, DEFAULT_TRIALS)?.threshold(self.alpha);

        let rel: Vec<usize> = (0..kinds.len()).filter(|&i| relevant(kinds[i], &q)).collect();
        let rel_fake: Vec<usize> = rel.iter().map(|&i| req.fake[i]).collect();
        let limit = aaog_load_limit(balls, bins, &rel_fake, threshold, self.beta, self.trials, rng)?;
        let Some(l) = limit.l else {
            return Err(Error::Infeasible(format!(
                "no per-function load keeps below threshold {threshold} with beta = {}",
                self.beta
            )));
        };
        let tables = tables(req);
        let mut keys: Vec<Vec<u32>> = Vec::with_capacity(rel.len());
        let mut scores: Vec<Vec<(f64, f64)>> = Vec::with_capacity(rel.len());
        for &gi in &rel {
            let kind = kinds[gi];
            let table: &KeyTable = &tables[&layout.cells(kind)];
            let mut mask = vec![false; layout.cells(kind)];
            for c in layout.query_cells(kind, &q) {
                mask[c] = true;
            }
            let (k, s): (Vec<u32>, Vec<(f64, f64)>) =
                (0..bins as u32).map(|h| best_key(&layout, kind, &mask, table, h)).unzip();
            keys.push(k);
            scores.push(s);
        }
        let quotas: Vec<usize> = rel_fake.iter().map(|m| m.div_ceil(l)).collect();
        let matching = stable_match(&scores, &quotas);
        let stable = blocking_pairs(&scores, &quotas, &matching).is_empty();

        let mut out: Vec<Vec<HashPair>> = vec![Vec::new(); kinds.len()];
        let mut plan_pairs = Vec::with_capacity(rel.len());
        for (r, &gi) in rel.iter().enumerate() {
            let fns = &matching[r];
            if fns.len() < quotas[r] {
                return Err(Error::Infeasible("not enough hash functions for the quotas".into()));
            }
            let pairs: Vec<HashPair> =
                fns.iter().map(|h| HashPair { fn_id: *h, key: keys[r][*h as usize] }).collect();
            out[gi] = (0..req.fake[gi]).map(|u| pairs[u / l]).collect();
            plan_pairs.push(pairs);
        }
        // fakes on grids the query misses spread over the unmatched functions
        let used: HashSet<u32> = matching.iter().flatten().copied().collect();
        let mut spare: Vec<u32> = (0..bins as u32).filter(|h| !used.contains(h)).collect();
        spare.shuffle(rng);
        let mut next = 0;
        for (gi, kind) in kinds.iter().enumerate() {
            if !relevant(*kind, &q) {
                if spare.is_empty() {
                    out[gi] = uniform_pairs(&req.family, req.fake[gi], rng);
                    continue;
                }
                out[gi] = (0..req.fake[gi])
                    .map(|_| {
                        let fn_id = spare[next % spare.len()];
                        next += 1;
                        HashPair { fn_id, key: rng.random_range(0..req.family.g) }
                    })
                    .collect();
            }
        }
        self.plan = Some(AaogPlan {
            l,
            threshold,
            limit,
            grids: rel.iter().map(|&i| kinds[i]).collect(),
            quotas,
            pairs: plan_pairs,
            stable,
        });
        Ok(out)
    }
}
