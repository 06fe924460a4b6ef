//! Attacks on the tree protocol: MGA, AoT with its assignment searches, the
//! zero-coefficient fallbacks, and the adaptive AAoT rewrite.

use rand::seq::index::sample;
use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::ahead::{next_split, query_cover, LayerRequest, TreeAttack};
use crate::error::{Error, Result};
use crate::fo::{OueParams, OueReport};
use crate::postprocess::norm_sub_delta;
use crate::query::Interval;
use crate::tree::{DecompositionTree, NodeId};

/// Fake reports of the MGA baseline for one layer.
pub fn mga_tree<R: Rng + ?Sized>(
    tree: &DecompositionTree,
    layer: &[NodeId],
    target: Interval,
    fake: usize,
    params: &OueParams,
    rng: &mut R,
) -> Vec<OueReport> {
    let n = layer.len();
    let (inside, outside): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| tree.node(layer[i]).interval.is_subset_of(&target));
    let extra = mga_extra(n, inside.len(), params).min(outside.len());
    (0..fake)
        .map(|_| {
            let mut r = OueReport::zeros(n);
            for &i in &inside {
                r.bits[i] = true;
            }
            for j in sample(rng, outside.len(), extra) {
                r.bits[outside[j]] = true;
            }
            r
        })
        .collect()
}

/// `max(⌊p + (|L| - 1) q - k⌋, 0)`.
pub fn mga_extra(layer_len: usize, k: usize, params: &OueParams) -> usize {
    let x = (params.p + (layer_len as f64 - 1.0) * params.q - k as f64).floor();
    x.max(0.0) as usize
}

/// Weight of every node's pre-consistency estimate in the answer to
/// `target`, indexed by node id.
pub fn tree_coefficients(tree: &DecompositionTree, target: Interval) -> Vec<f64> {
    let mut c = vec![0.0; tree.len()];
    let mut stack: Vec<(NodeId, f64)> = query_cover(tree, target);
    while let Some((id, w)) = stack.pop() {
        let node = tree.node(id);
        if node.is_leaf() {
            c[id] += w;
            continue;
        }
        let k = node.children.len() as f64;
        let lambda = k / (k + 1.0);
        c[id] += lambda * w;
        for &ch in &node.children {
            stack.push((ch, (1.0 - lambda) * w));
        }
    }
    c
}

/// Per-layer assignment problem: maximize `Σ c_v max(f_v - δ, 0)` where
/// `f_v = base_v + a_v · unit` and `δ` is the Norm-Sub threshold.
///
/// Nodes are held in coefficient order (descending, index ascending on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct AotProblem {
    pub coeffs: Vec<f64>,
    pub base: Vec<f64>,
    pub unit: f64,
    pub fake: usize,
    /// Layer position of the `i`-th sorted node.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Nodes receiving all fake users.
    pub k: usize,
    /// Fake users on node `k`.
    pub trailing: usize,
    /// Counts in coefficient order.
    pub counts: Vec<usize>,
    pub value: f64,
}

impl Assignment {
    /// Counts by layer position.
    pub fn layer_counts(&self, order: &[usize]) -> Vec<usize> {
        let mut out = vec![0; order.len()];
        for (i, &pos) in order.iter().enumerate() {
            out[pos] = self.counts[i];
        }
        out
    }
}

impl AotProblem {
    /// `real_freqs` are the attacker's assumed real frequencies of the layer
    /// nodes, `real` and `fake` the user counts of the layer.
    pub fn new(
        coeffs: &[f64],
        real_freqs: &[f64],
        real: usize,
        fake: usize,
        params: &OueParams,
    ) -> Result<Self> {
        if coeffs.len() != real_freqs.len() {
            return Err(Error::LengthMismatch { expected: coeffs.len(), found: real_freqs.len() });
        }
        if coeffs.is_empty() {
            return Err(Error::EmptyInput("layer has no nodes"));
        }
        let total = (real + fake) as f64;
        if total == 0.0 {
            return Err(Error::EmptyInput("layer has no users"));
        }
        let unit = 1.0 / (total * (params.p - params.q));
        let share = real as f64 / total;
        let mut order: Vec<usize> = (0..coeffs.len()).collect();
        order.sort_by(|&a, &b| coeffs[b].total_cmp(&coeffs[a]).then(a.cmp(&b)));
        Ok(AotProblem {
            coeffs: order.iter().map(|&i| coeffs[i]).collect(),
            base: order
                .iter()
                .map(|&i| share * real_freqs[i] - fake as f64 * params.q * unit)
                .collect(),
            unit,
            fake,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn all_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    /// Expected post-Norm-Sub objective of `counts` (coefficient order).
    pub fn value(&self, counts: &[usize]) -> f64 {
        let f: Vec<f64> =
            self.base.iter().zip(counts).map(|(b, a)| b + *a as f64 * self.unit).collect();
        let delta = norm_sub_delta(&f).expect("finite, non-empty");
        self.coeffs.iter().zip(&f).map(|(c, x)| c * (x - delta).max(0.0)).sum()
    }

    /// `(M, …, M, t, 0, …, 0)` with `k` full entries.
    pub fn po_counts(&self, k: usize, t: usize) -> Vec<usize> {
        let mut v = vec![0; self.len()];
        v[..k].fill(self.fake);
        if k < self.len() {
            v[k] = t;
        }
        v
    }

    fn assignment(&self, k: usize, t: usize) -> Assignment {
        // (k, M) is the same vector as (k + 1, 0)
        let (k, t) = if t == self.fake && k < self.len() { (k + 1, 0) } else { (k, t) };
        let counts = self.po_counts(k, t);
        let value = self.value(&counts);
        Assignment { k, trailing: t, counts, value }
    }

    fn check(&self) -> Result<()> {
        if self.all_zero() {
            return Err(Error::Infeasible("every tree coefficient on the layer is zero".into()));
        }
        Ok(())
    }
}

fn better(a: &Assignment, best: &Option<Assignment>) -> bool {
    best.as_ref().is_none_or(|b| a.value > b.value)
}

/// Evaluate every potential-optimal form.
pub fn aot_assignment_bruteforce(p: &AotProblem) -> Result<Assignment> {
    p.check()?;
    let mut best: Option<Assignment> = None;
    for k in 0..=p.len() {
        let trailing = if k == p.len() { 1 } else { p.fake.max(1) };
        for t in 0..trailing {
            let a = p.assignment(k, t);
            if better(&a, &best) {
                best = Some(a);
            }
        }
    }
    Ok(best.expect("at least one form"))
}

/// Every integer assignment in `[0, M]^n`; for small instances only.
pub fn aot_assignment_exhaustive(p: &AotProblem) -> Result<Assignment> {
    let n = p.len();
    let states = (p.fake as u64 + 1).checked_pow(n as u32).filter(|s| *s <= 50_000_000);
    let Some(states) = states else {
        return Err(Error::param("instance too large to enumerate"));
    };
    let mut counts = vec![0usize; n];
    let mut best: Option<Assignment> = None;
    for _ in 0..states {
        let value = p.value(&counts);
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(Assignment { k: 0, trailing: 0, counts: counts.clone(), value });
        }
        for c in counts.iter_mut() {
            *c += 1;
            if *c <= p.fake {
                break;
            }
            *c = 0;
        }
    }
    Ok(best.expect("non-empty enumeration"))
}

/// Potential-optimal search in `O(n² log n)`.
///
/// For a fixed number `k` of full nodes the objective is piecewise linear in
/// the trailing count `t`: flat while node `k` sits below the threshold
/// computed without it, then linear between the points where an active node
/// drops out. Only integers next to those breakpoints need scoring; the best
/// one per `k` is then scored exactly.
pub fn aot_assignment_fast(p: &AotProblem) -> Result<Assignment> {
    p.check()?;
    let n = p.len();
    let m = p.fake;
    let u = p.unit;
    let mut best: Option<Assignment> = None;
    for k in 0..=n {
        if k == n || m == 0 {
            let a = p.assignment(k, 0);
            if better(&a, &best) {
                best = Some(a);
            }
            continue;
        }
        let cx = p.coeffs[k];
        let fx = p.base[k];
        // other nodes, largest value first
        let mut others: Vec<(f64, f64)> = (0..n)
            .filter(|&i| i != k)
            .map(|i| {
                let full = if i < k { m as f64 * u } else { 0.0 };
                (p.base[i] + full, p.coeffs[i])
            })
            .collect();
        others.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ys: Vec<f64> = others.iter().map(|o| o.0).collect();

        let mut cands: Vec<(f64, usize)> = Vec::new();
        let mut push = |t: f64, v: f64| {
            if (0.0..=m as f64).contains(&t) {
                cands.push((v, t as usize));
            }
        };

        // threshold with node k inactive
        let (delta_o, active_o) = if ys.is_empty() {
            (f64::NEG_INFINITY, 0)
        } else {
            let d = norm_sub_delta(&ys).expect("finite");
            (d, ys.iter().filter(|y| **y > d).count())
        };
        let t_enter = if ys.is_empty() { f64::NEG_INFINITY } else { (delta_o - fx) / u };
        if t_enter >= 0.0 {
            let v1: f64 = others[..active_o].iter().map(|(y, c)| c * (y - delta_o)).sum();
            push(0.0, v1);
            if t_enter >= m as f64 {
                cands.sort_by(|a, b| b.0.total_cmp(&a.0));
                let a = p.assignment(k, cands[0].1);
                if better(&a, &best) {
                    best = Some(a);
                }
                continue;
            }
        }
        // node k active from t0 on
        let t0 = t_enter.max(0.0);
        let mut active = if t_enter >= 0.0 {
            active_o
        } else {
            let mut f = ys.clone();
            f.push(fx);
            let d = norm_sub_delta(&f).expect("finite");
            ys.iter().filter(|y| **y > d).count()
        };
        let mut s: f64 = ys[..active].iter().sum();
        let mut cs: f64 = others[..active].iter().map(|o| o.1).sum();
        let mut cy: f64 = others[..active].iter().map(|(y, c)| c * y).sum();
        let mut lo = t0;
        loop {
            let mm = active as f64;
            let line = |t: f64| {
                let g = fx + t * u;
                let delta = (s + g - 1.0) / (mm + 1.0);
                cy + cx * g - (cs + cx) * delta
            };
            let hi = if active > 0 {
                let y = ys[active - 1];
                ((mm + 1.0) * y - s - fx + 1.0) / u
            } else {
                f64::INFINITY
            };
            let end = hi.min(m as f64);
            let (a, b) = (lo.ceil(), end.floor());
            if a <= b {
                push(a, line(a));
                push(b, line(b));
            }
            if hi >= m as f64 || active == 0 {
                break;
            }
            let (y, c) = others[active - 1];
            s -= y;
            cs -= c;
            cy -= c * y;
            active -= 1;
            lo = hi;
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if let Some(&(_, t)) = cands.first() {
            let a = p.assignment(k, t);
            if better(&a, &best) {
                best = Some(a);
            }
        }
    }
    Ok(best.expect("k = n is always scored"))
}

/// Fallback when every coefficient on the layer is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroStrategy {
    Zero,
    One,
    Path,
}

pub fn aot_zero_coeff_strategy(
    strategy: ZeroStrategy,
    tree: &DecompositionTree,
    layer: &[NodeId],
    target: Interval,
) -> Vec<bool> {
    match strategy {
        ZeroStrategy::Zero => vec![false; layer.len()],
        ZeroStrategy::One => vec![true; layer.len()],
        ZeroStrategy::Path => {
            layer.iter().map(|&id| tree.node(id).interval.intersects(&target)).collect()
        }
    }
}

/// Rewrite `report` to carry a one count drawn from the honest law
/// `Bin(n - 1, q) + Bin(1, 1/2)`.
pub fn aaot_transform<R: Rng + ?Sized>(report: &OueReport, q: f64, rng: &mut R) -> OueReport {
    let n = report.len();
    if n == 0 {
        return report.clone();
    }
    let noise = Binomial::new((n - 1) as u64, q).expect("q in (0, 1)").sample(rng) as usize;
    let x = noise + usize::from(rng.random::<bool>());
    aaot_to_count(report, x, rng)
}

/// Flip random bits of `report` until it has exactly `x` ones.
pub fn aaot_to_count<R: Rng + ?Sized>(report: &OueReport, x: usize, rng: &mut R) -> OueReport {
    let mut out = report.clone();
    let ones = report.ones();
    let (from, need) = if x > ones { (false, x - ones) } else { (true, ones - x) };
    let pool: Vec<usize> = (0..report.len()).filter(|&i| report.bits[i] == from).collect();
    for j in sample(rng, pool.len(), need.min(pool.len())) {
        out.bits[pool[j]] = !from;
    }
    out
}

/// Assignment search used by [`Aot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Search {
    #[default]
    Fast,
    BruteForce,
}

/// The attacker's picture of the final tree: the actual tree so far, grown
/// further on the assumption that real data is uniform.
pub fn predict_tree(req: &LayerRequest<'_>) -> DecompositionTree {
    let mut tree = req.tree.clone();
    let c = tree.domain() as f64;
    let mut depth = req.depth;
    while depth < req.config.max_layers() {
        let theta = req.thresholds[depth];
        let split = next_split(&tree, req.config.fanout, theta, |id| {
            tree.node(id).interval.len() as f64 / c
        });
        match split {
            Some(s) => {
                tree.grow_layer(&s).expect("split partitions parents");
            }
            None => break,
        }
        depth += 1;
    }
    tree
}

/// Spread per-node counts over `fake` reports round robin, so one counts
/// differ by at most one between reports.
pub fn realize_counts(counts: &[usize], fake: usize) -> Vec<OueReport> {
    let mut reports = vec![OueReport::zeros(counts.len()); fake];
    if fake == 0 {
        return reports;
    }
    let mut next = 0;
    for (v, &a) in counts.iter().enumerate() {
        for _ in 0..a.min(fake) {
            reports[next].bits[v] = true;
            next = (next + 1) % fake;
        }
    }
    reports
}

/// MGA on the tree.
#[derive(Debug, Clone)]
pub struct MgaTree {
    pub target: Interval,
}

impl TreeAttack for MgaTree {
    fn layer_reports(
        &mut self,
        req: &LayerRequest<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<OueReport>> {
        Ok(mga_tree(req.tree, req.layer(), self.target, req.fake, &req.params, rng))
    }
}

/// Attack on tree; with `adaptive` set, every report is rewritten by
/// [`aaot_transform`] (AAoT).
#[derive(Debug, Clone)]
pub struct Aot {
    pub target: Interval,
    pub strategy: ZeroStrategy,
    pub search: Search,
    /// Real users the attacker believes take part in total; `None` uses the
    /// true count.
    pub assumed_real: Option<usize>,
    pub adaptive: bool,
    /// Chosen assignment per collected layer, `None` where the fallback ran.
    pub log: Vec<Option<Assignment>>,
}

impl Aot {
    pub fn new(target: Interval, strategy: ZeroStrategy) -> Self {
        Aot {
            target,
            strategy,
            search: Search::Fast,
            assumed_real: None,
            adaptive: false,
            log: Vec::new(),
        }
    }

    pub fn adaptive(mut self) -> Self {
        self.adaptive = true;
        self
    }
}

impl TreeAttack for Aot {
    fn layer_reports(
        &mut self,
        req: &LayerRequest<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<OueReport>> {
        let layer = req.layer();
        let predicted = predict_tree(req);
        let all = tree_coefficients(&predicted, self.target);
        let coeffs: Vec<f64> = layer.iter().map(|id| all[*id]).collect();
        let c = req.tree.domain() as f64;
        let freqs: Vec<f64> =
            layer.iter().map(|id| req.tree.node(*id).interval.len() as f64 / c).collect();
        let real = match self.assumed_real {
            Some(n) => req.config.layer_sizes(n)[req.depth - 1],
            None => req.real,
        };
        let problem = AotProblem::new(&coeffs, &freqs, real, req.fake, &req.params)?;
        let reports = if problem.all_zero() {
            self.log.push(None);
            let bits = aot_zero_coeff_strategy(self.strategy, req.tree, layer, self.target);
            vec![OueReport { bits }; req.fake]
        } else {
            let a = match self.search {
                Search::Fast => aot_assignment_fast(&problem)?,
                Search::BruteForce => aot_assignment_bruteforce(&problem)?,
            };
            let reports = realize_counts(&a.layer_counts(&problem.order), req.fake);
            self.log.push(Some(a));
            reports
        };
        if self.adaptive {
            Ok(reports.iter().map(|r| aaot_transform(r, req.params.q, rng)).collect())
        } else {
            Ok(reports)
        }
    }
}
