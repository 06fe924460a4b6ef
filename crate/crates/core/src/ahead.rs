//! Tree-based adaptive hierarchical decomposition over a 1-D domain.
//!
//! Users are split across the `log_B(c)` potential layers up front. Layer `t`
//! is collected with OUE over its node list, Norm-Sub'ed, and each node whose
//! estimate reaches the split threshold is cut into `B` children for layer
//! `t + 1`. A node below the threshold is carried into the next layer as a
//! single child over the same interval, so every layer partitions `[0, c)`.
//! Collection stops when no node splits or the last layer is reached, after
//! which tree consistency runs once.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fo::{OueParams, OueReport, OueTally};
use crate::postprocess::{norm_sub, tree_consistency};
use crate::query::{Interval, RangeQuery};
use crate::rng;
use crate::tree::{split_interval, DecompositionTree, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AheadConfig {
    #[serde(default = "default_domain")]
    pub domain: usize,
    #[serde(default = "default_fanout")]
    pub fanout: usize,
    /// Fixed split threshold; `None` uses twice the layer's OUE estimate
    /// standard deviation.
    #[serde(default)]
    pub theta: Option<f64>,
    pub epsilon: f64,
    /// Share of users per potential layer; `None` splits evenly.
    #[serde(default)]
    pub layer_partition: Option<Vec<f64>>,
}

fn default_domain() -> usize {
    1024
}

fn default_fanout() -> usize {
    2
}

impl AheadConfig {
    pub fn new(epsilon: f64) -> Self {
        AheadConfig {
            domain: default_domain(),
            fanout: default_fanout(),
            theta: None,
            epsilon,
            layer_partition: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fanout < 2 {
            return Err(Error::param(format!("fanout must be at least 2, got {}", self.fanout)));
        }
        let mut c = self.domain;
        while c > 1 && c % self.fanout == 0 {
            c /= self.fanout;
        }
        if c != 1 || self.domain < self.fanout {
            return Err(Error::param(format!(
                "domain {} is not a power of fanout {}",
                self.domain, self.fanout
            )));
        }
        if let Some(t) = self.theta {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::param(format!("split threshold must be >= 0, got {t}")));
            }
        }
        if let Some(parts) = &self.layer_partition {
            if parts.len() != self.max_layers() {
                return Err(Error::LengthMismatch {
                    expected: self.max_layers(),
                    found: parts.len(),
                });
            }
            let sum: f64 = parts.iter().sum();
            if parts.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::param("layer partition must be non-negative and sum to 1"));
            }
        }
        OueParams::new(self.epsilon, 1)?;
        Ok(())
    }

    /// `log_B(c)`: layers below the root in a complete tree.
    pub fn max_layers(&self) -> usize {
        let mut h = 0;
        let mut c = self.domain;
        while c > 1 {
            c /= self.fanout;
            h += 1;
        }
        h
    }

    /// Users per layer (index 0 is depth 1) by largest remainder.
    pub fn layer_sizes(&self, total: usize) -> Vec<usize> {
        let h = self.max_layers();
        let shares = match &self.layer_partition {
            Some(p) => p.clone(),
            None => vec![1.0 / h as f64; h],
        };
        apportion(total, &shares)
    }

    /// Split threshold for a layer collected from `users` reports.
    pub fn threshold(&self, users: usize) -> f64 {
        match self.theta {
            Some(t) => t,
            None => {
                let params = OueParams::new(self.epsilon, 1).expect("validated epsilon");
                2.0 * params.estimate_std(users.max(1), 0.0)
            }
        }
    }
}

/// Split `total` in proportion to `shares`, handing leftovers to the largest
/// fractional parts (earlier index on ties).
pub fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Number of fake users that makes them a `rho` share of all users.
pub fn fake_users(real: usize, rho: f64) -> usize {
    if rho <= 0.0 {
        return 0;
    }
    (rho * real as f64 / (1.0 - rho)).round() as usize
}

/// What the server hands an attacker when it opens a layer.
pub struct LayerRequest<'a> {
    /// Tree with the requested layer already appended (estimates unset).
    pub tree: &'a DecompositionTree,
    pub depth: usize,
    pub fake: usize,
    pub real: usize,
    /// OUE parameters with `n` equal to the layer size.
    pub params: OueParams,
    pub config: &'a AheadConfig,
    /// Split threshold of every depth, index 0 unused.
    pub thresholds: &'a [f64],
}

impl LayerRequest<'_> {
    pub fn layer(&self) -> &[NodeId] {
        self.tree.layer(self.depth)
    }
}

/// Fake-user behaviour on the tree protocol.
pub trait TreeAttack {
    /// Exactly `req.fake` reports of length `req.params.n`.
    fn layer_reports(&mut self, req: &LayerRequest<'_>, rng: &mut dyn RngCore)
        -> Result<Vec<OueReport>>;
}

/// Statistics the server keeps for one collected layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRound {
    pub depth: usize,
    pub nodes: usize,
    pub real: usize,
    pub fake: usize,
    pub threshold: f64,
    /// One count of each report, real users first.
    pub ones: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct AheadRun {
    pub tree: DecompositionTree,
    pub rounds: Vec<LayerRound>,
}

/// Children of each node in the deepest layer, or `None` when nothing splits.
pub fn next_split(
    tree: &DecompositionTree,
    fanout: usize,
    theta: f64,
    freq: impl Fn(NodeId) -> f64,
) -> Option<Vec<Vec<Interval>>> {
    let layer = tree.layer(tree.height());
    let mut any = false;
    let split = layer
        .iter()
        .map(|&id| {
            let iv = tree.node(id).interval;
            let parts = split_interval(iv, fanout);
            if parts.len() > 1 && freq(id) >= theta {
                any = true;
                parts
            } else {
                vec![iv]
            }
        })
        .collect();
    any.then_some(split)
}

/// Index of the node of `layer` holding each domain value.
fn value_index(tree: &DecompositionTree, depth: usize) -> Vec<usize> {
    let mut idx = vec![0; tree.domain()];
    for (i, &id) in tree.layer(depth).iter().enumerate() {
        let iv = tree.node(id).interval;
        idx[iv.lo..iv.hi].fill(i);
    }
    idx
}

/// Run the protocol. Without a hook no fake users join, whatever `rho` is.
pub fn run_ahead<R: Rng + ?Sized>(
    values: &[usize],
    config: &AheadConfig,
    mut hook: Option<&mut dyn TreeAttack>,
    rho: f64,
    rng: &mut R,
) -> Result<AheadRun> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::EmptyInput("no users"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::param(format!("rho must lie in [0, 1), got {rho}")));
    }
    if let Some(&v) = values.iter().find(|&&v| v >= config.domain) {
        return Err(Error::IndexOutOfRange { index: v, size: config.domain });
    }
    let seed: u64 = rng.random();
    let h = config.max_layers();
    let fakes = if hook.is_some() { fake_users(values.len(), rho) } else { 0 };
    let real_sizes = config.layer_sizes(values.len());
    let fake_sizes = config.layer_sizes(fakes);

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::PARTITION));

    let mut thresholds = vec![f64::NAN; h + 1];
    for t in 1..=h {
        thresholds[t] = config.threshold(real_sizes[t - 1] + fake_sizes[t - 1]);
    }
    let base = OueParams::new(config.epsilon, 1)?;
    let mut tree = DecompositionTree::new(config.domain);
    let mut split = Some(vec![split_interval(Interval::new(0, config.domain), config.fanout)]);
    let mut rounds = Vec::new();
    let mut start = 0;

    for depth in 1..=h {
        let Some(children) = split.take() else { break };
        tree.grow_layer(&children)?;
        let layer = tree.layer(depth).to_vec();
        let params = base.with_len(layer.len());
        let (real, fake) = (real_sizes[depth - 1], fake_sizes[depth - 1]);
        let users = &order[start..start + real];
        start += real;

        let mut tally = OueTally::new(params);
        let lookup = value_index(&tree, depth);
        let mut honest = rng::stream(seed, rng::HONEST + depth as u64);
        for &u in users {
            tally.add_honest(lookup[values[u]], &mut honest);
        }
        if fake > 0 {
            let hook = hook.as_deref_mut().expect("fake users only with a hook");
            let req = LayerRequest {
                tree: &tree,
                depth,
                fake,
                real,
                params,
                config,
                thresholds: &thresholds,
            };
            let mut attack_rng = rng::stream(seed, rng::ATTACK + depth as u64);
            let reports = hook.layer_reports(&req, &mut attack_rng)?;
            if reports.len() != fake {
                return Err(Error::LengthMismatch { expected: fake, found: reports.len() });
            }
            for r in &reports {
                tally.add_report(r)?;
            }
        }
        if tally.users() == 0 {
            return Err(Error::EmptyInput("a layer received no users"));
        }
        let est = norm_sub(&tally.estimate()?)?.normalized;
        for (&id, f) in layer.iter().zip(&est) {
            tree.node_mut(id).f_hat = *f;
        }
        rounds.push(LayerRound {
            depth,
            nodes: layer.len(),
            real,
            fake,
            threshold: thresholds[depth],
            ones: tally.ones_per_user().to_vec(),
        });
        if depth < h {
            split = next_split(&tree, config.fanout, thresholds[depth], |id| tree.node(id).f_hat);
        }
    }
    tree_consistency(&mut tree);
    // the root is known, not estimated
    tree.node_mut(tree.root()).f_tilde = 1.0;
    Ok(AheadRun { tree, rounds })
}

/// Nodes answering `iv` with their weights: a node inside `iv` whose parent
/// is not counts fully, a leaf cut by an endpoint counts by overlap share.
pub fn query_cover(tree: &DecompositionTree, iv: Interval) -> Vec<(NodeId, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        let niv = node.interval;
        if niv.is_subset_of(&iv) {
            out.push((id, 1.0));
        } else if niv.intersects(&iv) {
            if node.is_leaf() {
                out.push((id, niv.overlap(&iv) as f64 / niv.len() as f64));
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
    }
    out
}

/// Nodes inside `q` whose parent is not.
pub fn query_decomposition(tree: &DecompositionTree, q: &RangeQuery) -> Result<Vec<NodeId>> {
    let iv = q.single()?;
    Ok(query_cover(tree, iv)
        .into_iter()
        .filter(|(id, _)| tree.node(*id).interval.is_subset_of(&iv))
        .map(|(id, _)| id)
        .collect())
}

pub fn estimate_query(tree: &DecompositionTree, q: &RangeQuery) -> Result<f64> {
    let iv = q.single()?;
    Ok(query_cover(tree, iv).iter().map(|(id, w)| w * tree.node(*id).f_tilde).sum())
}
