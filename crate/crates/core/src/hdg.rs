//! Grid-based protocol: one OLH round per grid, cross-grid consistency plus
//! Norm-Sub, and response-matrix query estimation.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::ahead::fake_users;
use crate::error::{Error, Result};
use crate::fo::{olh_estimate, olh_perturb, support_counts, HashFamily, HashPair, OlhParams};
use crate::grid::{GridKind, GridLayout, GridSet};
use crate::fo::hash::MIN_FAMILY_SIZE;
use crate::postprocess::{grid_consistency, norm_sub_grids};
use crate::query::RangeQuery;
use crate::rng;

const IPF_ROUNDS: usize = 200;
const IPF_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HdgConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_domain")]
    pub domain: usize,
    #[serde(default = "default_g1")]
    pub g1: usize,
    #[serde(default = "default_g2")]
    pub g2: usize,
    pub epsilon: f64,
    #[serde(default = "default_rounds")]
    pub pp_rounds: usize,
    /// Minimum number of hash functions; `None` matches the users per grid.
    #[serde(default)]
    pub family_size: Option<usize>,
}

fn default_d() -> usize {
    5
}
fn default_domain() -> usize {
    64
}
fn default_g1() -> usize {
    16
}
fn default_g2() -> usize {
    4
}
fn default_rounds() -> usize {
    1
}

impl HdgConfig {
    pub fn new(epsilon: f64) -> Self {
        HdgConfig {
            d: default_d(),
            domain: default_domain(),
            g1: default_g1(),
            g2: default_g2(),
            epsilon,
            pp_rounds: default_rounds(),
            family_size: None,
        }
    }

    pub fn layout(&self) -> Result<GridLayout> {
        GridLayout::new(self.d, self.domain, self.g1, self.g2)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        if self.pp_rounds == 0 {
            return Err(Error::param("pp_rounds must be at least 1"));
        }
        OlhParams::new(self.epsilon)?;
        Ok(())
    }

    /// Hash family for rounds of about `users_per_grid` reports.
    pub fn family(&self, users_per_grid: usize) -> Result<HashFamily> {
        let olh = OlhParams::new(self.epsilon)?;
        let cells = self.g1.max(self.g2 * self.g2);
        let size = self.family_size.unwrap_or(users_per_grid).max(MIN_FAMILY_SIZE);
        HashFamily::for_cells(cells, olh.g, size)
    }
}

/// Balanced random partition of `total` users into `groups` groups.
pub fn assign_user_groups<R: Rng + ?Sized>(
    total: usize,
    groups: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if groups == 0 || total < groups {
        return Err(Error::param(format!("{total} users cannot fill {groups} groups")));
    }
    let mut out: Vec<usize> = (0..total).map(|i| i % groups).collect();
    out.shuffle(rng);
    Ok(out)
}

/// What the server reveals to an attacker on the grid protocol.
pub struct GridRequest<'a> {
    pub layout: GridLayout,
    pub family: HashFamily,
    pub olh: OlhParams,
    /// Fake users per grid, in `layout.kinds()` order.
    pub fake: &'a [usize],
    pub real: &'a [usize],
}

pub trait GridAttack {
    /// For each grid, exactly `req.fake[i]` hash pairs.
    fn reports(&mut self, req: &GridRequest<'_>, rng: &mut dyn RngCore)
        -> Result<Vec<Vec<HashPair>>>;
}

/// One grid's OLH round as the server saw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRound {
    pub kind: GridKind,
    pub real: usize,
    pub fake: usize,
    /// Function id of every report, real users first.
    pub fn_ids: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct HdgRun {
    pub grids: GridSet,
    pub rounds: Vec<GridRound>,
}

/// Run the protocol. Without a hook no fake users join.
pub fn run_hdg<R: Rng + ?Sized>(
    records: &[Vec<usize>],
    config: &HdgConfig,
    hook: Option<&mut dyn GridAttack>,
    rho: f64,
    rng: &mut R,
) -> Result<HdgRun> {
    config.validate()?;
    let layout = config.layout()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("no users"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::param(format!("rho must lie in [0, 1), got {rho}")));
    }
    for r in records {
        if r.len() != config.d {
            return Err(Error::LengthMismatch { expected: config.d, found: r.len() });
        }
        if let Some(&v) = r.iter().find(|&&v| v >= config.domain) {
            return Err(Error::IndexOutOfRange { index: v, size: config.domain });
        }
    }
    let seed: u64 = rng.random();
    let kinds = layout.kinds();
    let groups = kinds.len();
    let fakes = if hook.is_some() { fake_users(records.len(), rho) } else { 0 };

    let real_group = assign_user_groups(records.len(), groups, &mut rng::stream(seed, rng::PARTITION))?;
    let mut real = vec![0; groups];
    for g in &real_group {
        real[*g] += 1;
    }
    let mut fake = vec![0; groups];
    if fakes > 0 {
        let mut part = rng::stream(seed, rng::PARTITION + 1);
        if fakes >= groups {
            for g in assign_user_groups(fakes, groups, &mut part)? {
                fake[g] += 1;
            }
        } else {
            for g in rand::seq::index::sample(&mut part, groups, fakes) {
                fake[g] += 1;
            }
        }
    }
    let per_grid = (records.len() + fakes).div_ceil(groups);
    let family = config.family(per_grid)?;
    let olh = OlhParams::new(config.epsilon)?;

    let mut pairs: Vec<Vec<HashPair>> = vec![Vec::new(); groups];
    for (gi, kind) in kinds.iter().enumerate() {
        let mut honest = rng::stream(seed, rng::HONEST + gi as u64);
        let mut out = Vec::with_capacity(real[gi] + fake[gi]);
        for (r, _) in records.iter().zip(&real_group).filter(|(_, g)| **g == gi) {
            out.push(olh_perturb(layout.cell_of(*kind, r), &family, &olh, &mut honest)?);
        }
        pairs[gi] = out;
    }
    if let Some(hook) = hook {
        if fakes > 0 {
            let req = GridRequest { layout, family, olh, fake: &fake, real: &real };
            let fake_pairs = hook.reports(&req, &mut rng::stream(seed, rng::ATTACK))?;
            if fake_pairs.len() != groups {
                return Err(Error::LengthMismatch { expected: groups, found: fake_pairs.len() });
            }
            for (gi, fp) in fake_pairs.into_iter().enumerate() {
                if fp.len() != fake[gi] {
                    return Err(Error::LengthMismatch { expected: fake[gi], found: fp.len() });
                }
                if let Some(bad) = fp.iter().find(|p| p.fn_id as usize >= family.size() || p.key >= olh.g) {
                    return Err(Error::param(format!("fake pair {bad:?} outside the hash family")));
                }
                pairs[gi].extend(fp);
            }
        }
    }

    let mut grids = GridSet::uniform(layout, family);
    let mut rounds = Vec::with_capacity(groups);
    for (gi, kind) in kinds.iter().enumerate() {
        let cells = layout.cells(*kind);
        if pairs[gi].is_empty() {
            return Err(Error::EmptyInput("a grid received no users"));
        }
        let counts = support_counts(&pairs[gi], &family, cells);
        grids.grids[gi].freqs = olh_estimate(&counts, pairs[gi].len(), &olh)?;
        rounds.push(GridRound {
            kind: *kind,
            real: real[gi],
            fake: fake[gi],
            fn_ids: pairs[gi].iter().map(|p| p.fn_id).collect(),
        });
    }
    post_process(&mut grids, config.pp_rounds)?;
    Ok(HdgRun { grids, rounds })
}

/// `rounds` passes of consistency followed by Norm-Sub on every grid.
pub fn post_process(grids: &mut GridSet, rounds: usize) -> Result<()> {
    for _ in 0..rounds {
        grid_consistency(grids);
        norm_sub_grids(grids)?;
    }
    Ok(())
}

/// Scale `idx` entries of `m` so they sum to `target`; zero-sum sets stay put.
fn fit(m: &mut [f64], idx: &[usize], target: f64) -> f64 {
    let s: f64 = idx.iter().map(|&i| m[i]).sum();
    if s > 0.0 {
        let k = target.max(0.0) / s;
        for &i in idx {
            m[i] *= k;
        }
    }
    (s - target).abs()
}

/// `g1 x g1` joint estimate of attributes `a < b` at 1-D cell granularity,
/// fitted to both 1-D grids and the pair's 2-D grid, normalized to sum 1.
pub fn response_matrix(grids: &GridSet, a: usize, b: usize) -> Vec<f64> {
    let l = grids.layout;
    let (g1, g2) = (l.g1, l.g2);
    let s = g1 / g2;
    let fa = &grids.grid(GridKind::OneD { attr: a }).freqs;
    let fb = &grids.grid(GridKind::OneD { attr: b }).freqs;
    let fab = &grids.grid(GridKind::TwoD { a, b }).freqs;
    let rows: Vec<Vec<usize>> = (0..g1).map(|i| (0..g1).map(|j| i * g1 + j).collect()).collect();
    let cols: Vec<Vec<usize>> = (0..g1).map(|j| (0..g1).map(|i| i * g1 + j).collect()).collect();
    let blocks: Vec<Vec<usize>> = (0..g2 * g2)
        .map(|cell| {
            let (r, c) = (cell / g2, cell % g2);
            let mut v = Vec::with_capacity(s * s);
            for i in r * s..(r + 1) * s {
                for j in c * s..(c + 1) * s {
                    v.push(i * g1 + j);
                }
            }
            v
        })
        .collect();
    let mut m = vec![1.0 / (g1 * g1) as f64; g1 * g1];
    for _ in 0..IPF_ROUNDS {
        let mut gap: f64 = 0.0;
        for (i, idx) in rows.iter().enumerate() {
            gap = gap.max(fit(&mut m, idx, fa[i]));
        }
        for (j, idx) in cols.iter().enumerate() {
            gap = gap.max(fit(&mut m, idx, fb[j]));
        }
        for (cell, idx) in blocks.iter().enumerate() {
            gap = gap.max(fit(&mut m, idx, fab[cell]));
        }
        if gap < IPF_TOL {
            break;
        }
    }
    let total: f64 = m.iter().sum();
    if total > 0.0 {
        m.iter_mut().for_each(|x| *x /= total);
    }
    m
}

/// Estimated frequency of `q`, trimmed to 2-D column boundaries first.
pub fn estimate_query(grids: &GridSet, q: &RangeQuery) -> Result<f64> {
    let l = grids.layout;
    if let Some(a) = q.attrs().find(|&a| a >= l.d) {
        return Err(Error::InvalidQuery(format!("attribute {a} outside the {} grid attributes", l.d)));
    }
    let q = l.trim(q);
    let attrs: Vec<usize> = q.attrs().collect();
    let w1 = l.width1();
    let in_cells = |attr: usize| -> Vec<bool> {
        let iv = q.range_or_full(attr, l.domain);
        (0..l.g1).map(|i| i * w1 >= iv.lo && (i + 1) * w1 <= iv.hi).collect()
    };
    if attrs.len() == 1 {
        let inside = in_cells(attrs[0]);
        let f = &grids.grid(GridKind::OneD { attr: attrs[0] }).freqs;
        return Ok(f.iter().zip(&inside).filter(|(_, i)| **i).map(|(x, _)| x).sum());
    }
    // 2 x 2 in/out tables per attribute pair
    let mut tables = Vec::new();
    for (x, &a) in attrs.iter().enumerate() {
        for (y, &b) in attrs.iter().enumerate().skip(x + 1) {
            let m = response_matrix(grids, a, b);
            let (ia, ib) = (in_cells(a), in_cells(b));
            let mut t = [0.0; 4];
            for i in 0..l.g1 {
                for j in 0..l.g1 {
                    let k = usize::from(!ia[i]) * 2 + usize::from(!ib[j]);
                    t[k] += m[i * l.g1 + j];
                }
            }
            tables.push((x, y, t));
        }
    }
    if attrs.len() == 2 {
        return Ok(tables[0].2[0]);
    }
    Ok(combine_pairs(attrs.len(), &tables))
}

/// IPF over the `2^k` in/out cells to the pairwise tables; returns the
/// all-in cell. Bit `i` of a cell index set means attribute `i` is out.
pub fn combine_pairs(k: usize, tables: &[(usize, usize, [f64; 4])]) -> f64 {
    let n = 1usize << k;
    let mut z = vec![1.0 / n as f64; n];
    let groups: Vec<Vec<Vec<usize>>> = tables
        .iter()
        .map(|(x, y, _)| {
            let mut g = vec![Vec::new(); 4];
            for cell in 0..n {
                let ox = (cell >> x) & 1;
                let oy = (cell >> y) & 1;
                g[ox * 2 + oy].push(cell);
            }
            g
        })
        .collect();
    for _ in 0..IPF_ROUNDS {
        let mut gap: f64 = 0.0;
        for ((_, _, t), g) in tables.iter().zip(&groups) {
            for (idx, target) in g.iter().zip(t) {
                gap = gap.max(fit(&mut z, idx, *target));
            }
        }
        if gap < IPF_TOL {
            break;
        }
    }
    let total: f64 = z.iter().sum();
    if total > 0.0 {
        z[0] / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::Interval;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_records(n: usize, d: usize, c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(0..c)).collect()).collect()
    }

    #[test]
    fn groups_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = assign_user_groups(8, 3, &mut rng).unwrap();
        let mut sizes = [0; 3];
        g.iter().for_each(|x| sizes[*x] += 1);
        sizes.sort();
        assert_eq!(sizes, [2, 3, 3]);
        assert!(assign_user_groups(2, 3, &mut rng).is_err());
    }

    #[test]
    fn group_choice_is_uniform_per_user() {
        // chi-square over which group user 0 lands in, across shuffles
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 10_000;
        let mut hist = [0f64; 15];
        for _ in 0..trials {
            hist[assign_user_groups(150, 15, &mut rng).unwrap()[0]] += 1.0;
        }
        let e = trials as f64 / 15.0;
        let chi2: f64 = hist.iter().map(|o| (o - e).powi(2) / e).sum();
        assert!(chi2 < crate::stats::chi_square_critical(14, 0.01));
    }

    #[test]
    fn family_matches_round_size() {
        let cfg = HdgConfig::new(1.0);
        let f = cfg.family(6_667).unwrap();
        assert_eq!(f.prime, 83);
        assert_eq!(cfg.family(10).unwrap().size(), 289);
    }

    fn concentrated(layout: GridLayout, q: &RangeQuery) -> GridSet {
        let fam = HashFamily::new(17, 4).unwrap();
        let mut gs = GridSet::uniform(layout, fam);
        for g in &mut gs.grids {
            let inside = layout.query_cells(g.kind, q);
            let mut f = vec![0.0; g.freqs.len()];
            for (k, c) in inside.iter().enumerate() {
                f[*c] = (k + 1) as f64;
            }
            let s: f64 = f.iter().sum();
            g.freqs = f.iter().map(|x| x / s).collect();
        }
        gs
    }

    #[test]
    fn concentrated_grids_answer_one() {
        let layout = GridLayout::new(4, 64, 16, 4).unwrap();
        let q = RangeQuery::new(
            vec![(0, Interval::new(16, 48)), (1, Interval::new(0, 16)), (3, Interval::new(32, 64))],
            64,
        )
        .unwrap();
        let gs = concentrated(layout, &q);
        let est = estimate_query(&gs, &q).unwrap();
        assert!((est - 1.0).abs() < 1e-9, "{est}");
        let pair = RangeQuery::new(vec![(0, Interval::new(16, 48)), (3, Interval::new(32, 64))], 64)
            .unwrap();
        assert!((estimate_query(&gs, &pair).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_domain_answers_one_for_any_grids() {
        let layout = GridLayout::new(3, 64, 16, 4).unwrap();
        let mut gs = GridSet::uniform(layout, HashFamily::new(17, 4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in &mut gs.grids {
            let f: Vec<f64> = g.freqs.iter().map(|_| rng.random::<f64>()).collect();
            let s: f64 = f.iter().sum();
            g.freqs = f.iter().map(|x| x / s).collect();
        }
        let q = RangeQuery::new(vec![(0, Interval::new(0, 64)), (1, Interval::new(0, 64)), (2, Interval::new(0, 64))], 64)
            .unwrap();
        assert!((estimate_query(&gs, &q).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn independent_product_is_recovered() {
        // grids of an exact product distribution are a fixed point of the fit
        let layout = GridLayout::new(3, 64, 16, 4).unwrap();
        let mut gs = GridSet::uniform(layout, HashFamily::new(17, 4).unwrap());
        let marg: Vec<Vec<f64>> = (0..3)
            .map(|a| {
                let w: Vec<f64> = (0..16).map(|i| ((i * (a + 2)) % 7 + 1) as f64).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            })
            .collect();
        for g in &mut gs.grids {
            match g.kind {
                GridKind::OneD { attr } => g.freqs = marg[attr].clone(),
                GridKind::TwoD { a, b } => {
                    for cell in 0..16 {
                        let (r, c) = (cell / 4, cell % 4);
                        let ra: f64 = marg[a][r * 4..r * 4 + 4].iter().sum();
                        let cb: f64 = marg[b][c * 4..c * 4 + 4].iter().sum();
                        g.freqs[cell] = ra * cb;
                    }
                }
            }
        }
        let q = RangeQuery::new(vec![(0, Interval::new(8, 40)), (1, Interval::new(20, 60)), (2, Interval::new(0, 16))], 64)
            .unwrap();
        let t = layout.trim(&q);
        let truth: f64 = (0..3)
            .map(|a| {
                let iv = t.range_of(a).unwrap();
                marg[a][iv.lo / 4..iv.hi / 4].iter().sum::<f64>()
            })
            .product();
        assert!((estimate_query(&gs, &q).unwrap() - truth).abs() < 1e-9);
    }

    #[test]
    fn honest_uniform_two_d_cells() {
        let cfg = HdgConfig { d: 2, ..HdgConfig::new(1.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let recs = uniform_records(90_000, 2, 64, &mut rng);
        let mut c = cfg.clone();
        c.pp_rounds = 1;
        let run = run_hdg(&recs, &c, None, 0.0, &mut rng).unwrap();
        let two = run.grids.grid(GridKind::TwoD { a: 0, b: 1 });
        let olh = OlhParams::new(1.0).unwrap();
        let sigma = olh.estimate_std(30_000);
        for f in &two.freqs {
            assert!((f - 1.0 / 16.0).abs() < 4.0 * sigma, "{f}");
        }
        for g in &run.grids.grids {
            assert!((g.freqs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(g.freqs.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn consistent_nonnegative_grids_only_see_norm_sub() {
        let layout = GridLayout::new(3, 64, 16, 4).unwrap();
        let gs = GridSet::uniform(layout, HashFamily::new(17, 4).unwrap());
        let mut after = gs.clone();
        post_process(&mut after, 1).unwrap();
        for (a, b) in gs.grids.iter().zip(&after.grids) {
            for (x, y) in a.freqs.iter().zip(&b.freqs) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn honest_queries_are_accurate() {
        let cfg = HdgConfig::new(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs = uniform_records(100_000, 5, 64, &mut rng);
        let run = run_hdg(&recs, &cfg, None, 0.0, &mut rng).unwrap();
        let mut err = 0.0;
        for _ in 0..20 {
            let mut attrs: Vec<usize> = (0..5).collect();
            attrs.shuffle(&mut rng);
            let ranges = attrs[..3]
                .iter()
                .map(|&a| {
                    let len = rng.random_range(8..=24);
                    let lo = rng.random_range(0..=64 - len);
                    (a, Interval::new(lo, lo + len))
                })
                .collect();
            let q = cfg.layout().unwrap().trim(&RangeQuery::new(ranges, 64).unwrap());
            let truth = recs.iter().filter(|r| q.contains(r)).count() as f64 / recs.len() as f64;
            err += (estimate_query(&run.grids, &q).unwrap() - truth).abs();
        }
        assert!(err / 20.0 < 0.08, "mean abs error {}", err / 20.0);
    }

    #[test]
    fn cell_aligned_complements_add_to_one() {
        let cfg = HdgConfig { d: 3, ..HdgConfig::new(1.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let recs = uniform_records(30_000, 3, 64, &mut rng);
        let run = run_hdg(&recs, &cfg, None, 0.0, &mut rng).unwrap();
        for cut in [16, 32, 48] {
            let a = RangeQuery::new(vec![(1, Interval::new(0, cut))], 64).unwrap();
            let b = RangeQuery::new(vec![(1, Interval::new(cut, 64))], 64).unwrap();
            let s = estimate_query(&run.grids, &a).unwrap() + estimate_query(&run.grids, &b).unwrap();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
