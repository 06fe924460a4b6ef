//! Attacks on the grid protocol: MGA, AoG with its size and column
//! constraints, and the HAoG fallback.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fo::{HashFamily, HashPair};
use crate::grid::{GridKind, GridLayout};
use crate::hdg::{GridAttack, GridRequest};
use crate::query::RangeQuery;

/// Minimum support sizes for 1-D and 2-D grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeConstraints {
    pub w1: f64,
    pub w2: f64,
}

impl SizeConstraints {
    /// Ceilinged bound for a grid of this kind.
    pub fn min_support(&self, kind: GridKind) -> usize {
        let w = if kind.is_one_d() { self.w1 } else { self.w2 };
        w.ceil().max(1.0) as usize
    }
}

pub fn aog_size_constraints(
    rho: f64,
    g: u32,
    g1: usize,
    g2: usize,
    d: usize,
) -> Result<SizeConstraints> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::param(format!("rho must lie in (0, 1), got {rho}")));
    }
    if d < 2 || g < 2 {
        return Err(Error::param("need d >= 2 and g >= 2"));
    }
    let (g, g1, g2, dm) = (g as f64, g1 as f64, g2 as f64, (d - 1) as f64);
    let lead = (0.5 - 1.0 / g) / rho;
    let den1 = dm * (g1 - 2.0 * g2) + g2 * g2;
    let den2 = g2 - 3.0 + 3.0 * g1 / (g1 * dm + g2 * g2);
    if den1 <= 0.0 || den2 <= 0.0 || lead <= 0.0 {
        return Err(Error::Infeasible(format!(
            "size constraint denominators not positive (w1: {den1}, w2: {den2})"
        )));
    }
    Ok(SizeConstraints { w1: lead * (dm * g1 + g2 * g2) / den1, w2: lead * g2 / den2 })
}

/// Hash keys of every (function, cell), computed once per grid size.
#[derive(Debug, Clone)]
pub struct KeyTable {
    pub cells: usize,
    pub g: u32,
    keys: Vec<u32>,
}

impl KeyTable {
    pub fn new(family: &HashFamily, cells: usize) -> Self {
        let n = family.size();
        let mut keys = Vec::with_capacity(n * cells);
        for h in 0..n as u32 {
            keys.extend((0..cells).map(|c| family.eval(h, c)));
        }
        KeyTable { cells, g: family.g, keys }
    }

    pub fn functions(&self) -> usize {
        self.keys.len() / self.cells
    }

    pub fn keys(&self, fn_id: u32) -> &[u32] {
        let s = fn_id as usize * self.cells;
        &self.keys[s..s + self.cells]
    }

    pub fn support(&self, pair: HashPair) -> Vec<usize> {
        self.keys(pair.fn_id).iter().enumerate().filter(|(_, k)| **k == pair.key).map(|(c, _)| c).collect()
    }

    /// Per key: (support size, support cells inside `mask`).
    fn tallies(&self, fn_id: u32, mask: &[bool]) -> Vec<(usize, usize)> {
        let mut t = vec![(0, 0); self.g as usize];
        for (c, &k) in self.keys(fn_id).iter().enumerate() {
            t[k as usize].0 += 1;
            if mask[c] {
                t[k as usize].1 += 1;
            }
        }
        t
    }
}

fn query_mask(layout: &GridLayout, kind: GridKind, q: &RangeQuery) -> Vec<bool> {
    let mut mask = vec![false; layout.cells(kind)];
    for c in layout.query_cells(kind, q) {
        mask[c] = true;
    }
    mask
}

/// Grids with at least one attribute of `q`.
pub fn relevant(kind: GridKind, q: &RangeQuery) -> bool {
    kind.attrs().iter().any(|a| q.range_of(*a).is_some())
}

/// AoG visiting order: 2-D grids by attribute pair, then 1-D grids.
pub fn aog_order(layout: &GridLayout) -> Vec<GridKind> {
    let mut kinds = layout.kinds();
    kinds.sort_by_key(|k| match *k {
        GridKind::TwoD { a, b } => (0, a, b),
        GridKind::OneD { attr } => (1, attr, 0),
    });
    kinds
}

/// MGA: each fake user reports a pair maximizing `|S ∩ R|`, ties at random.
pub fn mga_grid<R: Rng + ?Sized>(
    layout: &GridLayout,
    kind: GridKind,
    q: &RangeQuery,
    table: &KeyTable,
    users: usize,
    rng: &mut R,
) -> Vec<HashPair> {
    let mask = query_mask(layout, kind, q);
    let mut best = 0;
    let mut ties: Vec<HashPair> = Vec::new();
    for fn_id in 0..table.functions() as u32 {
        for (key, &(_, inside)) in table.tallies(fn_id, &mask).iter().enumerate() {
            let pair = HashPair { fn_id, key: key as u32 };
            if inside > best {
                best = inside;
                ties.clear();
            }
            if inside == best {
                ties.push(pair);
            }
        }
    }
    (0..users).map(|_| ties[rng.random_range(0..ties.len())]).collect()
}

/// Recorded per-fraction support counts of the attributes in `q`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnBook {
    pub g2: usize,
    pub book: BTreeMap<usize, Vec<Option<usize>>>,
}

impl ColumnBook {
    pub fn new(q: &RangeQuery, g2: usize) -> Self {
        ColumnBook { g2, book: q.attrs().map(|a| (a, vec![None; g2])).collect() }
    }

    fn counts(layout: &GridLayout, kind: GridKind, attr: usize, support: &[usize]) -> Vec<usize> {
        let mut out = vec![0; layout.g2];
        for &c in support {
            out[layout.fraction_of(kind, attr, c)] += 1;
        }
        out
    }

    /// Every recorded count is matched exactly or exceeded by one.
    pub fn admits(&self, layout: &GridLayout, kind: GridKind, support: &[usize]) -> bool {
        kind.attrs().into_iter().filter_map(|a| self.book.get(&a).map(|b| (a, b))).all(|(a, b)| {
            Self::counts(layout, kind, a, support)
                .iter()
                .zip(b)
                .all(|(n, rec)| rec.is_none_or(|r| *n == r || *n == r + 1))
        })
    }

    /// Fill the counts not yet recorded.
    pub fn record(&mut self, layout: &GridLayout, kind: GridKind, support: &[usize]) {
        for a in kind.attrs() {
            if let Some(b) = self.book.get_mut(&a) {
                for (rec, n) in b.iter_mut().zip(Self::counts(layout, kind, a, support)) {
                    rec.get_or_insert(n);
                }
            }
        }
    }
}

/// First pair (function, then key, ascending) whose support lies in `R`,
/// meets the size bound and passes the column check; the book is updated on
/// success.
pub fn aog_find_hash_pair(
    layout: &GridLayout,
    kind: GridKind,
    q: &RangeQuery,
    constraints: &SizeConstraints,
    book: &mut ColumnBook,
    table: &KeyTable,
) -> Option<HashPair> {
    let mask = query_mask(layout, kind, q);
    let w = constraints.min_support(kind);
    for fn_id in 0..table.functions() as u32 {
        for (key, &(size, inside)) in table.tallies(fn_id, &mask).iter().enumerate() {
            if size < w || inside != size {
                continue;
            }
            let pair = HashPair { fn_id, key: key as u32 };
            let support = table.support(pair);
            if book.admits(layout, kind, &support) {
                book.record(layout, kind, &support);
                return Some(pair);
            }
        }
    }
    None
}

/// HAoG comparison key `(|S ∩ R| - |S|, |S|)`, scaled by `g2 / g1` on 1-D grids.
pub fn haog_preference(
    layout: &GridLayout,
    kind: GridKind,
    size: usize,
    inside: usize,
) -> (f64, f64) {
    let scale = if kind.is_one_d() { (layout.g1 / layout.g2) as f64 } else { 1.0 };
    ((inside as f64 - size as f64) / scale, size as f64 / scale)
}

fn pref_cmp(a: (f64, f64), b: (f64, f64)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// Best `(key, preference)` of one function on one grid, lowest key on ties.
pub fn best_key(
    layout: &GridLayout,
    kind: GridKind,
    mask: &[bool],
    table: &KeyTable,
    fn_id: u32,
) -> (u32, (f64, f64)) {
    let mut best = (0, (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for (key, &(size, inside)) in table.tallies(fn_id, mask).iter().enumerate() {
        let p = haog_preference(layout, kind, size, inside);
        if pref_cmp(p, best.1).is_gt() {
            best = (key as u32, p);
        }
    }
    best
}

/// The HAoG pair of one grid: argmax of the preference, ties at random.
pub fn haog_pair<R: Rng + ?Sized>(
    layout: &GridLayout,
    kind: GridKind,
    q: &RangeQuery,
    table: &KeyTable,
    rng: &mut R,
) -> HashPair {
    let mask = query_mask(layout, kind, q);
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut seen = 0u64;
    let mut pick = HashPair { fn_id: 0, key: 0 };
    for fn_id in 0..table.functions() as u32 {
        for (key, &(size, inside)) in table.tallies(fn_id, &mask).iter().enumerate() {
            let p = haog_preference(layout, kind, size, inside);
            match pref_cmp(p, best) {
                std::cmp::Ordering::Greater => {
                    best = p;
                    seen = 1;
                    pick = HashPair { fn_id, key: key as u32 };
                }
                std::cmp::Ordering::Equal => {
                    seen += 1;
                    if rng.random_range(0..seen) == 0 {
                        pick = HashPair { fn_id, key: key as u32 };
                    }
                }
                std::cmp::Ordering::Less => {}
            }
        }
    }
    pick
}

/// Pairs drawn uniformly from the whole family, for grids the query misses.
pub fn uniform_pairs<R: Rng + ?Sized>(family: &HashFamily, users: usize, rng: &mut R) -> Vec<HashPair> {
    (0..users)
        .map(|_| HashPair {
            fn_id: rng.random_range(0..family.size() as u32),
            key: rng.random_range(0..family.g),
        })
        .collect()
}

pub(crate) fn tables(req: &GridRequest<'_>) -> BTreeMap<usize, KeyTable> {
    let mut out = BTreeMap::new();
    for kind in req.layout.kinds() {
        let cells = req.layout.cells(kind);
        out.entry(cells).or_insert_with(|| KeyTable::new(&req.family, cells));
    }
    out
}

pub(crate) fn rho_of(req: &GridRequest<'_>) -> f64 {
    let m: usize = req.fake.iter().sum();
    let n: usize = req.real.iter().sum();
    m as f64 / (m + n) as f64
}

/// MGA on every grid.
#[derive(Debug, Clone)]
pub struct MgaGrid {
    pub target: RangeQuery,
}

impl GridAttack for MgaGrid {
    fn reports(&mut self, req: &GridRequest<'_>, rng: &mut dyn RngCore) -> Result<Vec<Vec<HashPair>>> {
        let q = req.layout.trim(&self.target);
        let tables = tables(req);
        Ok(req
            .layout
            .kinds()
            .into_iter()
            .zip(req.fake)
            .map(|(kind, &m)| {
                if relevant(kind, &q) {
                    mga_grid(&req.layout, kind, &q, &tables[&req.layout.cells(kind)], m, rng)
                } else {
                    uniform_pairs(&req.family, m, rng)
                }
            })
            .collect())
    }
}

/// HAoG on every relevant grid.
#[derive(Debug, Clone)]
pub struct Haog {
    pub target: RangeQuery,
}

impl GridAttack for Haog {
    fn reports(&mut self, req: &GridRequest<'_>, rng: &mut dyn RngCore) -> Result<Vec<Vec<HashPair>>> {
        let q = req.layout.trim(&self.target);
        let tables = tables(req);
        Ok(req
            .layout
            .kinds()
            .into_iter()
            .zip(req.fake)
            .map(|(kind, &m)| {
                if relevant(kind, &q) {
                    let p = haog_pair(&req.layout, kind, &q, &tables[&req.layout.cells(kind)], rng);
                    vec![p; m]
                } else {
                    uniform_pairs(&req.family, m, rng)
                }
            })
            .collect())
    }
}

/// AoG, falling back to HAoG on grids where no pair qualifies.
#[derive(Debug, Clone)]
pub struct Aog {
    pub target: RangeQuery,
    /// Per grid in `kinds()` order: `None` if the query misses it, else
    /// whether a qualifying pair was found.
    pub found: Vec<Option<bool>>,
    pub constraints: Option<SizeConstraints>,
}

impl Aog {
    pub fn new(target: RangeQuery) -> Self {
        Aog { target, found: Vec::new(), constraints: None }
    }

    /// Whether every relevant grid got a qualifying pair in the last run.
    pub fn succeeded(&self) -> bool {
        !self.found.is_empty() && self.found.iter().all(|f| f.unwrap_or(true))
    }
}

impl GridAttack for Aog {
    fn reports(&mut self, req: &GridRequest<'_>, rng: &mut dyn RngCore) -> Result<Vec<Vec<HashPair>>> {
        let layout = req.layout;
        let q = layout.trim(&self.target);
        let tables = tables(req);
        let w = aog_size_constraints(rho_of(req), req.olh.g, layout.g1, layout.g2, layout.d)?;
        self.constraints = Some(w);
        let mut book = ColumnBook::new(&q, layout.g2);
        let kinds = layout.kinds();
        let mut out: Vec<Vec<HashPair>> = vec![Vec::new(); kinds.len()];
        self.found = vec![None; kinds.len()];
        for kind in aog_order(&layout) {
            let gi = layout.index_of(kind);
            let m = req.fake[gi];
            let table = &tables[&layout.cells(kind)];
            out[gi] = if !relevant(kind, &q) {
                uniform_pairs(&req.family, m, rng)
            } else if let Some(p) = aog_find_hash_pair(&layout, kind, &q, &w, &mut book, table) {
                self.found[gi] = Some(true);
                vec![p; m]
            } else {
                self.found[gi] = Some(false);
                vec![haog_pair(&layout, kind, &q, table, rng); m]
            };
        }
        Ok(out)
    }
}
