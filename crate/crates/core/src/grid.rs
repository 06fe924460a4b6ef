//! Grid layout for the grid-based protocol: `d` one-dimensional grids of
//! `g1` cells and one `g2 x g2` grid per attribute pair.
//!
//! Every attribute's domain `[0, c)` is cut into `g2` fractions. A fraction
//! covers `g1 / g2` consecutive 1-D cells, and one row (first attribute) or
//! one column (second attribute) of a 2-D grid. 2-D cells are stored row
//! major, rows indexed by the first attribute.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fo::HashFamily;
use crate::query::{Interval, RangeQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub d: usize,
    pub domain: usize,
    pub g1: usize,
    pub g2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridKind {
    OneD { attr: usize },
    TwoD { a: usize, b: usize },
}

impl GridKind {
    pub fn attrs(&self) -> Vec<usize> {
        match *self {
            GridKind::OneD { attr } => vec![attr],
            GridKind::TwoD { a, b } => vec![a, b],
        }
    }

    pub fn has_attr(&self, x: usize) -> bool {
        match *self {
            GridKind::OneD { attr } => attr == x,
            GridKind::TwoD { a, b } => a == x || b == x,
        }
    }

    pub fn is_one_d(&self) -> bool {
        matches!(self, GridKind::OneD { .. })
    }
}

impl GridLayout {
    pub fn new(d: usize, domain: usize, g1: usize, g2: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::param(format!("need at least 2 attributes, got {d}")));
        }
        if g1 == 0 || g2 == 0 || g1 % g2 != 0 {
            return Err(Error::param(format!("g1 = {g1} must be a positive multiple of g2 = {g2}")));
        }
        if domain % g1 != 0 || domain % g2 != 0 {
            return Err(Error::param(format!("g1 = {g1} and g2 = {g2} must divide c = {domain}")));
        }
        Ok(GridLayout { d, domain, g1, g2 })
    }

    pub fn grid_count(&self) -> usize {
        self.d + self.d * (self.d - 1) / 2
    }

    /// 1-D grids by attribute, then 2-D grids in lexicographic pair order.
    pub fn kinds(&self) -> Vec<GridKind> {
        let mut out: Vec<GridKind> = (0..self.d).map(|attr| GridKind::OneD { attr }).collect();
        for a in 0..self.d {
            for b in a + 1..self.d {
                out.push(GridKind::TwoD { a, b });
            }
        }
        out
    }

    pub fn index_of(&self, kind: GridKind) -> usize {
        match kind {
            GridKind::OneD { attr } => attr,
            GridKind::TwoD { a, b } => {
                // pairs before row a, then offset within row a
                let before: usize = (0..a).map(|r| self.d - 1 - r).sum();
                self.d + before + (b - a - 1)
            }
        }
    }

    pub fn cells(&self, kind: GridKind) -> usize {
        match kind {
            GridKind::OneD { .. } => self.g1,
            GridKind::TwoD { .. } => self.g2 * self.g2,
        }
    }

    /// Cells of a grid per fraction of one of its attributes.
    pub fn cells_per_fraction(&self, kind: GridKind) -> usize {
        match kind {
            GridKind::OneD { .. } => self.g1 / self.g2,
            GridKind::TwoD { .. } => self.g2,
        }
    }

    pub fn width1(&self) -> usize {
        self.domain / self.g1
    }

    pub fn width2(&self) -> usize {
        self.domain / self.g2
    }

    pub fn cell_of(&self, kind: GridKind, record: &[usize]) -> usize {
        match kind {
            GridKind::OneD { attr } => record[attr] / self.width1(),
            GridKind::TwoD { a, b } => {
                let w = self.width2();
                (record[a] / w) * self.g2 + record[b] / w
            }
        }
    }

    /// Value ranges a cell covers, per attribute of the grid.
    pub fn cell_ranges(&self, kind: GridKind, cell: usize) -> Vec<(usize, Interval)> {
        match kind {
            GridKind::OneD { attr } => {
                let w = self.width1();
                vec![(attr, Interval::new(cell * w, (cell + 1) * w))]
            }
            GridKind::TwoD { a, b } => {
                let w = self.width2();
                let (r, s) = (cell / self.g2, cell % self.g2);
                vec![
                    (a, Interval::new(r * w, (r + 1) * w)),
                    (b, Interval::new(s * w, (s + 1) * w)),
                ]
            }
        }
    }

    /// Cells of `kind` lying in fraction `j` of attribute `attr`.
    pub fn fraction_cells(&self, kind: GridKind, attr: usize, j: usize) -> Vec<usize> {
        match kind {
            GridKind::OneD { .. } => {
                let s = self.g1 / self.g2;
                (j * s..(j + 1) * s).collect()
            }
            GridKind::TwoD { a, .. } if a == attr => (0..self.g2).map(|s| j * self.g2 + s).collect(),
            GridKind::TwoD { .. } => (0..self.g2).map(|r| r * self.g2 + j).collect(),
        }
    }

    /// Fraction of attribute `attr` that `cell` falls in.
    pub fn fraction_of(&self, kind: GridKind, attr: usize, cell: usize) -> usize {
        match kind {
            GridKind::OneD { .. } => cell / (self.g1 / self.g2),
            GridKind::TwoD { a, .. } if a == attr => cell / self.g2,
            GridKind::TwoD { .. } => cell % self.g2,
        }
    }

    /// Whether every value a cell covers satisfies `q` on the grid's attributes.
    pub fn cell_in_query(&self, kind: GridKind, cell: usize, q: &RangeQuery) -> bool {
        self.cell_ranges(kind, cell)
            .iter()
            .all(|(attr, iv)| iv.is_subset_of(&q.range_or_full(*attr, self.domain)))
    }

    /// `R_q(G)`: the cells of the grid inside the query.
    pub fn query_cells(&self, kind: GridKind, q: &RangeQuery) -> Vec<usize> {
        (0..self.cells(kind)).filter(|&c| self.cell_in_query(kind, c, q)).collect()
    }

    /// Snap a query outward to 2-D column boundaries.
    pub fn trim(&self, q: &RangeQuery) -> RangeQuery {
        q.snapped(self.width2(), self.domain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: GridKind,
    pub family: HashFamily,
    pub freqs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSet {
    pub layout: GridLayout,
    pub grids: Vec<Grid>,
}

impl GridSet {
    /// Every grid uniform over its cells.
    pub fn uniform(layout: GridLayout, family: HashFamily) -> Self {
        let grids = layout
            .kinds()
            .into_iter()
            .map(|kind| {
                let n = layout.cells(kind);
                Grid { kind, family, freqs: vec![1.0 / n as f64; n] }
            })
            .collect();
        GridSet { layout, grids }
    }

    pub fn grid(&self, kind: GridKind) -> &Grid {
        &self.grids[self.layout.index_of(kind)]
    }

    pub fn grid_mut(&mut self, kind: GridKind) -> &mut Grid {
        let i = self.layout.index_of(kind);
        &mut self.grids[i]
    }

    /// `F_{G, c_j}`: mass of a grid inside fraction `j` of `attr`.
    pub fn fraction_sum(&self, kind: GridKind, attr: usize, j: usize) -> f64 {
        let g = self.grid(kind);
        self.layout.fraction_cells(kind, attr, j).iter().map(|&c| g.freqs[c]).sum()
    }

    /// Grids that carry attribute `attr`: its 1-D grid, then its 2-D grids.
    pub fn grids_with(&self, attr: usize) -> Vec<GridKind> {
        self.layout.kinds().into_iter().filter(|k| k.has_attr(attr)).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data")
    }
}
