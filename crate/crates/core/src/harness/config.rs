//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ahead::AheadConfig;
use crate::attacks::{Search, ZeroStrategy};
use crate::defense::MassReading;
use crate::error::{Error, Result};
use crate::hdg::HdgConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Ahead,
    Hdg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Gaussian,
    Laplace,
    Uniform,
    Csv,
}

/// Synthetic draw or a local CSV. `mean` and `std` default to `c/2` and
/// `40c/1024` for domain size `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_data_kind")]
    pub kind: DataKind,
    #[serde(default)]
    pub mean: Option<f64>,
    #[serde(default)]
    pub std: Option<f64>,
    /// Attributes per record for synthetic data on the tree protocol; the
    /// grid protocol always uses `hdg.d`.
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub columns: Vec<String>,
}

fn default_data_kind() -> DataKind {
    DataKind::Gaussian
}
fn default_dims() -> usize {
    5
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: default_data_kind(),
            mean: None,
            std: None,
            dims: default_dims(),
            path: None,
            columns: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Mga,
    Aot,
    Aaot,
    Aog,
    Haog,
    Aaog,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Mga => "mga",
            AttackKind::Aot => "aot",
            AttackKind::Aaot => "aaot",
            AttackKind::Aog => "aog",
            AttackKind::Haog => "haog",
            AttackKind::Aaog => "aaog",
        }
    }

    pub const ALL: [AttackKind; 7] = [
        AttackKind::None,
        AttackKind::Mga,
        AttackKind::Aot,
        AttackKind::Aaot,
        AttackKind::Aog,
        AttackKind::Haog,
        AttackKind::Aaog,
    ];

    pub fn for_tree(self) -> bool {
        matches!(self, AttackKind::None | AttackKind::Mga | AttackKind::Aot | AttackKind::Aaot)
    }

    pub fn for_grid(self) -> bool {
        matches!(
            self,
            AttackKind::None | AttackKind::Mga | AttackKind::Aog | AttackKind::Haog | AttackKind::Aaog
        )
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(default = "default_attack")]
    pub kind: AttackKind,
    /// Fallback on tree layers where every coefficient is zero.
    #[serde(default = "default_strategy")]
    pub strategy: ZeroStrategy,
    #[serde(default)]
    pub search: Search,
    /// Detection tolerance of AAoG.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Real users the tree attacker assumes; `None` uses the true count.
    #[serde(default)]
    pub assumed_users: Option<usize>,
}

fn default_attack() -> AttackKind {
    AttackKind::None
}
fn default_strategy() -> ZeroStrategy {
    ZeroStrategy::One
}
fn default_beta() -> f64 {
    0.1
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kind: default_attack(),
            strategy: default_strategy(),
            search: Search::default(),
            beta: default_beta(),
            assumed_users: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub reading: MassReading,
}

fn default_alpha() -> f64 {
    0.005
}

impl Default for DefenseSpec {
    fn default() -> Self {
        DefenseSpec { enabled: false, alpha: default_alpha(), reading: MassReading::default() }
    }
}

/// Random range queries: lengths uniform in `[min_len, max_len] * c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    #[serde(default = "default_query_count")]
    pub count: usize,
    /// Attributes per query; `None` is 1 on the tree and 3 on the grid.
    #[serde(default)]
    pub dims: Option<usize>,
    #[serde(default = "default_min_len")]
    pub min_len: f64,
    #[serde(default = "default_max_len")]
    pub max_len: f64,
}

fn default_query_count() -> usize {
    20
}
fn default_min_len() -> f64 {
    0.125
}
fn default_max_len() -> f64 {
    0.375
}

impl Default for QuerySpec {
    fn default() -> Self {
        QuerySpec {
            count: default_query_count(),
            dims: None,
            min_len: default_min_len(),
            max_len: default_max_len(),
        }
    }
}

/// `[ahead]` table: [`AheadConfig`] without the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AheadSection {
    #[serde(default = "default_ahead_domain")]
    pub domain: usize,
    #[serde(default = "default_fanout")]
    pub fanout: usize,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub layer_partition: Option<Vec<f64>>,
}

fn default_ahead_domain() -> usize {
    1024
}
fn default_fanout() -> usize {
    2
}

impl Default for AheadSection {
    fn default() -> Self {
        AheadSection {
            domain: default_ahead_domain(),
            fanout: default_fanout(),
            theta: None,
            layer_partition: None,
        }
    }
}

/// `[hdg]` table: [`HdgConfig`] without the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HdgSection {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_hdg_domain")]
    pub domain: usize,
    #[serde(default = "default_g1")]
    pub g1: usize,
    #[serde(default = "default_g2")]
    pub g2: usize,
    #[serde(default = "default_pp")]
    pub pp_rounds: usize,
    #[serde(default)]
    pub family_size: Option<usize>,
}

fn default_d() -> usize {
    5
}
fn default_hdg_domain() -> usize {
    64
}
fn default_g1() -> usize {
    16
}
fn default_g2() -> usize {
    4
}
fn default_pp() -> usize {
    1
}

impl Default for HdgSection {
    fn default() -> Self {
        HdgSection {
            d: default_d(),
            domain: default_hdg_domain(),
            g1: default_g1(),
            g2: default_g2(),
            pp_rounds: default_pp(),
            family_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub epsilon: f64,
    #[serde(default)]
    pub rho: f64,
    /// Real users; ignored for CSV data, which uses every valid row.
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub defense: DefenseSpec,
    #[serde(default)]
    pub query: QuerySpec,
    #[serde(default)]
    pub ahead: AheadSection,
    #[serde(default)]
    pub hdg: HdgSection,
    /// Directory for result files.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_users() -> usize {
    100_000
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol, epsilon: f64) -> Self {
        ExperimentConfig {
            protocol,
            epsilon,
            rho: 0.0,
            users: default_users(),
            seeds: default_seeds(),
            dataset: DatasetSpec::default(),
            attack: AttackSpec::default(),
            defense: DefenseSpec::default(),
            query: QuerySpec::default(),
            ahead: AheadSection::default(),
            hdg: HdgSection::default(),
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn ahead_config(&self) -> AheadConfig {
        AheadConfig {
            domain: self.ahead.domain,
            fanout: self.ahead.fanout,
            theta: self.ahead.theta,
            epsilon: self.epsilon,
            layer_partition: self.ahead.layer_partition.clone(),
        }
    }

    pub fn hdg_config(&self) -> HdgConfig {
        HdgConfig {
            d: self.hdg.d,
            domain: self.hdg.domain,
            g1: self.hdg.g1,
            g2: self.hdg.g2,
            epsilon: self.epsilon,
            pp_rounds: self.hdg.pp_rounds,
            family_size: self.hdg.family_size,
        }
    }

    pub fn domain(&self) -> usize {
        match self.protocol {
            Protocol::Ahead => self.ahead.domain,
            Protocol::Hdg => self.hdg.domain,
        }
    }

    /// Attributes per record.
    pub fn dims_total(&self) -> usize {
        match (self.protocol, self.dataset.kind) {
            (Protocol::Hdg, _) => self.hdg.d,
            (Protocol::Ahead, DataKind::Csv) => self.dataset.columns.len(),
            (Protocol::Ahead, _) => self.dataset.dims,
        }
    }

    pub fn dims_query(&self) -> usize {
        self.query.dims.unwrap_or(match self.protocol {
            Protocol::Ahead => 1,
            Protocol::Hdg => 3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.dataset.kind != DataKind::Csv && self.users == 0 {
            return bad("users must be positive".into());
        }
        match self.protocol {
            Protocol::Ahead => {
                self.ahead_config().validate().map_err(|e| Error::Config(format!("[ahead] {e}")))?;
                if !self.attack.kind.for_tree() {
                    return bad(format!("attack {} does not apply to ahead", self.attack.kind.name()));
                }
                if self.dims_query() != 1 {
                    return bad(format!("ahead answers 1-D queries, got query.dims = {}", self.dims_query()));
                }
            }
            Protocol::Hdg => {
                self.hdg_config().validate().map_err(|e| Error::Config(format!("[hdg] {e}")))?;
                if !self.attack.kind.for_grid() {
                    return bad(format!("attack {} does not apply to hdg", self.attack.kind.name()));
                }
                if self.dataset.kind == DataKind::Csv && self.dataset.columns.len() != self.hdg.d {
                    return bad(format!(
                        "hdg needs {} csv columns, got {}",
                        self.hdg.d,
                        self.dataset.columns.len()
                    ));
                }
            }
        }
        let dq = self.dims_query();
        if dq == 0 || dq > self.dims_total() {
            return bad(format!("query.dims = {dq} must lie in 1..={}", self.dims_total()));
        }
        if self.query.count == 0 {
            return bad("query.count must be positive".into());
        }
        let (lo, hi) = (self.query.min_len, self.query.max_len);
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("query lengths need 0 < min_len <= max_len <= 1, got {lo} and {hi}"));
        }
        match self.dataset.kind {
            DataKind::Csv => {
                if self.dataset.path.is_none() {
                    return bad("dataset.path is required for csv data".into());
                }
                if self.dataset.columns.is_empty() {
                    return bad("dataset.columns is required for csv data".into());
                }
            }
            _ => {
                if let Some(s) = self.dataset.std {
                    if !(s.is_finite() && s >= 0.0) {
                        return bad(format!("dataset.std must be non-negative, got {s}"));
                    }
                }
                if self.dataset.dims == 0 {
                    return bad("dataset.dims must be positive".into());
                }
            }
        }
        if !(self.defense.alpha > 0.0 && self.defense.alpha < 1.0) {
            return bad(format!("defense.alpha must lie in (0, 1), got {}", self.defense.alpha));
        }
        if !(self.attack.beta > 0.0 && self.attack.beta < 1.0) {
            return bad(format!("attack.beta must lie in (0, 1), got {}", self.attack.beta));
        }
        Ok(())
    }
}
