//! Experiment loop and result files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ahead::{self, fake_users, AheadConfig, AheadRun, TreeAttack};
use crate::attacks::{Aaog, Aog, Aot, Haog, MgaGrid, MgaTree};
use crate::defense::{grid_detect, observed_max_load, tree_detect_counts, DetectionResult, TreeDefenseParams};
use crate::error::{Error, Result};
use crate::fo::oue::{OueParams, OueTally};
use crate::hdg::{self, GridAttack, HdgConfig, HdgRun};
use crate::query::{Interval, RangeQuery};
use crate::rng;
use crate::stats::{mean, std_dev};
use crate::tree::DecompositionTree;

use super::config::{AttackKind, DataKind, ExperimentConfig, Protocol};
use super::data::{gen_queries, gen_synthetic, load_csv, true_frequency};
use super::metrics::efficiency;

/// Detector verdicts on the honest and the poisoned run of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub honest: bool,
    pub poisoned: bool,
    /// One entry per tree layer, or a single pooled entry on the grid.
    pub honest_rounds: Vec<DetectionResult>,
    pub poisoned_rounds: Vec<DetectionResult>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackDiagnostics {
    /// AoG: qualifying pairs on every relevant grid.
    pub aog_success: Option<bool>,
    /// AAoG: per-function load limit and matching stability.
    pub aaog_limit: Option<usize>,
    pub aaog_stable: Option<bool>,
    /// Largest number of fake reports sharing one hash function.
    pub max_fake_load: Option<usize>,
    /// AoT: layers where every coefficient was zero.
    pub fallback_layers: Option<usize>,
    /// Why the attack could not run.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub query_id: usize,
    /// The query as answered (snapped to column boundaries on the grid).
    pub query: RangeQuery,
    pub true_frequency: f64,
    pub honest_response: f64,
    /// `None` when the attack was infeasible.
    pub poisoned_response: Option<f64>,
    /// `(poisoned - honest) / rho`; `None` at `rho = 0`.
    pub efficiency: Option<f64>,
    pub fake_users: usize,
    pub detection: Option<Detection>,
    pub diagnostics: AttackDiagnostics,
}

/// Wall-clock milliseconds per trial, kept apart from the results so that
/// those stay byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seed: u64,
    pub query_id: usize,
    pub honest_ms: f64,
    pub poisoned_ms: f64,
    pub defense_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocol: Protocol,
    pub attack: AttackKind,
    pub epsilon: f64,
    pub rho: f64,
    pub trials: usize,
    pub failed: usize,
    pub mean_true: f64,
    pub mean_honest: f64,
    pub std_honest: f64,
    pub mean_poisoned: f64,
    pub std_poisoned: f64,
    pub mean_efficiency: Option<f64>,
    pub std_efficiency: Option<f64>,
    pub detection_rate: Option<f64>,
    pub honest_detection_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialResult>,
    pub timings: Vec<Timing>,
    pub summary: Summary,
    /// CSV rows dropped as ill-formed.
    pub dropped_rows: usize,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn records_for(config: &ExperimentConfig, seed: u64, csv: &Option<Vec<Vec<usize>>>) -> Result<Vec<Vec<usize>>> {
    if let Some(rows) = csv {
        return Ok(rows.clone());
    }
    let c = config.domain();
    let mean = config.dataset.mean.unwrap_or(c as f64 / 2.0);
    let std = config.dataset.std.unwrap_or(40.0 * c as f64 / 1024.0);
    gen_synthetic(
        config.dataset.kind,
        config.users,
        config.dims_total(),
        mean,
        std,
        c,
        &mut rng::stream(seed, rng::DATA),
    )
}

fn queries_for(config: &ExperimentConfig, seed: u64) -> Result<Vec<RangeQuery>> {
    let qs = gen_queries(
        config.query.count,
        config.domain(),
        config.dims_total(),
        config.dims_query(),
        (config.query.min_len, config.query.max_len),
        &mut rng::stream(seed, rng::QUERY),
    )?;
    Ok(match config.protocol {
        Protocol::Ahead => qs,
        Protocol::Hdg => {
            let layout = config.hdg_config().layout()?;
            qs.iter().map(|q| layout.trim(q)).collect()
        }
    })
}

/// Outcome of one run of either protocol.
struct Side {
    response: f64,
    rounds: Vec<DetectionResult>,
    diag: AttackDiagnostics,
    ms: f64,
    defense_ms: f64,
}

fn tree_detection(run: &AheadRun, config: &AheadConfig, params: &TreeDefenseParams) -> Result<Vec<DetectionResult>> {
    run.rounds
        .iter()
        .map(|r| {
            let oue = OueParams::new(config.epsilon, r.nodes)?;
            tree_detect_counts(&r.ones, r.nodes, oue.p, oue.q, params)
        })
        .collect()
}

fn grid_detection(run: &HdgRun, alpha: f64) -> Result<Vec<DetectionResult>> {
    let ids: Vec<u32> = run.rounds.iter().flat_map(|r| r.fn_ids.iter().copied()).collect();
    let size = run.grids.grids[0].family.size();
    Ok(vec![grid_detect(&ids, size, alpha)?])
}

fn fake_load(run: &HdgRun) -> usize {
    let ids: Vec<u32> = run.rounds.iter().flat_map(|r| r.fn_ids[r.real..].iter().copied()).collect();
    observed_max_load(&ids)
}

fn tree_side(
    config: &ExperimentConfig,
    values: &[usize],
    iv: Interval,
    attack: AttackKind,
    rng: &ChaCha8Rng,
) -> Result<Side> {
    let cfg = config.ahead_config();
    let start = Instant::now();
    let mut diag = AttackDiagnostics::default();
    let mut aot = None;
    let mut mga = MgaTree { target: iv };
    let hook: Option<&mut dyn TreeAttack> = match attack {
        AttackKind::None => None,
        AttackKind::Mga => Some(&mut mga),
        AttackKind::Aot | AttackKind::Aaot => {
            let mut a = Aot::new(iv, config.attack.strategy);
            a.search = config.attack.search;
            a.assumed_real = config.attack.assumed_users;
            if attack == AttackKind::Aaot {
                a = a.adaptive();
            }
            aot = Some(a);
            aot.as_mut().map(|a| a as &mut dyn TreeAttack)
        }
        other => return Err(Error::Config(format!("attack {} does not apply to ahead", other.name()))),
    };
    let rho = if hook.is_some() { config.rho } else { 0.0 };
    let run = ahead::run_ahead(values, &cfg, hook, rho, &mut rng.clone())?;
    if let Some(a) = &aot {
        diag.fallback_layers = Some(a.log.iter().filter(|l| l.is_none()).count());
    }
    let response = ahead::estimate_query(&run.tree, &RangeQuery::one_dim(iv.lo, iv.hi, cfg.domain)?)?;
    let ms_run = ms(start);
    let start = Instant::now();
    let rounds = if config.defense.enabled {
        let mut params = TreeDefenseParams::new(config.defense.alpha)?;
        params.reading = config.defense.reading;
        tree_detection(&run, &cfg, &params)?
    } else {
        Vec::new()
    };
    Ok(Side { response, rounds, diag, ms: ms_run, defense_ms: ms(start) })
}

enum GridAttacker {
    Mga(MgaGrid),
    Haog(Haog),
    Aog(Aog),
    Aaog(Aaog),
}

impl GridAttacker {
    fn as_attack(&mut self) -> &mut dyn GridAttack {
        match self {
            GridAttacker::Mga(a) => a,
            GridAttacker::Haog(a) => a,
            GridAttacker::Aog(a) => a,
            GridAttacker::Aaog(a) => a,
        }
    }

    fn fill(&self, diag: &mut AttackDiagnostics) {
        match self {
            GridAttacker::Aog(a) => diag.aog_success = Some(a.succeeded()),
            GridAttacker::Aaog(a) => {
                diag.aaog_limit = a.plan.as_ref().map(|p| p.l);
                diag.aaog_stable = a.plan.as_ref().map(|p| p.stable);
            }
            _ => {}
        }
    }
}

fn grid_side(
    config: &ExperimentConfig,
    records: &[Vec<usize>],
    q: &RangeQuery,
    attack: AttackKind,
    rng: &ChaCha8Rng,
) -> Result<Side> {
    let cfg: HdgConfig = config.hdg_config();
    let start = Instant::now();
    let mut diag = AttackDiagnostics::default();
    let mut attacker = match attack {
        AttackKind::None => None,
        AttackKind::Mga => Some(GridAttacker::Mga(MgaGrid { target: q.clone() })),
        AttackKind::Haog => Some(GridAttacker::Haog(Haog { target: q.clone() })),
        AttackKind::Aog => Some(GridAttacker::Aog(Aog::new(q.clone()))),
        AttackKind::Aaog => Some(GridAttacker::Aaog(Aaog::new(
            q.clone(),
            config.attack.beta,
            config.defense.alpha,
        ))),
        other => return Err(Error::Config(format!("attack {} does not apply to hdg", other.name()))),
    };
    let rho = if attacker.is_some() { config.rho } else { 0.0 };
    let hook = attacker.as_mut().map(|a| a.as_attack());
    let run = hdg::run_hdg(records, &cfg, hook, rho, &mut rng.clone())?;
    if let Some(a) = &attacker {
        a.fill(&mut diag);
        diag.max_fake_load = Some(fake_load(&run));
    }
    let response = hdg::estimate_query(&run.grids, q)?;
    let ms_run = ms(start);
    let start = Instant::now();
    let rounds = if config.defense.enabled { grid_detection(&run, config.defense.alpha)? } else { Vec::new() };
    Ok(Side { response, rounds, diag, ms: ms_run, defense_ms: ms(start) })
}

fn run_trial(
    config: &ExperimentConfig,
    seed: u64,
    query_id: usize,
    records: &[Vec<usize>],
    q: &RangeQuery,
) -> Result<(TrialResult, Timing)> {
    let trial_rng = rng::stream(seed, rng::TRIAL + query_id as u64);
    let attack = if config.rho > 0.0 { config.attack.kind } else { AttackKind::None };
    let poison = attack != AttackKind::None;
    let (honest, poisoned, fake, values);
    match config.protocol {
        Protocol::Ahead => {
            let attr = q.attrs().next().expect("queries are nonempty");
            let iv = q.single()?;
            values = records.iter().map(|r| r[attr]).collect::<Vec<_>>();
            honest = tree_side(config, &values, iv, AttackKind::None, &trial_rng)?;
            poisoned = if poison { Some(tree_side(config, &values, iv, attack, &trial_rng)) } else { None };
            fake = fake_users(values.len(), config.rho);
        }
        Protocol::Hdg => {
            honest = grid_side(config, records, q, AttackKind::None, &trial_rng)?;
            poisoned = if poison { Some(grid_side(config, records, q, attack, &trial_rng)) } else { None };
            fake = fake_users(records.len(), config.rho);
        }
    }
    let true_f = true_frequency(records, q)?;
    let poisoned = match poisoned {
        None => Ok(None),
        Some(Ok(side)) => Ok(Some(side)),
        Some(Err(Error::Infeasible(msg))) => Err(msg),
        Some(Err(e)) => return Err(e),
    };
    let (response, diag, rounds, p_ms, p_def) = match &poisoned {
        Ok(Some(s)) => (Some(s.response), s.diag.clone(), s.rounds.clone(), s.ms, s.defense_ms),
        Ok(None) => (Some(honest.response), AttackDiagnostics::default(), honest.rounds.clone(), 0.0, 0.0),
        Err(msg) => {
            let d = AttackDiagnostics { error: Some(msg.clone()), ..Default::default() };
            (None, d, Vec::new(), 0.0, 0.0)
        }
    };
    let eff = match response {
        Some(r) if config.rho > 0.0 => Some(efficiency(honest.response, r, config.rho)?),
        _ => None,
    };
    let detection = (config.defense.enabled && response.is_some()).then(|| Detection {
        honest: honest.rounds.iter().any(|r| r.detected),
        poisoned: rounds.iter().any(|r| r.detected),
        honest_rounds: honest.rounds.clone(),
        poisoned_rounds: rounds,
    });
    let result = TrialResult {
        seed,
        query_id,
        query: q.clone(),
        true_frequency: true_f,
        honest_response: honest.response,
        poisoned_response: response,
        efficiency: eff,
        fake_users: if poison { fake } else { 0 },
        detection,
        diagnostics: diag,
    };
    let timing = Timing {
        seed,
        query_id,
        honest_ms: honest.ms,
        poisoned_ms: p_ms,
        defense_ms: honest.defense_ms + p_def,
    };
    Ok((result, timing))
}

fn rate(xs: impl Iterator<Item = bool>) -> Option<f64> {
    let v: Vec<bool> = xs.collect();
    (!v.is_empty()).then(|| v.iter().filter(|b| **b).count() as f64 / v.len() as f64)
}

pub fn summarize(config: &ExperimentConfig, trials: &[TrialResult]) -> Summary {
    let ok: Vec<&TrialResult> = trials.iter().filter(|t| t.poisoned_response.is_some()).collect();
    let col = |f: &dyn Fn(&TrialResult) -> f64| -> Vec<f64> { ok.iter().map(|t| f(t)).collect() };
    let honest = col(&|t| t.honest_response);
    let poisoned = col(&|t| t.poisoned_response.unwrap_or(f64::NAN));
    let effs: Vec<f64> = ok.iter().filter_map(|t| t.efficiency).collect();
    let stat = |v: &[f64], f: fn(&[f64]) -> f64| if v.is_empty() { f64::NAN } else { f(v) };
    Summary {
        protocol: config.protocol,
        attack: config.attack.kind,
        epsilon: config.epsilon,
        rho: config.rho,
        trials: trials.len(),
        failed: trials.len() - ok.len(),
        mean_true: stat(&col(&|t| t.true_frequency), mean),
        mean_honest: stat(&honest, mean),
        std_honest: stat(&honest, std_dev),
        mean_poisoned: stat(&poisoned, mean),
        std_poisoned: stat(&poisoned, std_dev),
        mean_efficiency: (!effs.is_empty()).then(|| mean(&effs)),
        std_efficiency: (!effs.is_empty()).then(|| std_dev(&effs)),
        detection_rate: rate(ok.iter().filter_map(|t| t.detection.as_ref().map(|d| d.poisoned))),
        honest_detection_rate: rate(ok.iter().filter_map(|t| t.detection.as_ref().map(|d| d.honest))),
    }
}

/// Every seed and query of `config`, on `threads` workers (all cores when
/// `None`). Results come back in (seed, query) order.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutput> {
    config.validate()?;
    let (csv, dropped_rows) = match config.dataset.kind {
        DataKind::Csv => {
            let path = config.dataset.path.as_ref().expect("validated");
            let (rows, dropped) = load_csv(path, &config.dataset.columns, config.domain())?;
            (Some(rows), dropped)
        }
        _ => (None, 0),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::param(e.to_string()))?;
    let work = || -> Result<Vec<(TrialResult, Timing)>> {
        let per_seed: Vec<(Vec<Vec<usize>>, Vec<RangeQuery>)> = config
            .seeds
            .par_iter()
            .map(|&s| Ok((records_for(config, s, &csv)?, queries_for(config, s)?)))
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, usize)> = (0..config.seeds.len())
            .flat_map(|s| (0..config.query.count).map(move |q| (s, q)))
            .collect();
        jobs.par_iter()
            .map(|&(s, qi)| {
                let (records, queries) = &per_seed[s];
                run_trial(config, config.seeds[s], qi, records, &queries[qi])
            })
            .collect()
    };
    let (trials, timings): (Vec<_>, Vec<_>) = pool.install(work)?.into_iter().unzip();
    let summary = summarize(config, &trials);
    Ok(ExperimentOutput { trials, timings, summary, dropped_rows })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMINGS_FILE: &str = "timings.csv";

/// Write `results.jsonl`, `summary.csv` and `timings.csv` into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let results = dir.join(RESULTS_FILE);
    let mut w = BufWriter::new(File::create(&results).map_err(io_err(&results))?);
    for t in &out.trials {
        let line = serde_json::to_string(t).map_err(|e| Error::Serde(e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err(&results))?;
    }
    w.flush().map_err(io_err(&results))?;
    let summary = dir.join(SUMMARY_FILE);
    write_summaries(std::slice::from_ref(&out.summary), &summary)?;
    let timings = dir.join(TIMINGS_FILE);
    let mut w = csv::Writer::from_path(&timings).map_err(|e| Error::Serde(e.to_string()))?;
    for t in &out.timings {
        w.serialize(t).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(io_err(&timings))?;
    Ok(vec![results, summary, timings])
}

pub fn write_summaries(rows: &[Summary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    for s in rows {
        w.serialize(s).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_results(path: &Path) -> Result<Vec<TrialResult>> {
    let f = File::open(path).map_err(io_err(path))?;
    BufReader::new(f)
        .lines()
        .map(|line| {
            let line = line.map_err(io_err(path))?;
            serde_json::from_str(&line).map_err(|e| Error::Data { path: path.to_path_buf(), reason: e.to_string() })
        })
        .collect()
}

/// Single-item MGA on one OUE round over `n` items: honest users hold
/// `values`, `rho` of the population are fake and promote `target`. Returns
/// the honest and poisoned estimates of `target` under common randomness.
pub fn oue_mga_trial<R: Rng + ?Sized>(
    values: &[usize],
    n: usize,
    epsilon: f64,
    rho: f64,
    target: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if target >= n {
        return Err(Error::IndexOutOfRange { index: target, size: n });
    }
    let params = OueParams::new(epsilon, n)?;
    let mut holders = vec![0usize; n];
    for &v in values {
        *holders.get_mut(v).ok_or(Error::IndexOutOfRange { index: v, size: n })? += 1;
    }
    let mut tally = OueTally::new(params);
    tally.add_honest_bulk(&holders, rng);
    let honest = tally.estimate()?[target];
    let tree = DecompositionTree::complete(n, n, 1)?;
    let fakes = crate::attacks::mga_tree(
        &tree,
        tree.layer(1),
        Interval::new(target, target + 1),
        fake_users(values.len(), rho),
        &params,
        rng,
    );
    for r in &fakes {
        tally.add_report(r)?;
    }
    Ok((honest, tally.estimate()?[target]))
}
