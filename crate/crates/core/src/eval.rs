//! Validation datasets, percent optimality, per-group summaries and report
//! files.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bidding::{Bidder, ClassicBidder, PolicyBidder, PolicyParameters};
use crate::consensus::{covered_tasks, run_allocation, team_distance, RunConfig};
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_bytes_atomic, write_jsonl};
use crate::oracle::{solve, OracleCache, SolverBudget};
use crate::world::{generate_world, write_worlds, WorldInstance, WorldSpec};

/// Worlds per generated dataset.
pub const DATASET_SIZE: usize = 1000;

/// Named dataset distributions. Every preset draws from its own ordinal
/// range, so datasets sharing a seed never share a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Training,
    Val5,
    Val10,
    Val15,
    Val20,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Training, Preset::Val5, Preset::Val10, Preset::Val15, Preset::Val20];
    pub const VALIDATION: [Preset; 4] = [Preset::Val5, Preset::Val10, Preset::Val15, Preset::Val20];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Training => "training",
            Preset::Val5 => "val5",
            Preset::Val10 => "val10",
            Preset::Val15 => "val15",
            Preset::Val20 => "val20",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn spec(self) -> WorldSpec {
        match self {
            Preset::Training => WorldSpec::training(),
            Preset::Val5 => WorldSpec::validation(5),
            Preset::Val10 => WorldSpec::validation(10),
            Preset::Val15 => WorldSpec::validation(15),
            Preset::Val20 => WorldSpec::validation(20),
        }
    }

    pub fn first_ordinal(self) -> u64 {
        match self {
            Preset::Training => 0,
            Preset::Val5 => 1_000_000,
            Preset::Val10 => 1_100_000,
            Preset::Val15 => 1_200_000,
            Preset::Val20 => 1_300_000,
        }
    }

    /// The first `count` worlds of the preset under `seed`.
    pub fn worlds(self, seed: u64, count: usize) -> Result<Vec<WorldInstance>> {
        let spec = self.spec();
        (0..count as u64)
            .into_par_iter()
            .map(|i| generate_world(seed, self.first_ordinal() + i, &spec))
            .collect()
    }
}

/// Writes `val5.jsonl` .. `val20.jsonl` with [`DATASET_SIZE`] worlds each
/// into `dir` and returns their paths.
pub fn make_validation_sets(seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    Preset::VALIDATION
        .iter()
        .map(|p| {
            let path = dir.join(format!("{}.jsonl", p.name()));
            write_worlds(&path, &p.worlds(seed, DATASET_SIZE)?)?;
            Ok(path)
        })
        .collect()
}

/// `100 * d_star / d_hat`.
pub fn percent_optimality(d_star: f64, d_hat: f64) -> Result<f64> {
    if !(d_star > 0.0 && d_hat > 0.0) || !d_star.is_finite() || !d_hat.is_finite() {
        return Err(Error::invalid(format!("distances must be positive and finite, got d_star {d_star}, d_hat {d_hat}")));
    }
    Ok(100.0 * d_star / d_hat)
}

/// Outcome of one bidder on one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub world_id: String,
    pub bidder: String,
    pub n_agents: usize,
    pub n_tasks: usize,
    pub d_star: f64,
    /// Team distance of the final (possibly partial) assignment.
    pub d_hat: f64,
    /// Percent optimality; absent when some task is uncovered.
    pub eta: Option<f64>,
    pub iterations: usize,
    pub timed_out: bool,
    pub oracle_exact: bool,
    pub uncovered: usize,
}

/// A bidder taking part in an evaluation.
#[derive(Debug, Clone)]
pub enum BidderSpec {
    Classic,
    Learned { name: String, params: PolicyParameters },
}

impl BidderSpec {
    pub const NAMES: [&'static str; 3] = ["classic", "nam", "lstm"];

    /// Resolves `name`, loading and checking `checkpoint` for learned
    /// bidders.
    pub fn load(name: &str, checkpoint: Option<&Path>) -> Result<Self> {
        match name {
            "classic" => Ok(BidderSpec::Classic),
            "nam" | "lstm" => {
                let path = checkpoint.ok_or_else(|| Error::invalid(format!("bidder {name} needs a checkpoint")))?;
                let params = PolicyParameters::load(path)?;
                if params.architecture.tag() != name {
                    return Err(Error::Checkpoint {
                        path: path.to_path_buf(),
                        reason: format!("holds a {} policy, not {name}", params.architecture.tag()),
                    });
                }
                Ok(BidderSpec::Learned { name: name.to_string(), params })
            }
            _ => Err(Error::invalid(format!("unknown bidder {name:?}; valid bidders: {}", Self::NAMES.join(", ")))),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            BidderSpec::Classic => "classic",
            BidderSpec::Learned { name, .. } => name,
        }
    }

    pub fn bidder(&self) -> Box<dyn Bidder + '_> {
        match self {
            BidderSpec::Classic => Box::new(ClassicBidder),
            BidderSpec::Learned { name, params } => Box::new(PolicyBidder::named(name.clone(), params)),
        }
    }
}

/// Solves every world missing from `cache` in parallel. Returns the
/// number of worlds solved.
pub fn fill_oracles(worlds: &[WorldInstance], budget: &SolverBudget, cache: &mut OracleCache) -> Result<usize> {
    let missing: Vec<&WorldInstance> = worlds.iter().filter(|w| !cache.contains_key(&w.id)).collect();
    let solved = missing
        .par_iter()
        .map(|w| Ok((w.id.clone(), solve(w, budget)?)))
        .collect::<Result<Vec<_>>>()?;
    let n = solved.len();
    cache.extend(solved);
    Ok(n)
}

/// Runs one bidder on one world.
pub fn evaluate(world: &WorldInstance, bidder: &BidderSpec, run: &RunConfig, oracles: &OracleCache) -> Result<EvalRecord> {
    let oracle = oracles.get(&world.id).ok_or_else(|| Error::MissingOracle(world.id.to_string()))?;
    let config = RunConfig { record_trajectory: false, ..run.clone() };
    let result = run_allocation(world, bidder.bidder().as_mut(), &config)?;
    let d_hat = team_distance(&result.states, world);
    let uncovered = world.n_tasks() - covered_tasks(&result.states, world.n_tasks());
    let eta = if uncovered == 0 { Some(percent_optimality(oracle.total_distance, d_hat)?) } else { None };
    Ok(EvalRecord {
        world_id: world.id.to_string(),
        bidder: bidder.name().to_string(),
        n_agents: world.n_agents(),
        n_tasks: world.n_tasks(),
        d_star: oracle.total_distance,
        d_hat,
        eta,
        iterations: result.iterations_used,
        timed_out: result.timed_out,
        oracle_exact: oracle.proof_of_optimality,
        uncovered,
    })
}

/// Worlds evaluated between two saves of the record cache.
const CHUNK: usize = 64;

/// Evaluates every `(world, bidder)` pair in world-major order. With
/// `record_cache` set, records already in that file are reused and the
/// file is rewritten after every chunk of worlds, so an interrupted run
/// resumes where it stopped.
pub fn run_validation(
    worlds: &[WorldInstance],
    bidders: &[BidderSpec],
    run: &RunConfig,
    oracles: &OracleCache,
    record_cache: Option<&Path>,
) -> Result<Vec<EvalRecord>> {
    run.validate()?;
    let mut names = HashSet::new();
    for b in bidders {
        if !names.insert(b.name()) {
            return Err(Error::invalid(format!("bidder {} listed twice", b.name())));
        }
    }
    for w in worlds {
        if !oracles.contains_key(&w.id) {
            return Err(Error::MissingOracle(w.id.to_string()));
        }
    }
    let mut done: BTreeMap<(String, String), EvalRecord> = match record_cache {
        Some(p) if p.exists() => read_jsonl::<EvalRecord>(p)?
            .into_iter()
            .map(|r| ((r.world_id.clone(), r.bidder.clone()), r))
            .collect(),
        _ => BTreeMap::new(),
    };
    for chunk in worlds.chunks(CHUNK) {
        let todo: Vec<(&WorldInstance, &BidderSpec)> = chunk
            .iter()
            .flat_map(|w| bidders.iter().map(move |b| (w, b)))
            .filter(|(w, b)| !done.contains_key(&(w.id.to_string(), b.name().to_string())))
            .collect();
        if todo.is_empty() {
            continue;
        }
        let fresh = todo
            .par_iter()
            .map(|(w, b)| evaluate(w, b, run, oracles))
            .collect::<Result<Vec<_>>>()?;
        for r in fresh {
            done.insert((r.world_id.clone(), r.bidder.clone()), r);
        }
        if let Some(p) = record_cache {
            let all: Vec<&EvalRecord> = done.values().collect();
            write_jsonl(p, &all)?;
        }
    }
    Ok(worlds
        .iter()
        .flat_map(|w| bidders.iter().map(move |b| (w.id.to_string(), b.name().to_string())))
        .map(|k| done[&k].clone())
        .collect())
}

/// Five-number summary plus the points beyond 1.5 IQR from the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
        let fence = 1.5 * (q3 - q1);
        let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= q1 - fence && *x <= q3 + fence).collect();
        Some(Self {
            min: v[0],
            q1,
            median: quantile(&v, 0.5),
            q3,
            max: v[v.len() - 1],
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers: v.iter().copied().filter(|x| *x < q1 - fence || *x > q3 + fence).collect(),
        })
    }
}

/// Aggregate of one `(bidder, swarm size)` group. Percent optimality and
/// iteration statistics cover the converged runs; timeouts are counted
/// separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub bidder: String,
    pub n_agents: usize,
    pub records: usize,
    pub timeouts: usize,
    /// Converged runs without a percent optimality (uncovered tasks).
    pub incomplete: usize,
    pub eta_count: usize,
    pub eta: Option<BoxStats>,
    pub iterations_p95: Option<f64>,
    pub iterations_max: Option<usize>,
    /// Records whose oracle distance carries a proof of optimality.
    pub exact_oracles: usize,
}

impl SummaryStats {
    pub fn median_eta(&self) -> Option<f64> {
        self.eta.as_ref().map(|b| b.median)
    }

    /// Some records compare against a best-known rather than a proven
    /// optimum.
    pub fn mixed_proof(&self) -> bool {
        self.exact_oracles != self.records
    }
}

/// Groups by `(bidder, n_agents)` in sorted order.
pub fn summarize(records: &[EvalRecord]) -> Vec<SummaryStats> {
    let mut groups: BTreeMap<(&str, usize), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.bidder.as_str(), r.n_agents)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((bidder, n_agents), rs)| {
            let converged: Vec<&&EvalRecord> = rs.iter().filter(|r| !r.timed_out).collect();
            let etas: Vec<f64> = converged.iter().filter_map(|r| r.eta).collect();
            let mut iters: Vec<f64> = converged.iter().map(|r| r.iterations as f64).collect();
            iters.sort_by(f64::total_cmp);
            SummaryStats {
                bidder: bidder.to_string(),
                n_agents,
                records: rs.len(),
                timeouts: rs.len() - converged.len(),
                incomplete: converged.len() - etas.len(),
                eta_count: etas.len(),
                eta: BoxStats::of(&etas),
                iterations_p95: (!iters.is_empty()).then(|| quantile(&iters, 0.95)),
                iterations_max: converged.iter().map(|r| r.iterations).max(),
                exact_oracles: rs.iter().filter(|r| r.oracle_exact).count(),
            }
        })
        .collect()
}

pub const RECORD_COLUMNS: [&str; 11] = [
    "world_id",
    "bidder",
    "n_agents",
    "n_tasks",
    "d_star",
    "d_hat",
    "eta",
    "iterations",
    "timed_out",
    "oracle_exact",
    "uncovered",
];

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

pub fn records_to_csv(records: &[EvalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(RECORD_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_records_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    write_bytes_atomic(path, &records_to_csv(records)?)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != RECORD_COLUMNS {
        return Err(Error::InvalidRecord { line: 1, reason: format!("unexpected header {header:?}") });
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::InvalidRecord { line: i + 2, reason: e.to_string() }))
        .collect()
}

/// Box-plot input of one figure group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotGroup {
    pub bidder: String,
    pub n_agents: usize,
    pub mixed_proof: bool,
    pub eta: Option<BoxStats>,
    pub iterations: Option<BoxStats>,
    pub timeouts: usize,
}

pub fn plot_data(records: &[EvalRecord], stats: &[SummaryStats]) -> Vec<PlotGroup> {
    stats
        .iter()
        .map(|s| {
            let iters: Vec<f64> = records
                .iter()
                .filter(|r| r.bidder == s.bidder && r.n_agents == s.n_agents && !r.timed_out)
                .map(|r| r.iterations as f64)
                .collect();
            PlotGroup {
                bidder: s.bidder.clone(),
                n_agents: s.n_agents,
                mixed_proof: s.mixed_proof(),
                eta: s.eta.clone(),
                iterations: BoxStats::of(&iters),
                timeouts: s.timeouts,
            }
        })
        .collect()
}

/// Files written by [`export_report`].
pub struct ReportFiles {
    pub records: PathBuf,
    pub summary: PathBuf,
    pub plot: PathBuf,
}

impl ReportFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self { records: dir.join("records.csv"), summary: dir.join("summary.json"), plot: dir.join("plot_data.json") }
    }
}

/// Writes the per-record CSV, the summary and the box-plot data into `dir`.
pub fn export_report(records: &[EvalRecord], stats: &[SummaryStats], dir: &Path) -> Result<ReportFiles> {
    let files = ReportFiles::in_dir(dir);
    write_records_csv(&files.records, records)?;
    let mut summary = serde_json::to_vec_pretty(stats)?;
    summary.push(b'\n');
    write_bytes_atomic(&files.summary, &summary)?;
    let mut plot = serde_json::to_vec_pretty(&plot_data(records, stats))?;
    plot.push(b'\n');
    write_bytes_atomic(&files.plot, &plot)?;
    Ok(files)
}

/// Reads the record JSONL written by the evaluation command.
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    read_jsonl(path)
}
