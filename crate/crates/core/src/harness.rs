//! Monte Carlo experiments: configuration, MSE-versus-SNR sweeps over the
//! three estimators, and CSV persistence.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::engine::{self, EngineConfig, NodeState, RunResult, StepSchedule};
use crate::error::{Error, Result};
use crate::estimators::{ideal_estimate, naive_estimate};
use crate::model::{sample_snapshot_with, FieldSnapshot, ModelParams};
use crate::rng::{self, derive_seed};
use crate::topology::{self, NetworkTopology, DEFAULT_ATTEMPT_BUDGET};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    /// Random geometric graph on the unit square, redrawn per replicate.
    Rgg,
    Complete,
    /// Fixed graph read from an edge-list file.
    EdgeList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub radius: f64,
    pub path: Option<PathBuf>,
    pub attempt_budget: u32,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig { kind: TopologyKind::Rgg, radius: 0.3, path: None, attempt_budget: DEFAULT_ATTEMPT_BUDGET }
    }
}

/// Power-law step sizes; `delta_b = null` scales the consensus gain to each
/// drawn graph as `1/(d_max + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub delta_a: f64,
    pub delta_b: Option<f64>,
    pub epsilon: f64,
    pub convexity_cap: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            delta_a: engine::DEFAULT_DELTA_A,
            delta_b: None,
            epsilon: engine::DEFAULT_EPSILON,
            convexity_cap: true,
        }
    }
}

impl ScheduleConfig {
    pub fn for_topology(&self, topo: &NetworkTopology) -> StepSchedule {
        StepSchedule::power_law_for(topo, self.delta_a, self.delta_b, self.epsilon, self.convexity_cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `theta` is used by single runs; sweeps set it from each SNR point.
    pub params: ModelParams,
    pub topology: TopologyConfig,
    pub schedule: ScheduleConfig,
    pub engine: EngineConfig,
    pub replicates: usize,
    pub snr_grid_db: Vec<f64>,
    pub master_seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub parallelism: usize,
    pub output_dir: PathBuf,
    /// Fixed-point residual below which a run counts as passing.
    pub fixed_point_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ExperimentConfig {
    /// The full experiment: 50 sensors, radius 0.3, p1 = 0.5, sigma = 1,
    /// 500 replicates of 3000 iterations, SNR -30..40 dB in 5 dB steps.
    pub fn paper() -> Self {
        ExperimentConfig {
            params: ModelParams::new(100.0, 1.0, 0.5, 50).expect("valid defaults"),
            topology: TopologyConfig::default(),
            schedule: ScheduleConfig::default(),
            engine: EngineConfig { max_iters: 3000, halt_on_convergence: false, ..EngineConfig::default() },
            replicates: 500,
            snr_grid_db: (0..=14).map(|k| -30.0 + 5.0 * k as f64).collect(),
            master_seed: 20_240_601,
            parallelism: 0,
            output_dir: PathBuf::from("out"),
            fixed_point_tol: 1e-3,
        }
    }

    /// Reduced profile: 100 replicates, 1000 iterations, 10 dB steps.
    pub fn ci() -> Self {
        let mut c = Self::paper();
        c.replicates = 100;
        c.engine.max_iters = 1000;
        c.snr_grid_db = (0..=7).map(|k| -30.0 + 10.0 * k as f64).collect();
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if let Some(x) = self.snr_grid_db.iter().find(|x| !x.is_finite()) {
            return Err(Error::Config(format!("SNR grid entries must be finite, got {x}")));
        }
        let t = &self.topology;
        match t.kind {
            TopologyKind::Rgg => {
                if !(t.radius > 0.0 && t.radius <= std::f64::consts::SQRT_2) {
                    return Err(Error::Config(format!("radius must lie in (0, sqrt 2], got {}", t.radius)));
                }
                if t.attempt_budget == 0 {
                    return Err(Error::Config("attempt_budget must be positive".into()));
                }
            }
            TopologyKind::EdgeList if t.path.is_none() => {
                return Err(Error::Config("edge_list topology needs a path".into()));
            }
            _ => {}
        }
        let s = &self.schedule;
        if !(s.delta_a > 0.0 && s.delta_a < 1.0 && s.epsilon > 0.0 && s.epsilon < 1.0) {
            return Err(Error::Config("schedule needs 0 < delta_a < 1 and 0 < epsilon < 1".into()));
        }
        if let Some(b) = s.delta_b {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("delta_b must lie in (0, 1), got {b}")));
            }
        }
        if !(self.fixed_point_tol > 0.0) {
            return Err(Error::Config("fixed_point_tol must be positive".into()));
        }
        Ok(())
    }

    /// Overrides one field addressed by a dotted JSON path, e.g.
    /// `engine.max_iters=500` or `snr_grid_db=[0,20,40]`. The value is parsed
    /// as JSON, falling back to a plain string.
    pub fn set(&mut self, path: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for key in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(key))
                .ok_or_else(|| Error::Config(format!("unknown config path `{path}`")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let updated: Self =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("`{path}={raw}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// SHA-256 of the compact JSON serialization, leaving out the fields that
    /// cannot change results (`parallelism`, `output_dir`).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("parallelism");
            map.remove("output_dir");
        }
        hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("config serializes")))
    }

    fn fixed_topology(&self) -> Result<Option<NetworkTopology>> {
        let n = self.params.n();
        let topo = match self.topology.kind {
            TopologyKind::Rgg => return Ok(None),
            TopologyKind::Complete => NetworkTopology::complete(n)?,
            TopologyKind::EdgeList => {
                let path = self.topology.path.as_ref().expect("validated");
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                topology::parse_edge_list(&text, Some(n))?
            }
        };
        Ok(Some(topo))
    }

    /// Draws (or loads) the communication graph for one realization.
    pub fn topology_for(&self, seed: u64) -> Result<NetworkTopology> {
        match self.fixed_topology()? {
            Some(t) => Ok(t),
            None => topology::random_geometric_graph_with_budget(
                self.params.n(),
                self.topology.radius,
                seed,
                self.topology.attempt_budget,
            ),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

/// One distributed run on a fresh topology and snapshot.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub topology: NetworkTopology,
    pub snapshot: FieldSnapshot,
    pub schedule: StepSchedule,
    pub result: RunResult,
}

/// Single run at `config.params` with streams derived from `seed`.
pub fn simulate(config: &ExperimentConfig, seed: u64) -> Result<Simulation> {
    config.validate()?;
    let topology = config.topology_for(derive_seed(seed, &[rng::purpose::TOPOLOGY]))?;
    let mut snap_rng = rng::stream(seed, &[rng::purpose::SNAPSHOT]);
    let snapshot = sample_snapshot_with(&config.params, &mut snap_rng);
    let schedule = config.schedule.for_topology(&topology);
    let result = engine::run(&snapshot, &topology, &schedule, &config.engine)?;
    Ok(Simulation { topology, snapshot, schedule, result })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Curve {
    #[serde(rename = "mde")]
    Mde,
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "ideal")]
    Ideal,
}

impl Curve {
    pub const ALL: [Curve; 3] = [Curve::Mde, Curve::Naive, Curve::Ideal];

    pub fn label(&self) -> &'static str {
        match self {
            Curve::Mde => "mde",
            Curve::Naive => "naive",
            Curve::Ideal => "ideal",
        }
    }
}

/// Aggregate over the replicates of one (SNR, estimator) cell. MDE-only
/// columns are `None` for the centralized benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub estimator: Curve,
    pub mse: f64,
    pub bias: f64,
    /// Standard error of the MSE estimate.
    pub std_err: f64,
    pub conv_rate: Option<f64>,
    pub fp_pass: Option<f64>,
    pub ord_pass: Option<f64>,
    pub mean_iters: Option<f64>,
    /// Mean over runs of the final max-min spread of node estimates.
    #[serde(skip)]
    pub mean_spread: Option<f64>,
    /// Replicates contributing to the row.
    #[serde(skip)]
    pub samples: usize,
    /// Replicates that failed (topology or numerical failure).
    #[serde(skip)]
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub master_seed: u64,
    pub config_hash: String,
}

impl SweepResult {
    pub fn row(&self, snr_db: f64, estimator: Curve) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.snr_db == snr_db && r.estimator == estimator)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.estimator == Curve::Mde).map(|r| r.failures).sum()
    }
}

#[derive(Debug, Clone)]
struct MdeOutcome {
    estimate: f64,
    converged: bool,
    iterations: usize,
    fp_pass: bool,
    ord_pass: bool,
    spread: f64,
}

#[derive(Debug, Clone)]
struct Replicate {
    mde: Option<MdeOutcome>,
    naive: f64,
    ideal: Option<f64>,
}

fn run_replicate(config: &ExperimentConfig, params: &ModelParams, snr_idx: usize, rep: usize) -> Replicate {
    let cell = [snr_idx as u64, rep as u64];
    let mut snap_rng = rng::stream(config.master_seed, &[cell[0], cell[1], rng::purpose::SNAPSHOT]);
    let snapshot = sample_snapshot_with(params, &mut snap_rng);
    let naive = naive_estimate(&snapshot.y, params.p1());
    let ideal = ideal_estimate(&snapshot.y, &snapshot.h).ok().filter(|r| r.defined).map(|r| r.estimate);

    let topo_seed = derive_seed(config.master_seed, &[cell[0], cell[1], rng::purpose::TOPOLOGY]);
    let mde = config.topology_for(topo_seed).and_then(|topo| {
        let schedule = config.schedule.for_topology(&topo);
        let r = engine::run(&snapshot, &topo, &schedule, &config.engine)?;
        Ok(MdeOutcome {
            // Node 1 (index 0) is the reported consensus value.
            estimate: r.final_estimates[0],
            converged: r.converged,
            iterations: r.iterations_used,
            fp_pass: r.fixed_point_residual < config.fixed_point_tol,
            ord_pass: engine::detection_ordering_holds(&r, &snapshot),
            spread: r.spread(),
        })
    });
    Replicate { mde: mde.ok(), naive, ideal }
}

/// Pairwise (cascade) summation; with the inputs in replicate order the
/// result is independent of how the replicates were scheduled.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

fn rate(flags: impl Iterator<Item = bool>, n: usize) -> f64 {
    flags.filter(|&b| b).count() as f64 / n as f64
}

fn summarize(snr_db: f64, theta: f64, estimator: Curve, estimates: &[f64], failures: usize) -> SweepRow {
    let m = estimates.len();
    let sq: Vec<f64> = estimates.iter().map(|e| (e - theta) * (e - theta)).collect();
    let (mse, bias, std_err) = if m == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mse = mean(&sq);
        let dev: Vec<f64> = sq.iter().map(|s| (s - mse) * (s - mse)).collect();
        let var = if m > 1 { pairwise_sum(&dev) / (m - 1) as f64 } else { 0.0 };
        (mse, mean(estimates) - theta, (var / m as f64).sqrt())
    };
    SweepRow {
        snr_db,
        estimator,
        mse,
        bias,
        std_err,
        conv_rate: None,
        fp_pass: None,
        ord_pass: None,
        mean_iters: None,
        mean_spread: None,
        samples: m,
        failures,
    }
}

/// Runs every (SNR, replicate) cell: fresh topology and snapshot per cell,
/// MDE plus both benchmarks on the same snapshot. Cell streams are derived
/// from `(master_seed, snr index, replicate)`, so the result does not depend
/// on the thread count. Failed MDE runs are counted, not fatal.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut param_grid = Vec::with_capacity(config.snr_grid_db.len());
    for &snr in &config.snr_grid_db {
        let p = &config.params;
        param_grid.push(ModelParams::from_snr_db(snr, p.sigma(), p.p1(), p.n())?);
    }
    // Surface configuration problems (e.g. an unreadable edge list) up front.
    config.fixed_topology()?;
    let reps = config.replicates;
    let cells: Vec<Replicate> = config.pool()?.install(|| {
        (0..param_grid.len() * reps)
            .into_par_iter()
            .map(|c| run_replicate(config, &param_grid[c / reps], c / reps, c % reps))
            .collect()
    });

    let mut rows = Vec::with_capacity(3 * param_grid.len());
    for (s, params) in param_grid.iter().enumerate() {
        let snr = config.snr_grid_db[s];
        let theta = params.theta();
        let block = &cells[s * reps..(s + 1) * reps];
        let mde: Vec<&MdeOutcome> = block.iter().filter_map(|r| r.mde.as_ref()).collect();
        let failures = reps - mde.len();
        let mut row = summarize(snr, theta, Curve::Mde, &mde.iter().map(|o| o.estimate).collect::<Vec<_>>(), failures);
        if !mde.is_empty() {
            let m = mde.len();
            row.conv_rate = Some(rate(mde.iter().map(|o| o.converged), m));
            row.fp_pass = Some(rate(mde.iter().map(|o| o.fp_pass), m));
            row.ord_pass = Some(rate(mde.iter().map(|o| o.ord_pass), m));
            row.mean_iters = Some(mean(&mde.iter().map(|o| o.iterations as f64).collect::<Vec<_>>()));
            row.mean_spread = Some(mean(&mde.iter().map(|o| o.spread).collect::<Vec<_>>()));
        }
        rows.push(row);
        rows.push(summarize(snr, theta, Curve::Naive, &block.iter().map(|r| r.naive).collect::<Vec<_>>(), 0));
        let ideal: Vec<f64> = block.iter().filter_map(|r| r.ideal).collect();
        rows.push(summarize(snr, theta, Curve::Ideal, &ideal, 0));
    }
    Ok(SweepResult { rows, master_seed: config.master_seed, config_hash: config.hash() })
}

pub const CSV_HEADER: &str = "snr_db,estimator,mse,bias,std_err,conv_rate,fp_pass,ord_pass,mean_iters";

fn provenance(seed: u64, hash: &str) -> String {
    format!("# mde-core {VERSION} seed={seed} config_sha256={hash}\n")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes the sweep table: a `#` provenance line, the header, one row per
/// (SNR, estimator). Floats use the shortest round-trip representation.
pub fn write_csv<W: Write>(result: &SweepResult, mut out: W) -> Result<()> {
    out.write_all(provenance(result.master_seed, &result.config_hash).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in &result.rows {
        w.write_record([
            r.snr_db.to_string(),
            r.estimator.label().to_string(),
            r.mse.to_string(),
            r.bias.to_string(),
            r.std_err.to_string(),
            opt(r.conv_rate),
            opt(r.fp_pass),
            opt(r.ord_pass),
            opt(r.mean_iters),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    write_csv(result, fs::File::create(path)?)
}

/// Reads a sweep table back (the documented columns only; `#` lines skipped).
pub fn parse_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!("unexpected header `{}`", header.join(","))));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Per-iteration estimate series (`t,node,theta_hat`) from a traced run.
pub fn write_plotdata<W: Write>(trace: &[Vec<NodeState>], seed: u64, hash: &str, mut out: W) -> Result<()> {
    out.write_all(provenance(seed, hash).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "node", "theta_hat"])?;
    for (t, states) in trace.iter().enumerate() {
        for (i, s) in states.iter().enumerate() {
            w.write_record([t.to_string(), i.to_string(), s.estimate.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_plotdata(result: &RunResult, seed: u64, hash: &str, path: &Path) -> Result<()> {
    let trace = result
        .trace
        .as_ref()
        .ok_or_else(|| Error::Config("plot data needs a run recorded with record_trace".into()))?;
    write_plotdata(trace, seed, hash, fs::File::create(path)?)
}

/// Reads the provenance line of an emitted file, if present.
pub fn read_provenance<R: Read>(input: R) -> Result<Option<String>> {
    let mut line = String::new();
    BufReader::new(input).read_line(&mut line)?;
    Ok(line.strip_prefix("# ").map(|s| s.trim_end().to_string()))
}
