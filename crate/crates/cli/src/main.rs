//! `mde`: run, sweep and analyze the mixed detection-estimation simulator.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mde_core::analysis::{self, MixtureDistribution};
use mde_core::engine::{self, StepSchedule};
use mde_core::estimators::{self, brute_force_fixed_points};
use mde_core::harness::{self, ExperimentConfig};
use mde_core::model::{sample_snapshot, FieldSnapshot, ModelParams};
use mde_core::topology::NetworkTopology;
use mde_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mde", version, about = "Mixed detection-estimation over sensor networks with defective sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single distributed run, optionally dumping the per-iteration trace.
    Simulate(SimulateArgs),
    /// Monte Carlo MSE-versus-SNR sweep of the MDE, naive and ideal estimators.
    Sweep(SweepArgs),
    /// Tables from the performance theory.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Enumeration check of the limit on a small instance.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Paper,
    Ci,
}

/// Options shared by the commands that take an experiment config.
#[derive(Args)]
struct ConfigArgs {
    /// JSON document mirroring the experiment config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in defaults used when no config file is given.
    #[arg(long, value_enum, default_value = "paper")]
    profile: Profile,
    /// Override any config field by JSON path, e.g. `--set engine.delta=1e-8`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => match self.profile {
                Profile::Paper => ExperimentConfig::paper(),
                Profile::Ci => ExperimentConfig::ci(),
            },
        };
        for o in &self.overrides {
            let (path, value) =
                o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not PATH=VALUE")))?;
            c.set(path.trim(), value.trim())?;
        }
        let flags: [(&str, Option<String>); 7] = [
            ("master_seed", self.seed.map(|v| v.to_string())),
            ("parallelism", self.threads.map(|v| v.to_string())),
            ("engine.max_iters", self.max_iters.map(|v| v.to_string())),
            ("params.n", self.n.map(|v| v.to_string())),
            ("params.sigma", self.sigma.map(|v| v.to_string())),
            ("params.p1", self.p1.map(|v| v.to_string())),
            ("topology.radius", self.radius.map(|v| v.to_string())),
        ];
        for (path, value) in flags {
            if let Some(v) = value {
                c.set(path, &v)?;
            }
        }
        Ok(c)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Target value; overrides `params.theta`.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Target given as SNR in dB (`theta = sigma 10^(snr/20)`).
    #[arg(long, allow_hyphen_values = true, conflicts_with = "theta")]
    snr_db: Option<f64>,
    /// Write the full state trace as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-iteration estimate series (t,node,theta_hat) as CSV.
    #[arg(long)]
    plotdata: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated SNR grid in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_grid: Option<Vec<f64>>,
    /// Output CSV path (default: `<output_dir>/sweep.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MixtureArgs {
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    p1: f64,
}

impl MixtureArgs {
    fn dist(&self) -> Result<MixtureDistribution> {
        MixtureDistribution::new(self.theta, self.sigma, self.p1)
    }
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Variance factor of the ideal estimator.
    Psi {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        p1: f64,
    },
    /// Means and variances of the order statistics of n observations.
    Moments {
        #[command(flatten)]
        mix: MixtureArgs,
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Single index; default lists all i = 1..=n.
        #[arg(long)]
        i: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decision regions for a list of observations.
    Regions {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        y: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.5)]
        p1: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normal approximation of central order statistics and trimmed-mean limits.
    Asymptotics {
        #[command(flatten)]
        mix: MixtureArgs,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,0.9")]
        q: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo probabilities of the ordered detection patterns.
    Events {
        #[command(flatten)]
        mix: MixtureArgs,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OracleArgs {
    /// Observations; if omitted a snapshot is drawn from `--n/--theta/--seed`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    y: Option<Vec<f64>>,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    p1: f64,
    #[arg(long, default_value_t = 1e-9)]
    delta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also run the distributed iteration on the complete graph for this many iterations.
    #[arg(long)]
    run: Option<usize>,
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut c = args.cfg.resolve()?;
    let p = c.params;
    if let Some(theta) = args.theta {
        c.params = p.with_theta(theta)?;
    }
    if let Some(snr) = args.snr_db {
        c.params = ModelParams::from_snr_db(snr, p.sigma(), p.p1(), p.n())?;
    }
    c.engine.record_trace = args.out.is_some() || args.plotdata.is_some();
    let sim = harness::simulate(&c, c.master_seed)?;
    let r = &sim.result;
    if let Some(path) = &args.out {
        engine::write_trace_csv(r.trace.as_ref().expect("trace recorded"), writer(Some(path))?)?;
    }
    if let Some(path) = &args.plotdata {
        harness::emit_plotdata(r, c.master_seed, &c.hash(), path)?;
    }
    let mut out = io::stdout().lock();
    writeln!(out, "theta          {}", c.params.theta())?;
    writeln!(out, "schedule       {}", sim.schedule.description())?;
    writeln!(out, "graph          n = {}, edges = {}, max degree = {}", sim.topology.n(), sim.topology.edge_count(), sim.topology.max_degree())?;
    writeln!(out, "iterations     {}", r.iterations_used)?;
    match r.converged_at {
        Some(t) => writeln!(out, "converged      yes (t = {t})")?,
        None => writeln!(out, "converged      no")?,
    }
    writeln!(out, "node 1         {}", r.final_estimates[0])?;
    writeln!(out, "spread         {:e}", r.spread())?;
    writeln!(out, "fp residual    {:e}", r.fixed_point_residual)?;
    writeln!(out, "ordering       {}", engine::detection_ordering_holds(r, &sim.snapshot))?;
    writeln!(out, "naive          {}", estimators::naive_estimate(&sim.snapshot.y, c.params.p1()))?;
    let ideal = estimators::ideal_estimate(&sim.snapshot.y, &sim.snapshot.h)?;
    if ideal.defined {
        writeln!(out, "ideal          {}", ideal.estimate)?;
    } else {
        writeln!(out, "ideal          undefined (no valid sensor)")?;
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let mut c = args.cfg.resolve()?;
    if let Some(r) = args.replicates {
        c.set("replicates", &r.to_string())?;
    }
    if let Some(grid) = &args.snr_grid {
        c.set("snr_grid_db", &serde_json::to_string(grid)?)?;
    }
    let result = harness::run_sweep(&c)?;
    let path = match &args.out {
        Some(p) => p.clone(),
        None => {
            fs::create_dir_all(&c.output_dir)?;
            c.output_dir.join("sweep.csv")
        }
    };
    harness::emit_csv(&result, &path)?;
    harness::write_csv(&result, io::stdout().lock())?;
    if result.failures() > 0 {
        eprintln!("{} replicate(s) failed and were excluded from the MDE rows", result.failures());
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn analyze(cmd: &AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Psi { n, p1 } => {
            if *n == 0 || !(*p1 > 0.0 && *p1 < 1.0) {
                return Err(Error::Param("psi needs n >= 1 and 0 < p1 < 1".into()));
            }
            let n = *n;
            let approx = (2.0 - 0.5f64.powi(n.min(1100) as i32)) / (n as f64 + 1.0);
            println!("psi({n}, {p1}) = {:.7}", estimators::psi(n, *p1));
            if *p1 == 0.5 {
                println!("(2 - 2^-n)/(n + 1) = {approx:.7}");
            }
        }
        AnalyzeCommand::Moments { mix, n, i, out } => {
            let d = mix.dist()?;
            let summaries = match i {
                Some(i) => vec![analysis::order_stat_moments(&d, *n, *i)?],
                None => analysis::order_stat_moments_all(&d, *n)?,
            };
            let rows: Vec<_> = summaries.iter().map(|s| analysis::OrderStatRow::new(&d, s)).collect();
            analysis::write_table(&rows, writer(out.as_deref())?)?;
        }
        AnalyzeCommand::Regions { y, sigma, p1, out } => {
            if !(*sigma > 0.0 && *p1 > 0.0 && *p1 < 1.0) {
                return Err(Error::Param("regions need sigma > 0 and 0 < p1 < 1".into()));
            }
            let rows: Vec<_> = y.iter().map(|&v| analysis::RegionRow::new(v, *sigma, *p1)).collect();
            analysis::write_table(&rows, writer(out.as_deref())?)?;
        }
        AnalyzeCommand::Asymptotics { mix, n, q, out } => {
            let d = mix.dist()?;
            let mut rows = Vec::new();
            for &q in q {
                let (quantile, normal_variance) = analysis::central_orderstat_normal_approx(&d, *n, q)?;
                rows.push(analysis::AsymptoticRow {
                    n: *n,
                    p1: d.p1(),
                    theta: d.theta(),
                    sigma: d.sigma(),
                    q,
                    quantile,
                    normal_variance,
                    trimmed_mean_plus: analysis::asymptotic_trimmed_mean(&d, q, true)?,
                    trimmed_mean_minus: analysis::asymptotic_trimmed_mean(&d, q, false)?,
                });
            }
            analysis::write_table(&rows, writer(out.as_deref())?)?;
        }
        AnalyzeCommand::Events { mix, n, samples, seed, out } => {
            let d = mix.dist()?;
            let mut rows = Vec::new();
            for plus in [true, false] {
                let ev = analysis::event_probabilities(&d, *n, plus, *samples, *seed)?;
                eprintln!(
                    "{} branch: residual {:.6}, overlap {:.6}, sub-event overlap {:.6}",
                    if plus { "plus" } else { "minus" },
                    ev.residual,
                    ev.overlap,
                    ev.subevent_overlap
                );
                rows.extend(analysis::EventRow::rows(&d, &ev));
            }
            analysis::write_table(&rows, writer(out.as_deref())?)?;
        }
    }
    Ok(())
}

fn oracle(args: &OracleArgs) -> Result<()> {
    let snapshot = match &args.y {
        Some(y) => FieldSnapshot::from_observations(ModelParams::new(args.theta, args.sigma, args.p1, y.len())?, y.clone())?,
        None => sample_snapshot(&ModelParams::new(args.theta, args.sigma, args.p1, args.n)?, args.seed),
    };
    let p = snapshot.params;
    let o = estimators::centralized_mde_oracle(&snapshot.y, &p, args.delta)?;
    let brute = brute_force_fixed_points(&snapshot.y, &p, args.delta, o.plus)?;
    let mut out = io::stdout().lock();
    writeln!(out, "y              {:?}", snapshot.y)?;
    writeln!(out, "branch         {}", if o.plus { "plus" } else { "minus" })?;
    for f in &o.fixed_points {
        let pattern: String = f.h.iter().map(|&h| if h { '1' } else { '0' }).collect();
        writeln!(out, "fixed point    {:<22} h = {pattern}", f.theta)?;
    }
    writeln!(out, "selected       {}", o.selected)?;
    writeln!(out, "brute force    {} fixed point(s), agree = {}", brute.len(), brute == o.fixed_points)?;
    if let Some(iters) = args.run {
        let topo = NetworkTopology::complete(snapshot.n())?;
        let cfg = engine::EngineConfig { max_iters: iters, ..Default::default() };
        let r = engine::run(&snapshot, &topo, &StepSchedule::for_topology(&topo), &cfg)?;
        let m = engine::median(&r.final_estimates);
        writeln!(out, "distributed    {m} after {} iterations (distance to nearest fixed point {:e})", r.iterations_used, o.distance(m))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Analyze(a) => analyze(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
