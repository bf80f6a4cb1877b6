//! Command-line front end: argument parsing, config merging, experiment
//! drivers and the mapping from errors to exit codes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use crate::coupling::{CoupledNlmp, CoupledState, InitialCoupling, DEFAULT_COUPLED_K};
use crate::network::{NetworkError, ValidatedNetwork};
use crate::nlmp::{geometric_bounds, stationary_internal_flow, tv_distance, MeasureState, Nlmp, SolverConfig, SolverError};
use crate::output::{self, OutputError, Provenance};
use crate::sim::{self, EnsembleState, EventFilter, SimConfig, SimError};
use crate::spec_file::{load_network, SpecFileError};
use crate::word::{QueueWord, WordSpace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_NO_CONVERGENCE: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Spec(#[from] SpecFileError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("cannot write to {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_PARSE,
            CliError::Spec(SpecFileError::Invalid(_)) => EXIT_VALIDATION,
            CliError::Spec(_) => EXIT_PARSE,
            CliError::Solver(e) | CliError::Sim(SimError::Solver(e)) => solver_exit_code(e),
            CliError::Sim(_) => EXIT_PARSE,
            CliError::Output(_) | CliError::Io { .. } => EXIT_IO,
        }
    }
}

fn solver_exit_code(e: &SolverError) -> i32 {
    match e {
        SolverError::StepSizeUnstable { .. } | SolverError::StabilityGuard { .. } => EXIT_NUMERICAL,
        SolverError::NoConvergenceWithinHorizon { .. } | SolverError::FlowMismatch { .. } => EXIT_NO_CONVERGENCE,
        SolverError::Network(_) | SolverError::NonConstantInflow | SolverError::KappaNotSubcritical { .. } => {
            EXIT_VALIDATION
        }
        _ => EXIT_PARSE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mfqnet", version, about = "Mean-field queueing networks at low load")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Any of them may also be set in the
/// `--config` file; the command line wins.
#[derive(Debug, Args, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CommonArgs {
    /// Network file (TOML).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Directory for CSV output.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub t_end: Option<f64>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Truncation depth K.
    #[arg(long = "trunc-K", global = true)]
    #[serde(rename = "trunc-K")]
    pub trunc_k: Option<usize>,
    /// Number of copies in the simulation.
    #[arg(long = "M", global = true)]
    #[serde(rename = "M")]
    pub copies: Option<usize>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// TOML file providing defaults for the flags above.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl CommonArgs {
    fn or(self, file: CommonArgs) -> CommonArgs {
        CommonArgs {
            spec: self.spec.or(file.spec),
            out_dir: self.out_dir.or(file.out_dir),
            seed: self.seed.or(file.seed),
            t_end: self.t_end.or(file.t_end),
            dt: self.dt.or(file.dt),
            trunc_k: self.trunc_k.or(file.trunc_k),
            copies: self.copies.or(file.copies),
            threshold: self.threshold.or(file.threshold),
            config: self.config,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a network file and print its derived constants.
    Validate,
    /// Integrate the mean-field limit from an initial measure.
    Nlmp {
        /// `empty`, `word:<digits>`, `geometric:<ratio>` or a CSV of
        /// `word,weight` rows.
        #[arg(long, default_value = "empty")]
        init: String,
        /// Steps between output rows.
        #[arg(long, default_value_t = 10)]
        every: usize,
        /// Also write the full measure every this many output rows.
        #[arg(long)]
        dump_every: Option<usize>,
    },
    /// Integrate the white/red coupling of two initial measures.
    Couple {
        #[arg(long, default_value = "word:1")]
        first: String,
        #[arg(long, default_value = "empty")]
        second: String,
        #[arg(long, default_value_t = 100)]
        every: usize,
    },
    /// Finite-M exact-jump simulation.
    Simulate {
        #[arg(long, default_value = "empty")]
        init: String,
        /// Time between summary rows.
        #[arg(long, default_value_t = 1.0)]
        sample_every: f64,
        /// Log events touching this copy.
        #[arg(long)]
        log_copy: Option<usize>,
        /// Log events of every copy.
        #[arg(long, conflicts_with = "log_copy")]
        log_all: bool,
        #[arg(long, default_value_t = 0.0)]
        log_from: f64,
        #[arg(long)]
        log_to: Option<f64>,
    },
    /// Coupled run plus two independent runs; reports when the marginals
    /// merge.
    Ergodicity {
        #[arg(long, default_value = "word:111")]
        first: String,
        #[arg(long, default_value = "empty")]
        second: String,
        #[arg(long, default_value_t = 100)]
        every: usize,
    },
    /// Distance between the empirical measure of a simulation and the
    /// mean-field limit, plus Poisson tests of one copy's arrivals.
    Compare {
        #[arg(long, default_value = "empty")]
        init: String,
        #[arg(long, default_value_t = 1.0)]
        sample_every: f64,
        /// Start of the arrival window used for the Poisson tests.
        #[arg(long, default_value_t = 0.0)]
        warmup: f64,
    },
    /// Stationary measure under constant inflow.
    Stationary,
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub spec: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub t_end: Option<f64>,
    pub dt: f64,
    pub trunc_k: Option<usize>,
    pub copies: usize,
    pub threshold: f64,
}

impl ExperimentConfig {
    pub fn resolve(args: CommonArgs) -> Result<Self, CliError> {
        let args = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                let file: CommonArgs =
                    toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
                args.or(file)
            }
            None => args,
        };
        let spec = args.spec.ok_or_else(|| CliError::Usage("--spec is required".into()))?;
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x.is_finite() && x > 0.0) => Err(CliError::Usage(format!("--{name} must be positive, got {x}"))),
            _ => Ok(v),
        };
        let cfg = ExperimentConfig {
            spec,
            out_dir: args.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            seed: args.seed.unwrap_or(1),
            t_end: positive("t-end", args.t_end)?,
            dt: positive("dt", args.dt)?.unwrap_or(0.01),
            trunc_k: args.trunc_k,
            copies: args.copies.unwrap_or(2000),
            threshold: positive("threshold", args.threshold)?.unwrap_or(1e-3),
        };
        if cfg.copies == 0 {
            return Err(CliError::Usage("--M must be positive".into()));
        }
        Ok(cfg)
    }

    fn t_end_or(&self, default: f64) -> f64 {
        self.t_end.unwrap_or(default)
    }
}

/// Parses an initial-state descriptor on `space`.
pub fn parse_initial(desc: &str, space: &Arc<WordSpace>) -> Result<MeasureState, CliError> {
    let classes = space.classes();
    let bad = |msg: String| CliError::Usage(format!("initial state '{desc}': {msg}"));
    if desc == "empty" {
        return Ok(MeasureState::empty_queue(space.clone()));
    }
    if let Some(w) = desc.strip_prefix("word:") {
        let x = QueueWord::parse(w, classes).map_err(|e| bad(e.to_string()))?;
        return MeasureState::point(space.clone(), &x).map_err(|e| bad(e.to_string()));
    }
    if let Some(r) = desc.strip_prefix("geometric:") {
        let ratio: f64 = r.parse().map_err(|_| bad("ratio is not a number".into()))?;
        return MeasureState::geometric(space.clone(), ratio).map_err(|e| bad(e.to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(desc)
        .map_err(|e| bad(e.to_string()))?;
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != 2 || record[0].eq_ignore_ascii_case("word") {
            continue;
        }
        let x = QueueWord::parse(&record[0], classes).map_err(|e| bad(e.to_string()))?;
        let w: f64 = record[1].parse().map_err(|_| bad(format!("weight '{}'", &record[1])))?;
        pairs.push((x, w));
    }
    MeasureState::from_pairs(space.clone(), pairs).map_err(|e| bad(e.to_string()))
}

/// Runs one invocation, writing the human-readable report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ExperimentConfig::resolve(cli.common)?;
    let net = load_network(&cfg.spec)?;
    let report = |out: &mut dyn Write, line: String| {
        writeln!(out, "{line}").map_err(|source| CliError::Io {
            path: "stdout".into(),
            source,
        })
    };
    match cli.command {
        Command::Validate => validate(&net, out, report),
        Command::Nlmp { init, every, dump_every } => cmd_nlmp(&net, &cfg, &init, every, dump_every, out, report),
        Command::Couple { first, second, every } => cmd_couple(&net, &cfg, &first, &second, every, out, report),
        Command::Simulate {
            init,
            sample_every,
            log_copy,
            log_all,
            log_from,
            log_to,
        } => {
            let filter = match (log_copy, log_all) {
                (Some(c), _) => Some(EventFilter::copy_window(c, log_from, log_to.unwrap_or(f64::INFINITY))),
                (None, true) => Some(EventFilter {
                    copies: None,
                    start: log_from,
                    end: log_to.unwrap_or(f64::INFINITY),
                }),
                (None, false) => None,
            };
            cmd_simulate(&net, &cfg, &init, sample_every, filter, out, report)
        }
        Command::Ergodicity { first, second, every } => cmd_ergodicity(&net, &cfg, &first, &second, every, out, report),
        Command::Compare {
            init,
            sample_every,
            warmup,
        } => cmd_compare(&net, &cfg, &init, sample_every, warmup, out, report),
        Command::Stationary => cmd_stationary(&net, &cfg, out, report),
    }
}

type Report = fn(&mut dyn Write, String) -> Result<(), CliError>;

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(", "))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn validate(net: &ValidatedNetwork, out: &mut dyn Write, report: Report) -> Result<(), CliError> {
    report(out, format!("valid network, spec hash {}", net.hash()))?;
    report(out, format!("classes = {}", net.classes()))?;
    report(out, format!("spectral radius rho(P) = {}", net.spectral().radius))?;
    report(out, format!("h = {}", fmt_vec(net.h())))?;
    report(
        out,
        format!("lambda_plus = {}, gamma_minus = {}, gamma_plus = {}", net.lambda_plus(), net.gamma_minus(), net.gamma_plus()),
    )?;
    match stationary_internal_flow(net) {
        Ok(flow) => {
            report(out, format!("w* = {}", fmt_vec(&flow.w)))?;
            report(out, format!("v* = {}", fmt_vec(&flow.v)))?;
            let v_max = flow.v.iter().cloned().fold(0.0, f64::max);
            match geometric_bounds(v_max, net.gamma_minus(), net.classes()) {
                Ok(b) => report(out, format!("kappa with eps = max v* = {}: kappa = {}, P(empty) >= {}", v_max, b.kappa, b.p0_lower))?,
                Err(e) => report(out, format!("kappa with eps = max v*: {e}"))?,
            }
        }
        Err(SolverError::NonConstantInflow) => report(out, "w*: inflow is not constant".into())?,
        Err(e) => return Err(e.into()),
    }
    match geometric_bounds(net.lambda_plus(), net.gamma_minus(), net.classes()) {
        Ok(b) => report(
            out,
            format!(
                "kappa = {} (eps = lambda_plus); P(empty) >= {}, mean length <= {}, tail mean <= {}",
                b.kappa, b.p0_lower, b.mean_upper, b.tail_mean_upper
            ),
        )?,
        Err(e) => report(out, format!("kappa: {e}"))?,
    }
    Ok(())
}

fn cmd_nlmp(
    net: &ValidatedNetwork,
    cfg: &ExperimentConfig,
    init: &str,
    every: usize,
    dump_every: Option<usize>,
    out: &mut dyn Write,
    report: Report,
) -> Result<(), CliError> {
    let k = cfg.trunc_k.unwrap_or(net.truncation());
    let solver = Nlmp::new(net, k)?;
    let mu0 = parse_initial(init, solver.space())?;
    let sc = SolverConfig::new(k, cfg.dt, cfg.t_end_or(200.0)).with_sampling(every, dump_every.is_some());
    let traj = solver.integrate(&mu0, &sc)?;
    let prov = Provenance::new(None, net.hash());
    output::write_trajectory(create(&cfg.out_dir, "trajectory.csv")?, &prov, net.classes(), &traj.samples)?;
    if let Some(stride) = dump_every {
        let picked: Vec<MeasureState> = traj.measures.iter().step_by(stride.max(1)).cloned().collect();
        output::write_measures(create(&cfg.out_dir, "measures.csv")?, &prov, &picked)?;
    }
    let last = traj.samples.last().expect("at least one sample");
    report(out, format!("t = {}, mass = {}, leaked = {:e}", last.t, last.mass, last.leaked))?;
    report(out, format!("v = {}", fmt_vec(&last.flows.v)))?;
    report(out, format!("P(empty) = {}", traj.final_state.weights()[0]))?;
    report(out, format!("max ledger defect = {:e}", traj.max_ledger_defect()))
}

fn coupled_run(
    net: &ValidatedNetwork,
    cfg: &ExperimentConfig,
    first: &str,
    second: &str,
    every: usize,
    keep: bool,
    default_t: f64,
) -> Result<(CoupledNlmp, crate::coupling::CoupledTrajectory, SolverConfig, MeasureState, MeasureState), CliError> {
    let k = cfg.trunc_k.unwrap_or(DEFAULT_COUPLED_K);
    let coupled = CoupledNlmp::new(net, k)?;
    let a = parse_initial(first, coupled.space())?;
    let b = parse_initial(second, coupled.space())?;
    let state = CoupledState::couple(&a, &b, InitialCoupling::Greedy)?;
    let sc = SolverConfig::new(k, cfg.dt, cfg.t_end_or(default_t)).with_sampling(every, keep);
    let traj = coupled.integrate(&state, &sc)?;
    Ok((coupled, traj, sc, a, b))
}

fn cmd_couple(
    net: &ValidatedNetwork,
    cfg: &ExperimentConfig,
    first: &str,
    second: &str,
    every: usize,
    out: &mut dyn Write,
    report: Report,
) -> Result<(), CliError> {
    let (_, traj, _, _, _) = coupled_run(net, cfg, first, second, every, false, 500.0)?;
    output::write_coupling(create(&cfg.out_dir, "coupling.csv")?, &Provenance::new(None, net.hash()), &traj.samples)?;
    let last = traj.samples.last().expect("at least one sample");
    report(out, format!("t = {}, r_t = {:e}, red pairs = {:e}, orphans = {:e}", last.t, last.r_mass, last.red_pair_mass, last.orphan_mass))?;
    report(out, format!("integral of r_t = {}", last.red_integral))?;
    match traj.first_time_red_below(cfg.threshold) {
        Some(t) => report(out, format!("r_t < {} first at t = {t}", cfg.threshold)),
        None => report(out, format!("r_t stayed above {} within the horizon", cfg.threshold)),
    }
}

fn cmd_ergodicity(
    net: &ValidatedNetwork,
    cfg: &ExperimentConfig,
    first: &str,
    second: &str,
    every: usize,
    out: &mut dyn Write,
    report: Report,
) -> Result<(), CliError> {
    let (coupled, traj, sc, a, b) = coupled_run(net, cfg, first, second, every, false, 500.0)?;
    let solver = Nlmp::new(net, coupled.max_len())?;
    let sc = sc.with_sampling(every, true);
    let ta = solver.integrate(&a, &sc)?;
    let tb = solver.integrate(&b, &sc)?;
    let mut rows = Vec::new();
    let mut crossing = None;
    for ((ma, mb), s) in ta.measures.iter().zip(&tb.measures).zip(&traj.samples) {
        let tv = tv_distance(ma, mb)?;
        if crossing.is_none() && tv < cfg.threshold {
            crossing = Some(s.t);
        }
        rows.push(vec![s.t, tv, s.r_mass, s.tv_actual]);
    }
    let prov = Provenance::new(None, net.hash());
    output::write_series(create(&cfg.out_dir, "ergodicity.csv")?, &prov, &["t", "tv", "r_mass", "tv_coupled"], &rows)?;
    output::write_coupling(create(&cfg.out_dir, "coupling.csv")?, &prov, &traj.samples)?;
    let last = rows.last().expect("at least one row");
    report(out, format!("t = {}, TV = {:e}, r_t = {:e}", last[0], last[1], last[2]))?;
    match crossing {
        Some(t) => report(out, format!("TV < {} first at t = {t}", cfg.threshold)),
        None => report(out, format!("no crossing: TV stayed above {} within the horizon", cfg.threshold)),
    }
}

fn initial_ensemble(desc: &str, space: &Arc<WordSpace>, copies: usize, seed: u64) -> Result<EnsembleState, CliError> {
    if desc == "empty" {
        return Ok(EnsembleState::empty(copies, seed));
    }
    if let Some(w) = desc.strip_prefix("word:") {
        let x = QueueWord::parse(w, space.classes()).map_err(|e| CliError::Usage(format!("initial state '{desc}': {e}")))?;
        return Ok(EnsembleState::from_queues(vec![x; copies], seed));
    }
    let mu = parse_initial(desc, space)?;
    Ok(EnsembleState::sample_from(&mu, copies, seed)?)
}

fn cmd_simulate(
    net: &ValidatedNetwork,
    cfg: &ExperimentConfig,
    init: &str,
    sample_every: f64,
    filter: Option<EventFilter>,
    out: &mut dyn Write,
    report: Report,
) -> Result<(), CliError> {
    let k = cfg.trunc_k.unwrap_or(net.truncation());
    let space = Arc::new(WordSpace::new(net.classes(), k).map_err(SolverError::from)?);
    let start = initial_ensemble(init, &space, cfg.copies, cfg.seed)?;
    let mut sc = SimConfig::new(cfg.t_end_or(100.0), k).with_samples(sample_every);
    sc.log = filter;
    let summary = sim::simulate(net, start, &sc)?;
    let prov = Provenance::new(Some(cfg.seed), net.hash());
    output::write_sim_summary(create(&cfg.out_dir, "simulation.csv")?, &prov, &summary.samples)?;
    if sc.log.is_some() {
        output::write_event_log(create(&cfg.out_dir, "events.csv")?, &prov, &summary.log)?;
    }
    report(out, format!("M = {}, events = {}, customers at end = {}", cfg.copies, summary.events, summary.final_state.customers()))?;
    report(out, format!("time-averaged occupancy = {}", summary.mean_occupancy))?;
    if sc.log.is_some() {
        report(out, format!("logged events = {}", summary.log.events.len()))?;
    }
    Ok(())
}

fn cmd_compare(
    net: &ValidatedNetwork,
    cfg: &ExperimentConfig,
    init: &str,
    sample_every: f64,
    warmup: f64,
    out: &mut dyn Write,
    report: Report,
) -> Result<(), CliError> {
    let k = cfg.trunc_k.unwrap_or(net.truncation());
    let t_end = cfg.t_end_or(100.0);
    let stride = (sample_every / cfg.dt).round();
    if stride < 1.0 || (stride * cfg.dt - sample_every).abs() > 1e-9 * sample_every.max(1.0) {
        return Err(CliError::Usage(format!("--sample-every {sample_every} is not a multiple of --dt {}", cfg.dt)));
    }
    let solver = Nlmp::new(net, k)?;
    let mu0 = parse_initial(init, solver.space())?;
    let traj = solver.integrate(&mu0, &SolverConfig::new(k, cfg.dt, t_end).with_sampling(stride as usize, true))?;

    let start = initial_ensemble(init, solver.space(), cfg.copies, cfg.seed)?;
    let sc = SimConfig::new(t_end, k)
        .with_samples(sample_every)
        .with_log(EventFilter::copy_window(0, warmup, t_end));
    let summary = sim::simulate(net, start, &sc)?;

    let mut rows = Vec::new();
    for s in &summary.samples {
        if let Some(m) = traj.measures.iter().find(|m| (m.time() - s.t).abs() < 1e-6) {
            rows.push(vec![s.t, tv_distance(&s.measure, m)?, s.occupancy, m.alpha()]);
        }
    }
    let prov = Provenance::new(Some(cfg.seed), net.hash());
    output::write_series(create(&cfg.out_dir, "compare.csv")?, &prov, &["t", "tv", "occupancy", "alpha"], &rows)?;
    if let Some(last) = rows.last() {
        report(out, format!("M = {}, t = {}, TV(empirical, limit) = {}", cfg.copies, last[0], last[1]))?;
    }

    match stationary_internal_flow(net) {
        Ok(flow) => {
            let mut results = Vec::new();
            for (j, &rate) in flow.v.iter().enumerate() {
                let gaps = sim::interarrival_samples(&summary.log, 0, j, warmup, t_end)?;
                match sim::ks_exponential(&gaps, rate) {
                    Ok(r) => {
                        report(out, format!("class {}: {} gaps vs Exp({rate}): D = {}, p = {}", j + 1, r.n, r.statistic, r.p_value))?;
                        results.push((j, rate, r));
                    }
                    Err(SimError::TooFewSamples { got, .. }) => {
                        report(out, format!("class {}: only {got} gaps, Poisson test skipped", j + 1))?
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            output::write_ks(create(&cfg.out_dir, "ks.csv")?, &prov, &results)?;
        }
        Err(SolverError::NonConstantInflow) => report(out, "inflow not constant, Poisson test skipped".into())?,
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn cmd_stationary(net: &ValidatedNetwork, cfg: &ExperimentConfig, out: &mut dyn Write, report: Report) -> Result<(), CliError> {
    let k = cfg.trunc_k.unwrap_or(net.truncation());
    let solver = Nlmp::new(net, k)?;
    let st = solver.stationary_state(&SolverConfig::new(k, cfg.dt, cfg.t_end_or(1000.0)))?;
    let prov = Provenance::new(None, net.hash());
    output::write_measures(create(&cfg.out_dir, "stationary.csv")?, &prov, std::slice::from_ref(&st.measure))?;
    report(out, format!("converged at t = {}, residual = {:e}", st.measure.time(), st.residual))?;
    report(out, format!("w* = {}, realized w = {}", fmt_vec(&st.flows.w), fmt_vec(&st.realized_w)))?;
    report(out, format!("P(empty) = {}, leaked = {:e}", st.measure.conditional().weights()[0], st.measure.leaked()))
}

/// Entry point shared by the binary: parses `args`, runs, and returns the
/// process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{e}");
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        CliError::Spec(SpecFileError::Invalid(e))
    }
}
