//! Command-line front end: configuration, experiment runs and CSV traces.
//!
//! A run writes one CSV row per round. `compare` runs several policies on the
//! same shards and writes a combined CSV with a leading `policy` column.
//! Floats are printed with `{:e}`, which round-trips exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::data::{self, Dataset, SyntheticParams};
use crate::error::{Error, Result};
use crate::orchestrator::{run_with, RunOptions, RunTrace};
use crate::problem::{LocalLoss, ProblemSpec};
use crate::stepsize::PolicyKind;
use crate::Vector;

pub const CSV_COLUMNS: [&str; 13] = [
    "round",
    "residual",
    "residual_normalized",
    "H_value",
    "grad_norm",
    "eta",
    "cond_A",
    "cond_B",
    "cum_scalars_up",
    "cum_scalars_down",
    "cum_prox_solves",
    "cum_inner_iters",
    "wall_ms",
];

/// Residual targets reported by `compare`.
pub const COMPARE_TARGETS: [f64; 3] = [1e-4, 1e-6, 1e-8];

/// `n=..,d=..,seed=..` as given to `--synthetic`. A missing seed falls back
/// to `--seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub seed: Option<u64>,
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mut n, mut d, mut seed) = (None, None, None);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected key=value in --synthetic, got {part:?}")))?;
            match key.trim() {
                "n" => n = Some(parse_value::<usize>("n", value)?),
                "d" => d = Some(parse_value::<usize>("d", value)?),
                "seed" => seed = Some(parse_value::<u64>("seed", value)?),
                other => return Err(Error::InvalidInput(format!("unknown synthetic parameter {other:?}"))),
            }
        }
        match (n, d) {
            (Some(n), Some(d)) => Ok(SyntheticSpec { n, d, seed }),
            _ => Err(Error::InvalidInput("--synthetic needs both n and d".into())),
        }
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={},d={}", self.n, self.d)?;
        if let Some(seed) = self.seed {
            write!(f, ",seed={seed}")?;
        }
        Ok(())
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidInput(format!("bad value {value:?} for {key}"))),
    }
}

fn parse_policies(value: &str) -> Result<Vec<PolicyKind>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(PolicyKind::from_str)
        .collect()
}

/// Experiment flags. Every field is optional so that flags can be layered
/// over a config file.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct ExperimentArgs {
    /// Flat key=value file with the same keys as the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// LIBSVM data file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Feature dimension of --data; inferred from the largest index if absent.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Synthetic data, e.g. `n=500,d=10,seed=7`.
    #[arg(long, value_parser = parse_synthetic)]
    pub synthetic: Option<SyntheticSpec>,
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<PolicyKind>,
    /// Comma-separated policy list for `compare`.
    #[arg(long, value_parser = parse_policy, value_delimiter = ',')]
    pub policies: Option<Vec<PolicyKind>>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub stop_tol: Option<f64>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    /// Use only the first N samples.
    #[arg(long)]
    pub take: Option<usize>,
    /// CSV output path; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Central-model output path; defaults to `<out>.model`.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record wall-clock time per round (makes the CSV nondeterministic).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub wall_clock: Option<bool>,
    /// Run client computations on one thread.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sequential: Option<bool>,
}

fn parse_synthetic(s: &str) -> std::result::Result<SyntheticSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ExperimentArgs {
    /// Parses a flat `key = value` file. Keys are the long flag names, with
    /// `-` or `_`; blank lines and `#` comments are ignored.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut args = ExperimentArgs::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let key = key.trim().replace('_', "-");
            let value = value.trim();
            let at_line = |e: Error| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            };
            match key.as_str() {
                "data" => args.data = Some(PathBuf::from(value)),
                "dim" => args.dim = Some(parse_value("dim", value).map_err(at_line)?),
                "synthetic" => args.synthetic = Some(value.parse().map_err(at_line)?),
                "clients" | "m" => args.clients = Some(parse_value("clients", value).map_err(at_line)?),
                "lambda" => args.lambda = Some(parse_value("lambda", value).map_err(at_line)?),
                "sigma" => args.sigma = Some(parse_value("sigma", value).map_err(at_line)?),
                "delta" => args.delta = Some(parse_value("delta", value).map_err(at_line)?),
                "policy" => args.policy = Some(value.parse().map_err(at_line)?),
                "policies" => args.policies = Some(parse_policies(value).map_err(at_line)?),
                "max-rounds" => args.max_rounds = Some(parse_value("max-rounds", value).map_err(at_line)?),
                "stop-tol" => args.stop_tol = Some(parse_value("stop-tol", value).map_err(at_line)?),
                "inner-tol" => args.inner_tol = Some(parse_value("inner-tol", value).map_err(at_line)?),
                "take" => args.take = Some(parse_value("take", value).map_err(at_line)?),
                "out" => args.out = Some(PathBuf::from(value)),
                "model-out" => args.model_out = Some(PathBuf::from(value)),
                "seed" => args.seed = Some(parse_value("seed", value).map_err(at_line)?),
                "wall-clock" => args.wall_clock = Some(parse_bool("wall-clock", value).map_err(at_line)?),
                "sequential" => args.sequential = Some(parse_bool("sequential", value).map_err(at_line)?),
                other => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        Ok(args)
    }

    /// Fields set in `self` win over those in `base`.
    pub fn over(self, base: ExperimentArgs) -> ExperimentArgs {
        ExperimentArgs {
            config: self.config.or(base.config),
            data: self.data.or(base.data),
            dim: self.dim.or(base.dim),
            synthetic: self.synthetic.or(base.synthetic),
            clients: self.clients.or(base.clients),
            lambda: self.lambda.or(base.lambda),
            sigma: self.sigma.or(base.sigma),
            delta: self.delta.or(base.delta),
            policy: self.policy.or(base.policy),
            policies: self.policies.or(base.policies),
            max_rounds: self.max_rounds.or(base.max_rounds),
            stop_tol: self.stop_tol.or(base.stop_tol),
            inner_tol: self.inner_tol.or(base.inner_tol),
            take: self.take.or(base.take),
            out: self.out.or(base.out),
            model_out: self.model_out.or(base.model_out),
            seed: self.seed.or(base.seed),
            wall_clock: self.wall_clock.or(base.wall_clock),
            sequential: self.sequential.or(base.sequential),
        }
    }

    /// Reads `--config` if given, layers the flags on top and validates.
    pub fn resolve(self) -> Result<RunConfig> {
        let merged = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                self.over(ExperimentArgs::from_config_text(&text)?)
            }
            None => self,
        };
        RunConfig::from_args(merged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File { path: PathBuf, dim: Option<usize> },
    Synthetic(SyntheticParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub m: usize,
    pub lambda: f64,
    /// `None` keeps the problem default.
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub policy: PolicyKind,
    pub policies: Vec<PolicyKind>,
    pub max_rounds: usize,
    pub stop_tol: f64,
    pub inner_tol: f64,
    pub n_take: Option<usize>,
    pub output_path: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub seed: u64,
    pub wall_clock: bool,
    pub parallel: bool,
}

impl RunConfig {
    pub const DEFAULT_CLIENTS: usize = 10;
    pub const DEFAULT_LAMBDA: f64 = 0.1;
    pub const DEFAULT_SEED: u64 = 0;

    pub fn from_args(args: ExperimentArgs) -> Result<Self> {
        let seed = args.seed.unwrap_or(Self::DEFAULT_SEED);
        let source = match (args.data, args.synthetic) {
            (Some(path), None) => DataSource::File { path, dim: args.dim },
            (None, Some(s)) => {
                if args.dim.is_some() {
                    return Err(Error::InvalidInput("--dim only applies to --data".into()));
                }
                DataSource::Synthetic(SyntheticParams {
                    n: s.n,
                    d: s.d,
                    seed: s.seed.unwrap_or(seed),
                })
            }
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput("give either --data or --synthetic, not both".into()))
            }
            (None, None) => return Err(Error::InvalidInput("one of --data or --synthetic is required".into())),
        };
        let defaults = ProblemSpec::new(1, 1, 1.0)?;
        let config = RunConfig {
            source,
            m: args.clients.unwrap_or(Self::DEFAULT_CLIENTS),
            lambda: args.lambda.unwrap_or(Self::DEFAULT_LAMBDA),
            sigma: args.sigma,
            delta: args.delta,
            policy: args.policy.unwrap_or(PolicyKind::Qnd2r),
            policies: args.policies.unwrap_or_else(|| PolicyKind::ALL.to_vec()),
            max_rounds: args.max_rounds.unwrap_or(defaults.max_rounds),
            stop_tol: args.stop_tol.unwrap_or(defaults.stop_tol),
            inner_tol: args.inner_tol.unwrap_or(defaults.inner_tol),
            n_take: args.take,
            model_path: args
                .model_out
                .or_else(|| args.out.as_ref().map(|p| sidecar_path(p))),
            output_path: args.out,
            seed,
            wall_clock: args.wall_clock.unwrap_or(false),
            parallel: !args.sequential.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }

    /// Range checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidInput("--clients must be positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!("--lambda must be positive, got {}", self.lambda)));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidInput("--max-rounds must be positive".into()));
        }
        if self.n_take == Some(0) {
            return Err(Error::InvalidInput("--take must be positive".into()));
        }
        if let DataSource::File { dim: Some(0), .. } = self.source {
            return Err(Error::InvalidInput("--dim must be positive".into()));
        }
        if let DataSource::Synthetic(p) = self.source {
            if p.n == 0 || p.d == 0 {
                return Err(Error::InvalidInput("synthetic n and d must be positive".into()));
            }
        }
        // σ, δ and the tolerances are checked by ProblemSpec once d is known.
        self.problem_spec(1).map(|_| ())
    }

    pub fn problem_spec(&self, d: usize) -> Result<ProblemSpec> {
        let mut spec = ProblemSpec::new(self.m, d, self.lambda)?
            .with_inner_tol(self.inner_tol)?
            .with_stop_tol(self.stop_tol)?
            .with_max_rounds(self.max_rounds);
        if let Some(sigma) = self.sigma {
            spec = spec.with_sigma(sigma)?;
        }
        if let Some(delta) = self.delta {
            spec = spec.with_delta(delta)?;
        }
        Ok(spec)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.source {
            DataSource::Synthetic(params) => data::synthetic(*params),
            DataSource::File { path, dim } => {
                let d = match dim {
                    Some(d) => *d,
                    None => data::infer_dimension(BufReader::new(File::open(path)?))?,
                };
                if d == 0 {
                    return Err(Error::InvalidInput(format!("{} has no features", path.display())));
                }
                data::parse_libsvm(BufReader::new(File::open(path)?), d)
            }
        }
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            parallel: self.parallel,
            record_messages: false,
            check_definiteness: false,
        }
    }
}

/// `<out>.model`, next to the CSV.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".model");
    PathBuf::from(name)
}

/// Shards and losses for one run, shared by every policy in a comparison.
pub struct Instance {
    pub spec: ProblemSpec,
    pub losses: Vec<Arc<dyn LocalLoss>>,
}

impl Instance {
    pub fn build(config: &RunConfig) -> Result<Self> {
        let dataset = config.load_dataset()?;
        let n_take = config.n_take.unwrap_or(dataset.len());
        let shards = data::partition_sorted(&dataset, config.m, n_take)?;
        let losses = shards
            .iter()
            .map(|s| s.to_loss().map(|l| Arc::new(l) as Arc<dyn LocalLoss>))
            .collect::<Result<Vec<_>>>()?;
        Ok(Instance {
            spec: config.problem_spec(dataset.dim)?,
            losses,
        })
    }

    pub fn run(&self, policy: PolicyKind, options: RunOptions) -> Result<RunTrace> {
        run_with(self.spec, self.losses.clone(), policy, options)
    }
}

/// One CSV row, as written and as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub round: usize,
    pub residual: f64,
    pub residual_normalized: f64,
    pub h_value: f64,
    pub grad_norm: f64,
    pub eta: Option<f64>,
    pub cond_a: Option<bool>,
    pub cond_b: Option<bool>,
    pub cum_scalars_up: usize,
    pub cum_scalars_down: usize,
    pub cum_prox_solves: usize,
    pub cum_inner_iters: usize,
    pub wall_ms: f64,
}

impl TraceRecord {
    pub fn from_trace(trace: &RunTrace, wall_clock: bool) -> Vec<TraceRecord> {
        let r0 = trace.rounds.first().map_or(0.0, |r| r.residual);
        trace
            .rounds
            .iter()
            .map(|r| TraceRecord {
                round: r.round,
                residual: r.residual,
                residual_normalized: if r0 > 0.0 { r.residual / r0 } else { r.residual },
                h_value: r.h_value,
                grad_norm: r.grad_norm,
                eta: r.eta(),
                cond_a: r.decision.and_then(|d| d.cond_a),
                cond_b: r.decision.and_then(|d| d.cond_b),
                cum_scalars_up: r.cumulative.scalars_up,
                cum_scalars_down: r.cumulative.scalars_down,
                cum_prox_solves: r.cumulative.prox_solves,
                cum_inner_iters: r.cumulative.inner_newton_iters,
                wall_ms: if wall_clock { r.wall_ms } else { 0.0 },
            })
            .collect()
    }

    fn fields(&self) -> [String; 13] {
        let opt_bool = |b: Option<bool>| b.map_or(String::new(), |b| b.to_string());
        [
            self.round.to_string(),
            format!("{:e}", self.residual),
            format!("{:e}", self.residual_normalized),
            format!("{:e}", self.h_value),
            format!("{:e}", self.grad_norm),
            self.eta.map_or(String::new(), |e| format!("{e:e}")),
            opt_bool(self.cond_a),
            opt_bool(self.cond_b),
            self.cum_scalars_up.to_string(),
            self.cum_scalars_down.to_string(),
            self.cum_prox_solves.to_string(),
            self.cum_inner_iters.to_string(),
            format!("{:e}", self.wall_ms),
        ]
    }

    fn parse(fields: &[&str], line: usize) -> Result<TraceRecord> {
        if fields.len() != CSV_COLUMNS.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", CSV_COLUMNS.len(), fields.len()),
            });
        }
        let bad = |col: &str| Error::Parse {
            line,
            message: format!("bad {col} value"),
        };
        let num = |k: usize| fields[k].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[k]));
        let count = |k: usize| fields[k].parse::<usize>().map_err(|_| bad(CSV_COLUMNS[k]));
        let flag = |k: usize| match fields[k] {
            "" => Ok(None),
            "true" => Ok(Some(true)),
            "false" => Ok(Some(false)),
            _ => Err(bad(CSV_COLUMNS[k])),
        };
        Ok(TraceRecord {
            round: count(0)?,
            residual: num(1)?,
            residual_normalized: num(2)?,
            h_value: num(3)?,
            grad_norm: num(4)?,
            eta: if fields[5].is_empty() { None } else { Some(num(5)?) },
            cond_a: flag(6)?,
            cond_b: flag(7)?,
            cum_scalars_up: count(8)?,
            cum_scalars_down: count(9)?,
            cum_prox_solves: count(10)?,
            cum_inner_iters: count(11)?,
            wall_ms: num(12)?,
        })
    }
}

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_COLUMNS)?;
    for record in records {
        writer.write_record(record.fields())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(reader.headers()?, &CSV_COLUMNS)?;
    let mut records = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let fields: Vec<&str> = row.iter().collect();
        records.push(TraceRecord::parse(&fields, idx + 2)?);
    }
    Ok(records)
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {:?}", found.iter().collect::<Vec<_>>()),
        })
    }
}

/// Combined CSV: `policy` followed by the single-run columns.
pub fn write_combined_csv<W: Write>(runs: &[(PolicyKind, Vec<TraceRecord>)], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["policy"];
    header.extend(CSV_COLUMNS);
    writer.write_record(&header)?;
    for (policy, records) in runs {
        for record in records {
            let mut row = vec![policy.name().to_string()];
            row.extend(record.fields());
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn read_combined_csv<R: Read>(input: R) -> Result<Vec<(PolicyKind, Vec<TraceRecord>)>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut header = vec!["policy"];
    header.extend(CSV_COLUMNS);
    check_header(reader.headers()?, &header)?;
    let mut runs: Vec<(PolicyKind, Vec<TraceRecord>)> = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let fields: Vec<&str> = row.iter().collect();
        let policy: PolicyKind = fields[0].parse()?;
        let record = TraceRecord::parse(&fields[1..], idx + 2)?;
        match runs.last_mut() {
            Some((p, records)) if *p == policy => records.push(record),
            _ => runs.push((policy, vec![record])),
        }
    }
    Ok(runs)
}

/// What the summary line reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub policy: PolicyKind,
    /// Rounds after the bootstrap.
    pub rounds: usize,
    pub final_residual: f64,
    pub total_communication: usize,
    pub total_prox_solves: usize,
    pub converged: bool,
}

impl RunSummary {
    pub fn from_records(policy: PolicyKind, records: &[TraceRecord], converged: bool) -> Result<Self> {
        let last = records
            .last()
            .ok_or_else(|| Error::InvalidInput("empty trace".into()))?;
        Ok(RunSummary {
            policy,
            rounds: last.round,
            final_residual: last.residual,
            total_communication: last.cum_scalars_up + last.cum_scalars_down,
            total_prox_solves: last.cum_prox_solves,
            converged,
        })
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "policy={} rounds={} final_residual={:e} total_comm={} total_prox_solves={} {}",
            self.policy,
            self.rounds,
            self.final_residual,
            self.total_communication,
            self.total_prox_solves,
            if self.converged { "converged" } else { "NOT-CONVERGED" }
        )
    }
}

fn create_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_model<W: Write>(model: &Vector, mut out: W) -> Result<()> {
    for v in model.iter() {
        writeln!(out, "{v:e}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_model<R: BufRead>(input: R) -> Result<Vector> {
    let mut values = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        values.push(line.trim().parse::<f64>().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad model entry {line:?}"),
        })?);
    }
    Ok(Vector::from_vec(values))
}

/// Runs the configured policy and writes its CSV and central model.
pub fn run_experiment(config: &RunConfig) -> Result<RunSummary> {
    let instance = Instance::build(config)?;
    let trace = instance.run(config.policy, config.run_options())?;
    let records = TraceRecord::from_trace(&trace, config.wall_clock);
    write_trace_csv(&records, create_output(config.output_path.as_deref())?)?;
    if let Some(path) = &config.model_path {
        write_model(&trace.central_model, BufWriter::new(File::create(path)?))?;
    }
    RunSummary::from_records(config.policy, &records, trace.converged)
}

#[derive(Debug, Clone)]
pub struct PolicyReport {
    pub summary: RunSummary,
    /// Cumulative prox solves at the first row reaching each of
    /// [`COMPARE_TARGETS`].
    pub prox_at_target: Vec<Option<usize>>,
    pub envelope_evaluations: usize,
    pub central_model: Vector,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub reports: Vec<PolicyReport>,
    /// Policies whose run stopped with an error.
    pub failures: Vec<(PolicyKind, String)>,
}

impl CompareReport {
    pub fn get(&self, policy: PolicyKind) -> Option<&PolicyReport> {
        self.reports.iter().find(|r| r.summary.policy == policy)
    }

    /// `1 − count/reference` per target, in percent, against mbfgs_b_only.
    pub fn savings(&self, policy: PolicyKind) -> Vec<Option<f64>> {
        let (Some(ours), Some(reference)) = (self.get(policy), self.get(PolicyKind::MbfgsBOnly)) else {
            return vec![None; COMPARE_TARGETS.len()];
        };
        ours.prox_at_target
            .iter()
            .zip(&reference.prox_at_target)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) if *b > 0 => Some(100.0 * (1.0 - *a as f64 / *b as f64)),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<14}", "policy")?;
        for t in COMPARE_TARGETS {
            write!(f, " {:>18}", format!("prox@{t:e}"))?;
        }
        writeln!(f, " {:>10} {:>10}", "envelopes", "status")?;
        for report in &self.reports {
            let policy = report.summary.policy;
            write!(f, "{:<14}", policy.name())?;
            for (count, saving) in report.prox_at_target.iter().zip(self.savings(policy)) {
                let cell = match (count, saving) {
                    (Some(c), Some(s)) if policy != PolicyKind::MbfgsBOnly => format!("{c} ({s:+.1}%)"),
                    (Some(c), _) => c.to_string(),
                    (None, _) => "-".into(),
                };
                write!(f, " {cell:>18}")?;
            }
            let status = if report.summary.converged { "converged" } else { "stopped" };
            writeln!(f, " {:>10} {status:>10}", report.envelope_evaluations)?;
        }
        for (policy, message) in &self.failures {
            writeln!(f, "{:<14} failed: {message}", policy.name())?;
        }
        Ok(())
    }
}

/// Runs every policy on the same shards; a failing policy is reported and
/// skipped.
pub fn compare_policies(config: &RunConfig) -> Result<CompareReport> {
    if config.policies.len() < 2 {
        return Err(Error::InvalidInput("compare needs at least two policies".into()));
    }
    let instance = Instance::build(config)?;
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &policy in &config.policies {
        match instance.run(policy, config.run_options()) {
            Ok(trace) => {
                let records = TraceRecord::from_trace(&trace, config.wall_clock);
                let prox_at_target = COMPARE_TARGETS
                    .iter()
                    .map(|&t| trace.first_reaching(t).map(|r| r.cumulative.prox_solves))
                    .collect();
                reports.push(PolicyReport {
                    summary: RunSummary::from_records(policy, &records, trace.converged)?,
                    prox_at_target,
                    envelope_evaluations: trace.last().cumulative.envelope_evaluations,
                    central_model: trace.central_model.clone(),
                });
                runs.push((policy, records));
            }
            Err(e) => failures.push((policy, e.to_string())),
        }
    }
    if runs.is_empty() {
        return Err(Error::InvalidInput("every policy failed".into()));
    }
    write_combined_csv(&runs, create_output(config.output_path.as_deref())?)?;
    if let Some(path) = &config.model_path {
        let mut out = BufWriter::new(File::create(path)?);
        for report in &reports {
            let values: Vec<String> = report.central_model.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{} {}", report.summary.policy, values.join(" "))?;
        }
        out.flush()?;
    }
    Ok(CompareReport { reports, failures })
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let dataset = data::synthetic(SyntheticParams {
        n: args.n,
        d: args.d,
        seed: args.seed,
    })?;
    let mut out = create_output(args.out.as_deref())?;
    data::write_libsvm(&dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "qnd2r", version, about = "Quasi-Newton Douglas-Rachford envelope simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one policy and write its per-round trace.
    Run(ExperimentArgs),
    /// Run several policies on the same instance.
    Compare(ExperimentArgs),
    /// Write a synthetic data set in LIBSVM format.
    Generate(GenerateArgs),
}

/// Dispatches a parsed command line. The summary goes to stdout unless the
/// CSV does, in which case it goes to stderr.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.resolve()?;
            let summary = run_experiment(&config)?;
            report_line(&config, &summary.to_string());
        }
        Command::Compare(args) => {
            let config = args.resolve()?;
            let report = compare_policies(&config)?;
            report_line(&config, report.to_string().trim_end());
        }
        Command::Generate(args) => generate(&args)?,
    }
    Ok(())
}

fn report_line(config: &RunConfig, text: &str) {
    if config.output_path.is_some() {
        println!("{text}");
    } else {
        eprintln!("{text}");
    }
}

/// Summary statistics per policy, recomputed from CSV records only.
pub fn summaries_from_csv(runs: &[(PolicyKind, Vec<TraceRecord>)]) -> BTreeMap<PolicyKind, (usize, f64, usize, usize)> {
    runs.iter()
        .filter_map(|(p, records)| {
            let last = records.last()?;
            Some((
                *p,
                (
                    last.round,
                    last.residual,
                    last.cum_scalars_up + last.cum_scalars_down,
                    last.cum_prox_solves,
                ),
            ))
        })
        .collect()
}
