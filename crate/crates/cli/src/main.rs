use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use unimix::bounds::{BoundInputs, BoundReport};
use unimix::coupling::{check_orderings, hitting_tail, run_triple, unit_time};
use unimix::harness::{self, fit_scaling, read_rows_from, run_sweep, SweepConfig};
use unimix::kernel::MhKernel;
use unimix::model::{assumption_report, ModelConfig};
use unimix::operator_lab::DiscretizedChain;

/// Largest detailed-balance residual `discretize` accepts.
const BALANCE_TOLERANCE: f64 = 1e-10;

#[derive(Parser)]
#[command(
    name = "unimix",
    version,
    about = "Mixing-time bounds for Metropolis-Hastings on unimodal targets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the structural assumptions on a target/proposal pair.
    Check(ModelArgs),
    /// Build the discretized restricted chain and report exact quantities.
    Discretize(DiscretizeArgs),
    /// Run an (epsilon, L) sweep and write the CSV report.
    Sweep(SweepArgs),
    /// Evaluate every bound for one parameter point.
    Bounds(BoundsArgs),
    /// Simulate the coupled triple chain and check its orderings.
    Couple(CoupleArgs),
    /// Recompute calibration constants from a sweep CSV, optionally fitting a power law.
    Calibrate(CalibrateArgs),
    /// Draw SVG plots from a sweep CSV.
    Plot(PlotArgs),
}

/// An assertion or bound that failed on otherwise valid input.
#[derive(Debug)]
struct Violation(String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

#[derive(Args)]
struct ModelArgs {
    /// JSON config; its keys override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target as JSON, e.g. '{"family":"gaussian","params":{"mean":0,"sd":1}}'.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "LO,HI")]
    support: Option<Vec<f64>>,
    #[arg(long)]
    mode: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    /// uniform-ball, gaussian or laplace.
    #[arg(long)]
    proposal: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
}

impl ModelArgs {
    fn flags(&self) -> Result<Map<String, Value>> {
        let mut m = Map::new();
        if let Some(t) = &self.target {
            m.insert(
                "target".into(),
                serde_json::from_str(t).context("--target is not valid JSON")?,
            );
        }
        put(&mut m, "support", &self.support);
        put(&mut m, "mode", &self.mode);
        put(&mut m, "radius", &self.radius);
        put(&mut m, "proposal", &self.proposal);
        put(&mut m, "epsilon", &self.epsilon);
        Ok(m)
    }
}

#[derive(Args)]
struct DiscretizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t_cap: Option<u64>,
    /// Write the transition matrix and stationary vector here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct DiscretizeConfig {
    #[serde(flatten)]
    model: ModelConfig,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default = "default_t_cap")]
    t_cap: u64,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn default_n() -> usize {
    1024
}

fn default_t_cap() -> u64 {
    1 << 24
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t_cap: Option<u64>,
    /// CSV destination; stdout when neither this nor the config names one.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    exact_gap: Option<f64>,
    #[arg(long)]
    exact_tau: Option<u64>,
}

#[derive(Deserialize)]
struct BoundsConfig {
    #[serde(flatten)]
    inputs: BoundInputs,
    #[serde(default)]
    exact_gap: Option<f64>,
    #[serde(default)]
    exact_tau: Option<u64>,
}

#[derive(Args)]
struct CoupleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Starting point; defaults to the right end of the support.
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Steps per run; defaults to `blocks · ⌈c3 L²/ε²⌉`.
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop each run once the chain first hits the ε-ball around the mode.
    #[arg(long)]
    stop_at_hit: bool,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    c3: Option<f64>,
    /// Also fit the hitting-time tail (needs at least 1000 runs).
    #[arg(long)]
    tail: bool,
    /// Dump run 0 as CSV.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Deserialize)]
struct CoupleConfig {
    #[serde(flatten)]
    model: ModelConfig,
    #[serde(default)]
    start: Option<f64>,
    #[serde(default = "default_runs")]
    runs: usize,
    #[serde(default)]
    horizon: Option<u64>,
    seed: u64,
    #[serde(default)]
    stop_at_hit: bool,
    #[serde(default = "default_blocks")]
    blocks: usize,
    #[serde(default = "default_c3")]
    c3: f64,
    #[serde(default)]
    tail: bool,
    #[serde(default)]
    trajectory: Option<PathBuf>,
}

fn default_runs() -> usize {
    10_000
}

fn default_blocks() -> usize {
    8
}

fn default_c3() -> f64 {
    1.0
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Response column for a log-log power-law fit.
    #[arg(long)]
    fit: Option<String>,
    #[arg(long, default_values_t = vec!["l_over_eps".to_string()])]
    regressor: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn put<T: serde::Serialize>(m: &mut Map<String, Value>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        m.insert(key.into(), json!(v));
    }
}

/// Recursively overlays `top` on `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Flags first, then the config file on top.
fn resolve<T: DeserializeOwned>(flags: Map<String, Value>, config: Option<&Path>) -> Result<T> {
    let mut value = Value::Object(flags);
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if !file.is_object() {
            bail!("{} must hold a JSON object", path.display());
        }
        merge(&mut value, file);
    }
    serde_json::from_value(value).context("invalid configuration")
}

fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    emit(&format!("{}\n", serde_json::to_string_pretty(v)?))
}

fn restricted_kernel(model: &ModelConfig) -> Result<MhKernel> {
    let (target, proposal) = model.build()?;
    Ok(MhKernel::restricted(target, proposal)?)
}

fn check(args: ModelArgs) -> Result<()> {
    let model: ModelConfig = resolve(args.flags()?, args.config.as_deref())?;
    let (target, proposal) = model.build()?;
    let report = assumption_report(&target, &proposal)?;
    print_json(&report)?;
    if !report.pass {
        return Err(Violation("assumption check failed".into()).into());
    }
    Ok(())
}

fn discretize(args: DiscretizeArgs) -> Result<()> {
    let mut flags = args.model.flags()?;
    put(&mut flags, "n", &args.n);
    put(&mut flags, "t_cap", &args.t_cap);
    put(&mut flags, "out", &args.out);
    let cfg: DiscretizeConfig = resolve(flags, args.model.config.as_deref())?;
    let kernel = restricted_kernel(&cfg.model)?;
    let chain = DiscretizedChain::build(&kernel, cfg.n)?;
    let invariants = chain.invariants();
    let gap = chain.spectral_gap()?;
    let tau = chain.mixing_time_quarter(cfg.t_cap)?;
    let near = chain.states_near(kernel.target().mode, cfg.model.epsilon);
    let tau_restricted = chain.restricted_mixing_time(near, cfg.t_cap)?;
    let path = chain.discrete_path_gap_bound()?;
    if let Some(out) = &cfg.out {
        chain.write_text(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?)?;
    }
    print_json(&json!({
        "states": chain.len(),
        "spectral_gap": gap,
        "mixing_time": tau,
        "restricted_mixing_time": tau_restricted,
        "path_gap_bound": path.gap_lower,
        "congestion": path.congestion,
        "invariants": {
            "row_sum_error": invariants.row_sum_error,
            "min_entry": invariants.min_entry,
            "stationarity_error": invariants.stationarity_error,
            "detailed_balance_error": invariants.detailed_balance_error,
        },
    }))?;
    if invariants.detailed_balance_error > BALANCE_TOLERANCE {
        return Err(Violation(format!(
            "detailed balance error {:e}",
            invariants.detailed_balance_error
        ))
        .into());
    }
    if path.gap_lower > gap + harness::PATH_TOLERANCE {
        return Err(Violation(format!("path bound {} exceeds the gap {gap}", path.gap_lower)).into());
    }
    if tau.is_none() || tau_restricted.is_none() {
        return Err(Violation(format!("mixing time exceeds t_cap = {}", cfg.t_cap)).into());
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut flags = Map::new();
    put(&mut flags, "seed", &args.seed);
    put(&mut flags, "n", &args.n);
    put(&mut flags, "t_cap", &args.t_cap);
    let mut output = Map::new();
    put(&mut output, "csv", &args.csv);
    put(&mut output, "plots", &args.plots);
    flags.insert("output".into(), Value::Object(output));
    let value: Value = resolve(flags, Some(&args.config))?;
    let cfg = SweepConfig::from_json(&value.to_string())?;
    let result = run_sweep(&cfg)?;
    if cfg.output.csv.is_none() {
        emit(&result.to_csv()?)?;
    }
    let failing: Vec<String> = result
        .rows
        .iter()
        .filter(|r| {
            let f = r.flags();
            !(f.thm1_dominates && f.lemma2_gap_holds && f.path_bound_holds && f.lemma2_tau_holds && f.lemma3_holds)
        })
        .map(|r| format!("epsilon = {}, L = {}", r.epsilon, r.radius))
        .collect();
    if !failing.is_empty() {
        return Err(Violation(format!("bound violated at {}", failing.join("; "))).into());
    }
    Ok(())
}

fn bounds(args: BoundsArgs) -> Result<()> {
    let mut flags = Map::new();
    put(&mut flags, "exact_gap", &args.exact_gap);
    put(&mut flags, "exact_tau", &args.exact_tau);
    let cfg: BoundsConfig = resolve(flags, Some(&args.config))?;
    let report = BoundReport::evaluate(cfg.inputs, cfg.exact_gap, cfg.exact_tau)?;
    print_json(&report)?;
    if report.thm1_dominates == Some(false) {
        return Err(Violation("mixing-time bound is below the exact mixing time".into()).into());
    }
    if report.gap_bound_holds == Some(false) {
        return Err(Violation("gap lower bound exceeds the exact gap".into()).into());
    }
    Ok(())
}

fn couple(args: CoupleArgs) -> Result<()> {
    let mut flags = args.model.flags()?;
    put(&mut flags, "start", &args.start);
    put(&mut flags, "runs", &args.runs);
    put(&mut flags, "horizon", &args.horizon);
    put(&mut flags, "seed", &args.seed);
    put(&mut flags, "blocks", &args.blocks);
    put(&mut flags, "c3", &args.c3);
    put(&mut flags, "trajectory", &args.trajectory);
    if args.stop_at_hit {
        flags.insert("stop_at_hit".into(), Value::Bool(true));
    }
    if args.tail {
        flags.insert("tail".into(), Value::Bool(true));
    }
    let cfg: CoupleConfig = resolve(flags, args.model.config.as_deref())?;
    let kernel = restricted_kernel(&cfg.model)?;
    let target = kernel.target();
    let start = cfg.start.unwrap_or(target.support.hi);
    let unit = unit_time(cfg.c3, target.radius, cfg.model.epsilon)?;
    let horizon = cfg.horizon.unwrap_or(unit * cfg.blocks as u64);
    let orderings = check_orderings(&kernel, start, horizon, cfg.runs, cfg.seed, cfg.stop_at_hit)?;
    if let Some(path) = &cfg.trajectory {
        let run = run_triple(&kernel, start, horizon, cfg.seed, 0)?;
        run.write_csv(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    let tail = if cfg.tail {
        Some(hitting_tail(&kernel, start, unit, cfg.blocks, cfg.runs, cfg.seed)?)
    } else {
        None
    };
    print_json(&json!({ "orderings": orderings, "hitting_tail": tail }))
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let rows = read_rows_from(&args.csv)?;
    let calibration = harness::calibrate_from_rows(&rows)?;
    let fit = match &args.fit {
        Some(column) => {
            let text = fs::read_to_string(&args.csv)?;
            let regressors: Vec<&str> = args.regressor.iter().map(String::as_str).collect();
            Some(fit_scaling(&text, column, &regressors)?)
        }
        None => None,
    };
    let report = json!({ "calibration": calibration, "fit": fit });
    match &args.out {
        Some(path) => fs::write(path, serde_json::to_string_pretty(&report)?)?,
        None => print_json(&report)?,
    }
    let inconsistent: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.flags() != r.recompute_flags())
        .map(|(i, _)| i)
        .collect();
    if !inconsistent.is_empty() {
        return Err(Violation(format!(
            "stored flags disagree with the columns in rows {inconsistent:?}"
        ))
        .into());
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let rows = read_rows_from(&args.csv)?;
    let files = harness::emit_plots(&rows, &args.out)?;
    emit(&files.iter().map(|p| format!("{}\n", p.display())).collect::<String>())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Violation>().is_some() {
        return 2;
    }
    match err.downcast_ref::<unimix::Error>() {
        Some(e) if !e.is_config_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Check(a) => check(a),
        Command::Discretize(a) => discretize(a),
        Command::Sweep(a) => sweep(a),
        Command::Bounds(a) => bounds(a),
        Command::Couple(a) => couple(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Plot(a) => plot(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
