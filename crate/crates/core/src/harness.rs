//! Parameter sweeps over `(ε, L)`, the versioned CSV schema, power-law
//! scaling fits and plot emission.
//!
//! A sweep point uses `Θ = [m − L, m + L]` and the restricted random-walk
//! kernel on `n` cells. Empirical quantities come from the discretized chain;
//! bounds are evaluated with either fixed or self-calibrated constants.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::bounds::{
    calibrate_constants, continuous_a0_bound, escape_prob_bound, harris_rate, lemma2_gap_bound, lemma2_tau_bound,
    relaxation_bound, thm1_mixing_bound, Calibration, CalibrationPoint, Geometry,
};
use crate::coupling::{hitting_tail, unit_time, HittingTail};
use crate::drift::{fit_drift, uniform_grid, Lyapunov};
use crate::kernel::MhKernel;
use crate::model::{Interval, ProposalFamily, ProposalSpec, TargetFamily, TargetSpec};
use crate::operator_lab::{DiscretizedChain, Start, MAX_DENSE_STATES};
use crate::rng::child_seed;
use crate::svg::{Plot, Series};
use crate::{Error, Result};

/// First line of every sweep CSV.
pub const SCHEMA_HEADER: &str = "# unimix sweep schema v1";

/// Slack allowed when comparing the path bound with the exact gap.
pub const PATH_TOLERANCE: f64 = 1e-12;

/// Longest TV curve drawn by the sweep plots.
const TV_PLOT_STEPS: u64 = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directive {
    Calibrate,
}

/// `"calibrate"` or explicit constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CalibrationMode {
    Directive(Directive),
    Fixed(Calibration),
}

impl Default for CalibrationMode {
    fn default() -> Self {
        CalibrationMode::Directive(Directive::Calibrate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Number of `L²/ε²` blocks per run.
    #[serde(default = "default_multiples")]
    pub multiples: usize,
}

fn default_runs() -> usize {
    10_000
}

fn default_multiples() -> usize {
    8
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub plots: Option<PathBuf>,
}

/// JSON sweep description.
///
/// ```json
/// {
///   "target": {"family": "uniform"},
///   "proposal": "uniform-ball",
///   "radius": [1.0],
///   "epsilon_ratio": [0.25, 0.125, 0.0625, 0.03125],
///   "n": 512,
///   "seed": 7
/// }
/// ```
/// Exactly one of `epsilon` (absolute) and `epsilon_ratio` (`ε/L`) is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub target: TargetFamily,
    pub proposal: ProposalFamily,
    /// Mode `m`; defaults to the family's natural mode, else 0.
    #[serde(default)]
    pub center: Option<f64>,
    pub radius: Vec<f64>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub epsilon_ratio: Vec<f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_t_cap")]
    pub t_cap: u64,
    #[serde(default)]
    pub calibration: CalibrationMode,
    pub seed: u64,
    #[serde(default)]
    pub coupling: Option<CouplingConfig>,
    #[serde(default = "default_drift_grid")]
    pub drift_grid: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_n() -> usize {
    1024
}

fn default_t_cap() -> u64 {
    1 << 24
}

fn default_drift_grid() -> usize {
    257
}

/// One `(ε, L)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub radius: f64,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn center(&self) -> f64 {
        self.center.or(self.target.natural_mode()).unwrap_or(0.0)
    }

    /// The grid in config order (radius-major), after validation.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        if self.radius.is_empty() {
            return Err(Error::Config("radius grid is empty".into()));
        }
        let ratios = match (self.epsilon.is_empty(), self.epsilon_ratio.is_empty()) {
            (true, true) => return Err(Error::Config("epsilon grid is empty".into())),
            (false, false) => return Err(Error::Config("give either epsilon or epsilon_ratio, not both".into())),
            (false, true) => None,
            (true, false) => Some(&self.epsilon_ratio),
        };
        if self.n < 2 || self.n > MAX_DENSE_STATES {
            return Err(Error::Config(format!(
                "n must lie in [2, {MAX_DENSE_STATES}], got {}",
                self.n
            )));
        }
        if self.drift_grid < 2 {
            return Err(Error::Config("drift_grid must be at least 2".into()));
        }
        let mut points = Vec::new();
        for &radius in &self.radius {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::Config(format!("radius must be positive, got {radius}")));
            }
            let eps: Vec<f64> = match ratios {
                Some(r) => r.iter().map(|&q| q * radius).collect(),
                None => self.epsilon.clone(),
            };
            for epsilon in eps {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
                }
                if epsilon > radius {
                    return Err(Error::Config(format!("epsilon = {epsilon} exceeds L = {radius}")));
                }
                points.push(SweepPoint { epsilon, radius });
            }
        }
        Ok(points)
    }
}

/// Everything measured at one sweep point before bounds are evaluated.
#[derive(Clone, Debug)]
pub struct PointEmpirics {
    pub point: SweepPoint,
    pub mode: f64,
    pub geometry: Geometry,
    pub c1: f64,
    pub c2: f64,
    pub exact_gap: f64,
    pub exact_tau: u64,
    pub exact_tau_restricted: u64,
    pub path_gap_bound: f64,
    pub gamma: f64,
    pub k: f64,
    pub r1: f64,
    pub r2: f64,
    pub hitting: Option<HittingTail>,
    pub tv_curve: Option<Vec<f64>>,
    pub seed: u64,
}

fn point_kernel(config: &SweepConfig, p: SweepPoint) -> Result<MhKernel> {
    let m = config.center();
    let theta = Interval::new(m - p.radius, m + p.radius)?;
    let target = TargetSpec::new(config.target.clone(), theta, Some(m), Some(p.radius))?;
    let proposal = ProposalSpec::new(config.proposal, p.epsilon, 1)?;
    MhKernel::restricted(target, proposal)
}

fn measure_point(config: &SweepConfig, index: usize, p: SweepPoint, with_tv: bool) -> Result<PointEmpirics> {
    let seed = child_seed(config.seed, index as u64);
    let kernel = point_kernel(config, p)?;
    let target = kernel.target();
    let m = target.mode;
    let envelope = kernel.random_walk_proposal().expect("random walk").envelope;
    let chain = DiscretizedChain::build(&kernel, config.n)?;
    let exact_gap = chain.spectral_gap()?;
    let cap_error = |what: &str| {
        Error::Config(format!(
            "{what} exceeds t_cap = {} at epsilon = {}, L = {}",
            config.t_cap, p.epsilon, p.radius
        ))
    };
    let exact_tau = chain
        .mixing_time_quarter(config.t_cap)?
        .ok_or_else(|| cap_error("mixing time"))?;
    let near = chain.states_near(m, p.epsilon);
    let exact_tau_restricted = chain
        .restricted_mixing_time(near, config.t_cap)?
        .ok_or_else(|| cap_error("restricted mixing time"))?;
    let path = chain.discrete_path_gap_bound()?;

    let grid = uniform_grid(target.support.lo, target.support.hi, config.drift_grid);
    let mut cert = fit_drift(&kernel, &Lyapunov::quadratic(m), &grid)?.with_seed(seed);
    cert.finalize(exact_tau)?;

    let hitting = match config.coupling {
        Some(c) => {
            let unit = unit_time(1.0, p.radius, p.epsilon)?;
            Some(hitting_tail(
                &kernel,
                target.support.hi,
                unit,
                c.multiples,
                c.runs,
                seed,
            )?)
        }
        None => None,
    };
    let tv_curve = if with_tv {
        let steps = (2 * exact_tau).min(TV_PLOT_STEPS) as usize;
        Some(chain.tv_curve(&Start::State(0), steps)?)
    } else {
        None
    };
    Ok(PointEmpirics {
        point: p,
        mode: m,
        geometry: Geometry {
            dim: 1,
            epsilon: p.epsilon,
            delta1: envelope.delta1,
            radius: p.radius,
            p_mode: target.restricted_density(m),
        },
        c1: envelope.c1,
        c2: envelope.c2,
        exact_gap,
        exact_tau,
        exact_tau_restricted,
        path_gap_bound: path.gap_lower,
        gamma: cert.gamma,
        k: cert.k,
        r1: cert.r1,
        r2: cert.r2.expect("finalized"),
        hitting,
        tv_curve,
        seed,
    })
}

impl PointEmpirics {
    pub fn calibration_point(&self) -> CalibrationPoint {
        CalibrationPoint {
            geometry: self.geometry,
            exact_tau: self.exact_tau,
            exact_tau_restricted: self.exact_tau_restricted,
            hit_decay: self.hitting.as_ref().and_then(|h| h.decay),
        }
    }
}

/// One CSV row, schema v1. Column order is the field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub target: String,
    pub proposal: String,
    pub epsilon: f64,
    pub radius: f64,
    pub l_over_eps: f64,
    pub n: usize,
    pub mode: f64,
    pub p_mode: f64,
    pub delta1: f64,
    pub c1: f64,
    pub c2: f64,
    pub exact_gap: f64,
    pub exact_tau: u64,
    pub exact_tau_restricted: u64,
    pub path_gap_bound: f64,
    pub thm1_tau_bound: f64,
    pub lemma2_gap_bound: f64,
    pub lemma2_tau_bound: f64,
    pub a0_bound: f64,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    pub escape_prob: f64,
    pub harris_alpha_bar: f64,
    pub harris_tau_free: f64,
    pub relaxation_bound: f64,
    pub relaxation_ratio: f64,
    pub hit_decay: Option<f64>,
    pub hit_r2: Option<f64>,
    pub c_thm1: f64,
    pub c_lemma2: f64,
    pub c3: f64,
    #[serde(rename = "T")]
    pub t: u64,
    pub thm1_dominates: bool,
    pub lemma2_gap_holds: bool,
    pub path_bound_holds: bool,
    pub lemma2_tau_holds: bool,
    pub lemma3_holds: bool,
    pub seed: u64,
}

/// The dominance flags implied by a row's raw columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flags {
    pub thm1_dominates: bool,
    pub lemma2_gap_holds: bool,
    pub path_bound_holds: bool,
    pub lemma2_tau_holds: bool,
    pub lemma3_holds: bool,
}

impl SweepRow {
    pub fn recompute_flags(&self) -> Flags {
        let hit = self.c3 * self.t as f64 * self.l_over_eps * self.l_over_eps;
        Flags {
            thm1_dominates: self.thm1_tau_bound >= self.exact_tau as f64,
            lemma2_gap_holds: self.lemma2_gap_bound <= self.exact_gap,
            path_bound_holds: self.path_gap_bound <= self.exact_gap + PATH_TOLERANCE,
            lemma2_tau_holds: self.lemma2_tau_bound >= self.exact_tau_restricted as f64,
            lemma3_holds: self.exact_tau as f64 <= self.exact_tau_restricted as f64 + hit,
        }
    }

    pub fn flags(&self) -> Flags {
        Flags {
            thm1_dominates: self.thm1_dominates,
            lemma2_gap_holds: self.lemma2_gap_holds,
            path_bound_holds: self.path_bound_holds,
            lemma2_tau_holds: self.lemma2_tau_holds,
            lemma3_holds: self.lemma3_holds,
        }
    }

    fn geometry(&self) -> Geometry {
        Geometry {
            dim: 1,
            epsilon: self.epsilon,
            delta1: self.delta1,
            radius: self.radius,
            p_mode: self.p_mode,
        }
    }

    pub fn calibration_point(&self) -> CalibrationPoint {
        CalibrationPoint {
            geometry: self.geometry(),
            exact_tau: self.exact_tau,
            exact_tau_restricted: self.exact_tau_restricted,
            hit_decay: self.hit_decay,
        }
    }
}

/// Evaluates every bound for one measured point under `cal`.
pub fn evaluate_row(config: &SweepConfig, e: &PointEmpirics, cal: &Calibration) -> Result<SweepRow> {
    let g = &e.geometry;
    let harris = harris_rate(e.gamma, e.exact_tau)?;
    let relax = relaxation_bound(harris.alpha_bar, e.exact_tau)?;
    let mut row = SweepRow {
        target: config.target.name().to_string(),
        proposal: config.proposal.name().to_string(),
        epsilon: g.epsilon,
        radius: g.radius,
        l_over_eps: g.radius / g.epsilon,
        n: config.n,
        mode: e.mode,
        p_mode: g.p_mode,
        delta1: g.delta1,
        c1: e.c1,
        c2: e.c2,
        exact_gap: e.exact_gap,
        exact_tau: e.exact_tau,
        exact_tau_restricted: e.exact_tau_restricted,
        path_gap_bound: e.path_gap_bound,
        thm1_tau_bound: thm1_mixing_bound(cal.c_thm1, g.epsilon, g.delta1, g.radius, g.p_mode)?,
        lemma2_gap_bound: lemma2_gap_bound(g)?,
        lemma2_tau_bound: lemma2_tau_bound(cal.c_lemma2, g)?,
        a0_bound: continuous_a0_bound(g)?,
        gamma: e.gamma,
        k: e.k,
        r1: e.r1,
        r2: e.r2,
        escape_prob: escape_prob_bound(e.gamma, e.k, e.exact_tau)?,
        harris_alpha_bar: harris.alpha_bar,
        harris_tau_free: harris.tau_free,
        relaxation_bound: relax.bound,
        relaxation_ratio: relax.ratio,
        hit_decay: e.hitting.as_ref().and_then(|h| h.decay),
        hit_r2: e.hitting.as_ref().and_then(|h| h.r_squared),
        c_thm1: cal.c_thm1,
        c_lemma2: cal.c_lemma2,
        c3: cal.c3,
        t: cal.t,
        thm1_dominates: false,
        lemma2_gap_holds: false,
        path_bound_holds: false,
        lemma2_tau_holds: false,
        lemma3_holds: false,
        seed: e.seed,
    };
    let f = row.recompute_flags();
    row.thm1_dominates = f.thm1_dominates;
    row.lemma2_gap_holds = f.lemma2_gap_holds;
    row.path_bound_holds = f.path_bound_holds;
    row.lemma2_tau_holds = f.lemma2_tau_holds;
    row.lemma3_holds = f.lemma3_holds;
    Ok(row)
}

pub struct SweepResult {
    pub calibration: Calibration,
    pub rows: Vec<SweepRow>,
    pub empirics: Vec<PointEmpirics>,
}

impl SweepResult {
    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_rows(&self.rows, &mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Measures every point in parallel, calibrates if requested, evaluates the
/// bounds, and writes the configured outputs. Rows follow config order.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    let points = config.points()?;
    let with_tv = config.output.plots.is_some();
    let empirics: Vec<PointEmpirics> = points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| measure_point(config, i, p, with_tv))
        .collect::<Result<_>>()?;
    let calibration = match config.calibration {
        CalibrationMode::Fixed(c) => c,
        CalibrationMode::Directive(Directive::Calibrate) => {
            let pts: Vec<CalibrationPoint> = empirics.iter().map(PointEmpirics::calibration_point).collect();
            calibrate_constants(&pts)?
        }
    };
    let rows = empirics
        .iter()
        .map(|e| evaluate_row(config, e, &calibration))
        .collect::<Result<Vec<_>>>()?;
    let result = SweepResult {
        calibration,
        rows,
        empirics,
    };
    if let Some(path) = &config.output.csv {
        fs::write(path, result.to_csv()?)?;
    }
    if let Some(dir) = &config.output.plots {
        emit_plots(&result.rows, dir)?;
        emit_curve_plots(&result.empirics, dir)?;
    }
    Ok(result)
}

/// Writes the schema line and the rows.
pub fn write_rows<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{SCHEMA_HEADER}")?;
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a schema-v1 CSV; fails on a missing or different schema line.
pub fn read_rows<R: Read>(mut r: R) -> Result<Vec<SweepRow>> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let body = strip_schema(&text)?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let rows: Vec<SweepRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::InsufficientData("sweep CSV has no rows".into()));
    }
    Ok(rows)
}

fn strip_schema(text: &str) -> Result<&str> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim_end() != SCHEMA_HEADER {
        return Err(Error::Parse(format!(
            "expected schema line '{SCHEMA_HEADER}', found '{first}'"
        )));
    }
    Ok(rest)
}

pub fn read_rows_from(path: &Path) -> Result<Vec<SweepRow>> {
    read_rows(fs::File::open(path)?)
}

/// Recomputes calibration constants from a sweep CSV's rows.
pub fn calibrate_from_rows(rows: &[SweepRow]) -> Result<Calibration> {
    let pts: Vec<CalibrationPoint> = rows.iter().map(SweepRow::calibration_point).collect();
    calibrate_constants(&pts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Exponent {
    pub regressor: String,
    pub exponent: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub response: String,
    pub terms: Vec<Exponent>,
    pub log_intercept: f64,
    pub r_squared: f64,
    pub observations: usize,
}

/// Numeric columns of a CSV (schema line optional), by header name.
fn numeric_column(headers: &csv::StringRecord, records: &[csv::StringRecord], name: &str) -> Result<Vec<f64>> {
    let idx = headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::InvalidParameter(format!("no column named '{name}'")))?;
    records
        .iter()
        .map(|r| {
            let field = r.get(idx).unwrap_or("");
            field
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("column '{name}' has non-numeric value '{field}'")))
        })
        .collect()
}

/// OLS of `ln column` on `1, ln regressor_1, …`, giving power-law exponents
/// with standard errors. Each regressor needs at least 4 distinct values.
pub fn fit_scaling(csv_text: &str, column: &str, regressors: &[&str]) -> Result<ScalingFit> {
    let body = if csv_text.starts_with('#') {
        strip_schema(csv_text)?
    } else {
        csv_text
    };
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    if regressors.is_empty() {
        return Err(Error::invalid("at least one regressor is needed"));
    }
    let y = numeric_column(&headers, &records, column)?;
    if let Some(v) = y.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!(
            "response '{column}' must be positive, found {v}"
        )));
    }
    let mut xs = Vec::with_capacity(regressors.len());
    for &name in regressors {
        let col = numeric_column(&headers, &records, name)?;
        if let Some(v) = col.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::invalid(format!(
                "regressor '{name}' must be positive, found {v}"
            )));
        }
        let mut distinct = col.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 4 {
            return Err(Error::InsufficientData(format!(
                "regressor '{name}' has {} distinct values; at least 4 are needed",
                distinct.len()
            )));
        }
        xs.push(col);
    }
    let n = y.len();
    let p = regressors.len() + 1;
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {p} coefficients"
        )));
    }
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { xs[j - 1][i].ln() });
    let response = DVector::from_iterator(n, y.iter().map(|v| v.ln()));
    let chol = (design.transpose() * &design)
        .cholesky()
        .ok_or_else(|| Error::invalid("regressors are collinear"))?;
    let beta = chol.solve(&(design.transpose() * &response));
    let xtx_inv = chol.inverse();
    let resid = &response - &design * &beta;
    let rss = resid.norm_squared();
    let mean = response.mean();
    let tss: f64 = response.iter().map(|v| (v - mean).powi(2)).sum();
    let sigma2 = rss / (n - p) as f64;
    let terms = regressors
        .iter()
        .enumerate()
        .map(|(j, name)| Exponent {
            regressor: name.to_string(),
            exponent: beta[j + 1],
            std_error: (sigma2 * xtx_inv[(j + 1, j + 1)]).max(0.0).sqrt(),
        })
        .collect();
    Ok(ScalingFit {
        response: column.to_string(),
        terms,
        log_intercept: beta[0],
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
        observations: n,
    })
}

/// Groups rows by a key, preserving first-appearance order.
fn group_by<K: PartialEq + Clone>(rows: &[SweepRow], key: impl Fn(&SweepRow) -> K) -> Vec<(K, Vec<&SweepRow>)> {
    let mut groups: Vec<(K, Vec<&SweepRow>)> = Vec::new();
    for row in rows {
        let k = key(row);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(row),
            None => groups.push((k, vec![row])),
        }
    }
    groups
}

fn sorted(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

fn write_svg(dir: &Path, name: &str, plot: &Plot) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, plot.render()?)?;
    Ok(path)
}

/// Log-log plots of τ and its bound against ε and L, and of the gap with
/// its two lower bounds against ε.
pub fn emit_plots(rows: &[SweepRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no sweep rows to plot".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    let mut tau_eps = Plot::new("Mixing time vs step size", "epsilon", "steps").log_log();
    for ((target, radius), group) in group_by(rows, |r| (r.target.clone(), r.radius)) {
        let tag = format!("{target}, L={radius}");
        tau_eps = tau_eps
            .with(Series::markers(
                format!("tau ({tag})"),
                sorted(group.iter().map(|r| (r.epsilon, r.exact_tau as f64)).collect()),
            ))
            .with(Series::line(
                format!("bound ({tag})"),
                sorted(group.iter().map(|r| (r.epsilon, r.thm1_tau_bound)).collect()),
            ));
    }
    files.push(write_svg(out_dir, "tau_vs_epsilon.svg", &tau_eps)?);

    let mut tau_l = Plot::new("Mixing time vs radius", "L", "steps").log_log();
    for (target, group) in group_by(rows, |r| r.target.clone()) {
        tau_l = tau_l
            .with(Series::markers(
                format!("tau ({target})"),
                sorted(group.iter().map(|r| (r.radius, r.exact_tau as f64)).collect()),
            ))
            .with(Series::markers(
                format!("bound ({target})"),
                sorted(group.iter().map(|r| (r.radius, r.thm1_tau_bound)).collect()),
            ));
    }
    files.push(write_svg(out_dir, "tau_vs_radius.svg", &tau_l)?);

    let mut gap = Plot::new("Spectral gap vs step size", "epsilon", "gap").log_log();
    for ((target, radius), group) in group_by(rows, |r| (r.target.clone(), r.radius)) {
        let tag = format!("{target}, L={radius}");
        gap = gap
            .with(Series::markers(
                format!("gap ({tag})"),
                sorted(group.iter().map(|r| (r.epsilon, r.exact_gap)).collect()),
            ))
            .with(Series::line(
                format!("path bound ({tag})"),
                sorted(group.iter().map(|r| (r.epsilon, r.path_gap_bound)).collect()),
            ))
            .with(Series::line(
                format!("ball bound ({tag})"),
                sorted(group.iter().map(|r| (r.epsilon, r.lemma2_gap_bound)).collect()),
            ));
    }
    files.push(write_svg(out_dir, "gap_vs_epsilon.svg", &gap)?);
    Ok(files)
}

/// TV-decay curves from the left end of Θ and hitting-tail curves.
pub fn emit_curve_plots(empirics: &[PointEmpirics], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let label = |e: &PointEmpirics| format!("eps={}, L={}", e.point.epsilon, e.point.radius);
    let mut tv = Plot::new("TV distance from the boundary", "t", "TV").log_y();
    for e in empirics {
        if let Some(curve) = &e.tv_curve {
            tv = tv.with(Series::line(label(e), tv_points(curve)));
        }
    }
    if !tv.series.is_empty() {
        files.push(write_svg(out_dir, "tv_decay.svg", &tv)?);
    }
    let mut hit = Plot::new("Hitting-time tails", "k (blocks of L^2/eps^2 steps)", "Pr[hit > k T0]").log_y();
    for e in empirics {
        if let Some(h) = &e.hitting {
            hit = hit.with(hitting_series(label(e), h));
        }
    }
    if !hit.series.is_empty() {
        files.push(write_svg(out_dir, "hitting_tail.svg", &hit)?);
    }
    Ok(files)
}

/// TV curve points `(t, TV_t)`.
pub fn tv_points(curve: &[f64]) -> Vec<(f64, f64)> {
    curve.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect()
}

pub fn hitting_series(name: String, h: &HittingTail) -> Series {
    Series::line(name, h.tail.iter().enumerate().map(|(k, &p)| (k as f64, p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> SweepConfig {
        SweepConfig::from_json(json).unwrap()
    }

    const ONE_POINT: &str = r#"{
        "target": {"family": "uniform"},
        "proposal": "uniform-ball",
        "radius": [1.0],
        "epsilon": [0.25],
        "n": 512,
        "seed": 3
    }"#;

    #[test]
    fn config_rejections() {
        let mut c = config(ONE_POINT);
        c.epsilon.clear();
        assert!(matches!(c.points(), Err(Error::Config(_))));
        c.epsilon = vec![1.5];
        assert!(matches!(c.points(), Err(Error::Config(_))));
        c.epsilon = vec![0.5];
        c.epsilon_ratio = vec![0.5];
        assert!(c.points().is_err());
        c.epsilon_ratio.clear();
        c.n = MAX_DENSE_STATES + 1;
        assert!(c.points().is_err());
        assert!(SweepConfig::from_json(r#"{"target": {"family": "uniform"}}"#).is_err());
        assert!(SweepConfig::from_json(&ONE_POINT.replace("\"seed\": 3", "\"seed\": 3, \"bogus\": 1")).is_err());
    }

    #[test]
    fn ratio_grid_is_radius_major() {
        let c = config(
            r#"{"target": {"family": "uniform"}, "proposal": "uniform-ball", "radius": [1.0, 2.0],
                "epsilon_ratio": [0.5, 0.25], "seed": 1}"#,
        );
        let pts: Vec<(f64, f64)> = c.points().unwrap().iter().map(|p| (p.radius, p.epsilon)).collect();
        assert_eq!(pts, vec![(1.0, 0.5), (1.0, 0.25), (2.0, 1.0), (2.0, 0.5)]);
        assert_eq!(c.calibration, CalibrationMode::Directive(Directive::Calibrate));
    }

    #[test]
    fn calibration_modes_parse() {
        let c = config(&ONE_POINT.replace(
            "\"seed\": 3",
            r#""seed": 3, "calibration": {"c_thm1": 2.0, "c_lemma2": 1.0, "c3": 0.5, "t": 3}"#,
        ));
        assert_eq!(
            c.calibration,
            CalibrationMode::Fixed(Calibration {
                c_thm1: 2.0,
                c_lemma2: 1.0,
                c3: 0.5,
                t: 3
            })
        );
    }

    #[test]
    fn one_point_pipeline() {
        let c = config(ONE_POINT);
        let result = run_sweep(&c).unwrap();
        assert_eq!(result.rows.len(), 1);
        let row = &result.rows[0];
        assert!(row.exact_tau > 0);
        assert!(row.thm1_dominates);
        assert!(row.path_bound_holds && row.lemma2_gap_holds);
        assert_eq!(row.flags(), row.recompute_flags());
        assert_eq!(row.escape_prob, 0.125);
        // calibrated on itself: C = 2·observed ratio, so the bound is 2τ
        assert!((row.thm1_tau_bound - 2.0 * row.exact_tau as f64).abs() < 1e-9 * row.thm1_tau_bound);
        let csv = result.to_csv().unwrap();
        assert!(csv.starts_with(SCHEMA_HEADER));
        assert_eq!(read_rows(csv.as_bytes()).unwrap(), result.rows);
        assert_eq!(run_sweep(&c).unwrap().to_csv().unwrap(), csv);
    }

    #[test]
    fn schema_line_is_required() {
        assert!(matches!(read_rows("epsilon\n1\n".as_bytes()), Err(Error::Parse(_))));
        assert!(read_rows(format!("{SCHEMA_HEADER}\n").as_bytes()).is_err());
    }

    #[test]
    fn scaling_fit_exact_power() {
        let mut text = String::from("epsilon,radius,tau\n");
        for (i, eps) in [0.5f64, 0.25, 0.125, 0.0625, 0.03125].iter().enumerate() {
            let radius = 1.0 + i as f64;
            text.push_str(&format!("{eps},{radius},{}\n", 3.0 * eps.powi(-3) * radius.powi(2)));
        }
        let fit = fit_scaling(&text, "tau", &["epsilon", "radius"]).unwrap();
        assert!((fit.terms[0].exponent + 3.0).abs() < 1e-10);
        assert!((fit.terms[1].exponent - 2.0).abs() < 1e-10);
        assert!(fit.terms[0].std_error < 1e-10);
        assert!((fit.log_intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn scaling_fit_errors() {
        let text = "epsilon,tau\n0.5,1\n0.5,2\n0.5,3\n0.5,4\n0.5,5\n";
        assert!(matches!(
            fit_scaling(text, "tau", &["epsilon"]),
            Err(Error::InsufficientData(_))
        ));
        let text = "epsilon,tau\n0.5,1\n0.4,0\n0.3,3\n0.2,4\n0.1,5\n";
        assert!(fit_scaling(text, "tau", &["epsilon"]).is_err());
        assert!(fit_scaling("epsilon,tau\n1,1\n", "nope", &["epsilon"]).is_err());
    }

    fn synthetic_rows(count: usize) -> Vec<SweepRow> {
        let c = config(ONE_POINT);
        let base = run_sweep(&c).unwrap().rows.remove(0);
        (0..count)
            .map(|i| {
                let mut r = base.clone();
                r.epsilon = 0.5 / (1.0 + i as f64);
                r.radius = if i % 2 == 0 { 1.0 } else { 2.0 };
                r.exact_tau = 10 * (i as u64 + 1) * (i as u64 + 1);
                r.thm1_tau_bound = 40.0 * ((i + 1) as f64).powi(3);
                r
            })
            .collect()
    }

    #[test]
    fn plots_structure() {
        let dir = tempfile::tempdir().unwrap();
        let rows = synthetic_rows(20);
        let files = emit_plots(&rows, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let tau = fs::read_to_string(dir.path().join("tau_vs_epsilon.svg")).unwrap();
        assert!(tau.starts_with("<?xml"));
        assert_eq!(tau.matches("<circle").count(), 20);
        // one τ series and one bound line per radius
        assert_eq!(tau.matches("<polyline").count(), 2);
        assert!(tau.contains(r#"class="legend""#) && tau.contains("x-label") && tau.contains(">epsilon<"));
        let single = tempfile::tempdir().unwrap();
        emit_plots(&rows[..1], single.path()).unwrap();
        let one = fs::read_to_string(single.path().join("tau_vs_epsilon.svg")).unwrap();
        assert_eq!(one.matches("<circle").count(), 1);
        assert!(emit_plots(&[], dir.path()).is_err());
        let again = tempfile::tempdir().unwrap();
        emit_plots(&rows, again.path()).unwrap();
        assert_eq!(
            fs::read_to_string(again.path().join("tau_vs_epsilon.svg")).unwrap(),
            tau
        );
    }

    #[test]
    fn unwritable_plot_dir() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        fs::write(&file, "x").unwrap();
        assert!(emit_plots(&synthetic_rows(2), &file).is_err());
    }
}
