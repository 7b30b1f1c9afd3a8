//! The triple chain `(X, Y, Z)` driven by shared innovations, hitting-time
//! tails near the mode, and Monte Carlo escape frequencies from `S(R1)`.
//!
//! `X` is the restricted MH chain, `Y` a random walk truncated to
//! `[m − L, m + L]` and `Z` a free random walk. Starts on either side of the
//! mode are handled in oriented coordinates `x̃ = m + s(x − m)`, with
//! `s = sign(x − m)`: every chain moves by `s·Δ_t` in real coordinates, so the
//! orderings `X̃ ≤ Ỹ ≤ Z̃` are checked in the oriented frame.
//!
//! `X̃ ≤ Ỹ` is enforced before both hitting times. `Ỹ ≤ Z̃` is enforced
//! before `Y` reaches `[m − L, m + ε]` and before `Z̃ < m − L`; after `Y`'s hit
//! a truncation at `m − L` can put `Ỹ` above `Z̃`, which is counted in
//! `late_yz_crossings` rather than treated as a failure. `X̃ ≤ Ỹ` can fail
//! when Θ reaches the truncation boundary `m + L` on a non-uniform target, so
//! `L` should exceed Θ by the proposal's reach.

use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use crate::drift::{sublevel_set, uniform_grid, DriftCertificate};
use crate::kernel::{Innovation, MhKernel};
use crate::model::Interval;
use crate::rng::stream;
use crate::{Error, Result};

/// Minimum number of runs for tail and escape estimates.
pub const MIN_RUNS: usize = 1000;

/// Resolution of the grid used to resolve sublevel sets of `V`.
pub const SUBLEVEL_GRID: usize = 8193;

/// Geometry of one coupling run in oriented coordinates.
#[derive(Clone, Copy, Debug)]
struct Frame {
    mode: f64,
    epsilon: f64,
    radius: f64,
    sign: f64,
}

impl Frame {
    fn new(kernel: &MhKernel, x: f64) -> Result<Self> {
        let p = kernel
            .random_walk_proposal()
            .ok_or_else(|| Error::invalid("coupling needs a random-walk proposal"))?;
        let t = kernel.target();
        Ok(Frame {
            mode: t.mode,
            epsilon: p.epsilon,
            radius: t.radius,
            sign: if x >= t.mode { 1.0 } else { -1.0 },
        })
    }

    fn orient(&self, x: f64) -> f64 {
        self.mode + self.sign * (x - self.mode)
    }

    fn in_x_window(&self, x: f64) -> bool {
        (x - self.mode).abs() <= self.epsilon
    }

    /// `Ỹ ∈ [m − L, m + ε]`.
    fn in_y_window(&self, oriented: f64) -> bool {
        oriented >= self.mode - self.radius && oriented <= self.mode + self.epsilon
    }

    fn in_ball(&self, oriented: f64) -> bool {
        (oriented - self.mode).abs() <= self.radius
    }
}

/// Incremental state of one triple run with on-line ordering checks.
#[derive(Clone, Debug)]
struct Triple {
    frame: Frame,
    t: u64,
    x: f64,
    y: f64,
    z: f64,
    hit_x: Option<u64>,
    hit_y: Option<u64>,
    exit_z: Option<u64>,
    window_skips: u64,
    late_yz_crossings: u64,
}

impl Triple {
    fn new(kernel: &MhKernel, x: f64) -> Result<Self> {
        if kernel.is_restricted() && !kernel.target().contains(x) {
            let s = kernel.target().support;
            return Err(Error::OutsideSupport { x, a: s.lo, b: s.hi });
        }
        let frame = Frame::new(kernel, x)?;
        let mut triple = Triple {
            frame,
            t: 0,
            x,
            y: x,
            z: x,
            hit_x: None,
            hit_y: None,
            exit_z: None,
            window_skips: 0,
            late_yz_crossings: 0,
        };
        triple.record_hits();
        Ok(triple)
    }

    fn oriented(&self) -> (f64, f64, f64) {
        let f = &self.frame;
        (f.orient(self.x), f.orient(self.y), f.orient(self.z))
    }

    fn record_hits(&mut self) {
        let (_, y, z) = self.oriented();
        if self.hit_x.is_none() && self.frame.in_x_window(self.x) {
            self.hit_x = Some(self.t);
        }
        if self.hit_y.is_none() && self.frame.in_y_window(y) {
            self.hit_y = Some(self.t);
        }
        if self.exit_z.is_none() && z < self.frame.mode - self.frame.radius {
            self.exit_z = Some(self.t);
        }
    }

    fn before_hits(&self) -> bool {
        let t = self.t;
        self.hit_x.is_none_or(|h| t < h) && self.hit_y.is_none_or(|h| t < h)
    }

    /// Checks `X̃ ≤ Ỹ` before both hits and `Ỹ ≤ Z̃` before `Y`'s hit and
    /// `Z̃ < m − L`.
    fn check_ordering(&mut self) -> Result<()> {
        let (x, y, z) = self.oriented();
        if self.before_hits() {
            if x > y {
                return Err(Error::OrderingViolation {
                    t: self.t,
                    detail: format!("X = {} exceeds Y = {} before hitting (oriented)", x, y),
                });
            }
            if x < self.frame.mode - self.frame.epsilon {
                // jumped over the window; not a coupling failure
                self.window_skips += 1;
            }
        }
        if self.exit_z.is_none() && y > z {
            if self.hit_y.is_some() {
                self.late_yz_crossings += 1;
            } else {
                return Err(Error::OrderingViolation {
                    t: self.t,
                    detail: format!("Y = {} exceeds Z = {} before Y hits or Z exits (oriented)", y, z),
                });
            }
        }
        Ok(())
    }

    fn advance(&mut self, kernel: &MhKernel, innovation: Innovation) -> Result<()> {
        let f = self.frame;
        let step = f.sign * innovation.delta;
        self.x = kernel.forward_map(self.x, step, innovation.u)?;
        let y_next = f.orient(self.y) + innovation.delta;
        if f.in_ball(y_next) {
            self.y += step;
        }
        self.z += step;
        self.t += 1;
        self.record_hits();
        self.check_ordering()
    }
}

/// A stored triple-chain path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TripleTrajectory {
    pub start: f64,
    pub horizon: u64,
    pub seed: u64,
    pub stream: u64,
    /// `+1` when started at or right of the mode, `−1` otherwise.
    pub orientation: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Innovations `(Δ_t, U_t)` in oriented form, one per step.
    pub innovations: Vec<(f64, f64)>,
    pub hit_x: Option<u64>,
    pub hit_y: Option<u64>,
    pub exit_z: Option<u64>,
    /// Steps before hitting where `X̃` sat below `m − ε` (large jumps only).
    pub window_skips: u64,
    /// Steps after `Y`'s hit, before `Z̃ < m − L`, with `Ỹ > Z̃`.
    pub late_yz_crossings: u64,
}

impl TripleTrajectory {
    /// CSV with columns `t, X, Y, Z, delta, U` (the last row has empty
    /// innovation fields).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "X", "Y", "Z", "delta", "U"])?;
        for t in 0..self.x.len() {
            let (d, u) = match self.innovations.get(t) {
                Some((d, u)) => (d.to_string(), u.to_string()),
                None => (String::new(), String::new()),
            };
            out.write_record([
                t.to_string(),
                self.x[t].to_string(),
                self.y[t].to_string(),
                self.z[t].to_string(),
                d,
                u,
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs the triple chain for `horizon` steps from `x`, using stream
/// `(seed, stream_index)`. Ordering violations are errors.
pub fn run_triple(kernel: &MhKernel, x: f64, horizon: u64, seed: u64, stream_index: u64) -> Result<TripleTrajectory> {
    let mut triple = Triple::new(kernel, x)?;
    let mut rng = stream(seed, stream_index);
    let cap = usize::try_from(horizon).map_err(|_| Error::invalid("horizon too large"))? + 1;
    let (mut xs, mut ys, mut zs) = (
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
    );
    let mut innovations = Vec::with_capacity(cap - 1);
    xs.push(triple.x);
    ys.push(triple.y);
    zs.push(triple.z);
    for _ in 0..horizon {
        let innovation = kernel.draw_innovation(triple.x, &mut rng);
        triple.advance(kernel, innovation)?;
        innovations.push((innovation.delta, innovation.u));
        xs.push(triple.x);
        ys.push(triple.y);
        zs.push(triple.z);
    }
    Ok(TripleTrajectory {
        start: x,
        horizon,
        seed,
        stream: stream_index,
        orientation: triple.frame.sign,
        x: xs,
        y: ys,
        z: zs,
        innovations,
        hit_x: triple.hit_x,
        hit_y: triple.hit_y,
        exit_z: triple.exit_z,
        window_skips: triple.window_skips,
        late_yz_crossings: triple.late_yz_crossings,
    })
}

/// Outcome of one unstored triple run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TripleSummary {
    pub hit_x: Option<u64>,
    pub hit_y: Option<u64>,
    pub exit_z: Option<u64>,
    pub window_skips: u64,
    pub late_yz_crossings: u64,
}

/// Runs the triple chain without storing the path, stopping early once
/// `X` has hit the window if `stop_at_hit` is set.
pub fn run_triple_summary(
    kernel: &MhKernel,
    x: f64,
    horizon: u64,
    seed: u64,
    stream_index: u64,
    stop_at_hit: bool,
) -> Result<TripleSummary> {
    let mut triple = Triple::new(kernel, x)?;
    let mut rng = stream(seed, stream_index);
    while triple.t < horizon && !(stop_at_hit && triple.hit_x.is_some()) {
        let innovation = kernel.draw_innovation(triple.x, &mut rng);
        triple.advance(kernel, innovation)?;
    }
    Ok(TripleSummary {
        hit_x: triple.hit_x,
        hit_y: triple.hit_y,
        exit_z: triple.exit_z,
        window_skips: triple.window_skips,
        late_yz_crossings: triple.late_yz_crossings,
    })
}

/// Aggregate of many triple runs; every run passed the ordering checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderingReport {
    pub runs: usize,
    pub horizon: u64,
    pub hit_x: usize,
    pub hit_y: usize,
    pub exit_z: usize,
    pub window_skips: u64,
    /// Runs with at least one late `Ỹ > Z̃` step.
    pub late_yz_runs: usize,
}

/// Runs `n_runs` triples from `x` in parallel (stream `r` for run `r`), up
/// to `horizon` or, with `stop_at_hit`, until `X` hits. The first ordering
/// violation in run order is returned as an error.
pub fn check_orderings(
    kernel: &MhKernel,
    x: f64,
    horizon: u64,
    n_runs: usize,
    seed: u64,
    stop_at_hit: bool,
) -> Result<OrderingReport> {
    let runs: Vec<TripleSummary> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| run_triple_summary(kernel, x, horizon, seed, r, stop_at_hit))
        .collect::<Result<_>>()?;
    Ok(OrderingReport {
        runs: n_runs,
        horizon,
        hit_x: runs.iter().filter(|s| s.hit_x.is_some()).count(),
        hit_y: runs.iter().filter(|s| s.hit_y.is_some()).count(),
        exit_z: runs.iter().filter(|s| s.exit_z.is_some()).count(),
        window_skips: runs.iter().map(|s| s.window_skips).sum(),
        late_yz_runs: runs.iter().filter(|s| s.late_yz_crossings > 0).count(),
    })
}

/// `⌈C3·L²/ε²⌉`, the hitting time scale.
pub fn unit_time(c3: f64, radius: f64, epsilon: f64) -> Result<u64> {
    let t = (c3 * radius * radius / (epsilon * epsilon)).ceil();
    if !(t >= 1.0 && t.is_finite()) {
        return Err(Error::invalid(format!("hitting unit time must be at least 1, got {t}")));
    }
    Ok(t as u64)
}

/// Empirical `k ↦ Pr[τ^x > k·T0]` with a log-linear decay fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HittingTail {
    pub start: f64,
    pub unit_time: u64,
    pub runs: usize,
    /// `tail[k]` for `k = 0..=k_max`.
    pub tail: Vec<f64>,
    /// Fitted per-block survival `exp(slope)`, the analogue of `1 − δη`.
    pub decay: Option<f64>,
    pub r_squared: Option<f64>,
    /// Every run hit before `T0`, so no decay can be fitted.
    pub degenerate: bool,
}

/// Hitting tail of the window `[m − ε, m + ε]` for the chain `X` started at
/// `x`, over `n_runs` independent runs of at most `k_max·T0` steps.
pub fn hitting_tail(
    kernel: &MhKernel,
    x: f64,
    unit: u64,
    k_max: usize,
    n_runs: usize,
    seed: u64,
) -> Result<HittingTail> {
    if n_runs < MIN_RUNS {
        return Err(Error::invalid(format!(
            "hitting tails need at least {MIN_RUNS} runs, got {n_runs}"
        )));
    }
    if unit == 0 || k_max == 0 {
        return Err(Error::invalid("unit time and k_max must be positive"));
    }
    let horizon = unit * k_max as u64;
    let frame = Frame::new(kernel, x)?;
    let hits: Vec<Option<u64>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| first_hit(kernel, &frame, x, horizon, seed, r))
        .collect::<Result<_>>()?;
    let tail: Vec<f64> = (0..=k_max)
        .map(|k| {
            let cut = k as u64 * unit;
            hits.iter().filter(|h| h.is_none_or(|t| t > cut)).count() as f64 / n_runs as f64
        })
        .collect();
    let (decay, r_squared) = match log_linear_fit(&tail) {
        Some((slope, r2)) => (Some(slope.exp()), Some(r2)),
        None => (None, None),
    };
    Ok(HittingTail {
        start: x,
        unit_time: unit,
        runs: n_runs,
        degenerate: tail.iter().skip(1).all(|&p| p == 0.0),
        tail,
        decay,
        r_squared,
    })
}

/// First `t ≤ horizon` with `X_t ∈ [m − ε, m + ε]`, simulating `X` alone
/// with the same innovation stream as the triple.
fn first_hit(kernel: &MhKernel, frame: &Frame, x: f64, horizon: u64, seed: u64, r: u64) -> Result<Option<u64>> {
    let mut rng = stream(seed, r);
    let mut state = x;
    for t in 0..=horizon {
        if frame.in_x_window(state) {
            return Ok(Some(t));
        }
        if t < horizon {
            let innovation = kernel.draw_innovation(state, &mut rng);
            state = kernel.forward_map(state, frame.sign * innovation.delta, innovation.u)?;
        }
    }
    Ok(None)
}

/// Least-squares slope of `ln tail[k]` on `k` over `k ≥ 1` with nonzero tail,
/// and its R². Needs at least two such points.
fn log_linear_fit(tail: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &p)| p > 0.0)
        .map(|(k, &p)| (k as f64, p.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, r2))
}

/// Monte Carlo estimate of `Pr[κ ≤ τ]` from starts in `S(R1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EscapeEstimate {
    pub runs: usize,
    pub escapes: usize,
    pub frequency: f64,
    pub std_error: f64,
    /// 99% confidence radius.
    pub radius99: f64,
    pub tau: u64,
    pub starts: (f64, f64),
    /// `frequency − radius99 ≤ 1/8`.
    pub pass: bool,
}

/// Runs the chain `kernel` (typically unrestricted) for `τ` steps from starts
/// cycling over grid points of `S(R1)` and counts exits from Θ.
pub fn escape_frequency(
    kernel: &MhKernel,
    cert: &DriftCertificate,
    theta: &Interval,
    n_runs: usize,
    seed: u64,
) -> Result<EscapeEstimate> {
    let (Some(r2), Some(tau)) = (cert.r2, cert.tau) else {
        return Err(Error::invalid("escape frequency needs a finalized drift certificate"));
    };
    if n_runs == 0 {
        return Err(Error::invalid("escape frequency needs at least one run"));
    }
    let (lo, hi) = grid_span(cert, theta);
    let grid = uniform_grid(lo, hi, SUBLEVEL_GRID);
    let outer = sublevel_set(&cert.lyapunov, r2, &grid)?;
    if let Some(s) = outer {
        if s.lo < theta.lo || s.hi > theta.hi || s.truncated {
            return Err(Error::invalid(format!(
                "Θ = [{}, {}] does not contain S(R2) ⊇ [{}, {}]",
                theta.lo, theta.hi, s.lo, s.hi
            )));
        }
    }
    let inner = sublevel_set(&cert.lyapunov, cert.r1, &grid)?
        .ok_or_else(|| Error::invalid("S(R1) is empty on the evaluation grid"))?;
    let admissible = |x: f64| !kernel.is_restricted() || kernel.target().contains(x);
    let starts: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&x| x >= inner.lo && x <= inner.hi && admissible(x))
        .collect();
    let starts = if starts.is_empty() {
        vec![0.5 * (inner.lo + inner.hi)]
    } else {
        starts
    };
    let escaped: Vec<bool> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r);
            let mut x = starts[r as usize % starts.len()];
            for _ in 0..tau {
                x = kernel.step(x, &mut rng)?;
                if !theta.contains(x) {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect::<Result<_>>()?;
    let escapes = escaped.iter().filter(|&&e| e).count();
    let frequency = escapes as f64 / n_runs as f64;
    let std_error = (frequency * (1.0 - frequency) / n_runs as f64).sqrt();
    let radius99 = confidence_radius99(escapes, n_runs);
    Ok(EscapeEstimate {
        runs: n_runs,
        escapes,
        frequency,
        std_error,
        radius99,
        tau,
        starts: (inner.lo, inner.hi),
        pass: frequency - radius99 <= 0.125,
    })
}

/// Grid span for resolving sublevel sets: the certificate's grid widened to
/// cover Θ on both sides.
fn grid_span(cert: &DriftCertificate, theta: &Interval) -> (f64, f64) {
    let (mut lo, mut hi) = (theta.lo, theta.hi);
    if let (Some(&a), Some(&b)) = (cert.grid.first(), cert.grid.last()) {
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// 99% radius: normal approximation for `n ≥ 1000`, otherwise the larger
/// distance from `p̂` to the exact (Clopper-Pearson) binomial limits.
pub fn confidence_radius99(successes: usize, n: usize) -> f64 {
    let p = successes as f64 / n as f64;
    if n >= MIN_RUNS {
        return 2.575_829_303_549 * (p * (1.0 - p) / n as f64).sqrt();
    }
    let (lo, hi) = clopper_pearson(successes, n, 0.01);
    (p - lo).max(hi - p)
}

fn clopper_pearson(k: usize, n: usize, alpha: f64) -> (f64, f64) {
    use statrs::distribution::{Beta, ContinuousCDF};
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(k as f64, (n - k + 1) as f64)
            .expect("valid beta")
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new((k + 1) as f64, (n - k) as f64)
            .expect("valid beta")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}
