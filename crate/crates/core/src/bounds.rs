//! Closed-form bounds: mixing and relaxation bounds on Θ, the canonical-path
//! gap bound near the mode, escape probability from `S(R1)`, the Harris rate
//! of `P^τ`, and calibration of the unspecified constants.

use serde::{Deserialize, Serialize};

use crate::drift::{escape_numerator, outer_radius};
use crate::model::unit_ball_volume;
use crate::{Error, Result};

/// Points in the α₀ grid of [`harris_rate`].
pub const HARRIS_GRID: usize = 100_000;

/// Multiplier applied to the worst observed ratio during calibration.
pub const SAFETY_MARGIN: f64 = 2.0;

fn positive(name: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::invalid(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

/// Step size, envelope and geometry inputs shared by the bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dim: usize,
    pub epsilon: f64,
    pub delta1: f64,
    pub radius: f64,
    /// `p_Θ(m)`.
    pub p_mode: f64,
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        positive("epsilon", self.epsilon)?;
        positive("delta1", self.delta1)?;
        positive("L", self.radius)?;
        positive("p_mode", self.p_mode)?;
        Ok(())
    }

    fn validate_small_step(&self) -> Result<()> {
        self.validate()?;
        if self.epsilon > self.radius {
            return Err(Error::invalid(format!(
                "path bounds need epsilon <= L (2L/ε + 1 < 3L/ε), got epsilon = {} > L = {}",
                self.epsilon, self.radius
            )));
        }
        Ok(())
    }
}

/// `C·ε⁻³·δ1⁻¹·L⁴·p_Θ(m)`.
pub fn thm1_mixing_bound(c: f64, epsilon: f64, delta1: f64, radius: f64, p_mode: f64) -> Result<f64> {
    positive("C", c)?;
    positive("epsilon", epsilon)?;
    positive("delta1", delta1)?;
    positive("L", radius)?;
    positive("p_mode", p_mode)?;
    Ok(c * radius.powi(4) * p_mode / (epsilon.powi(3) * delta1))
}

/// `(π^{d/2}/Γ(d/2+1))·3^{d+2}·ε⁻³·L^{d+3}·δ1⁻¹·p_Θ(m)`.
pub fn continuous_a0_bound(g: &Geometry) -> Result<f64> {
    g.validate_small_step()?;
    let d = g.dim as i32;
    Ok(unit_ball_volume(g.dim) * 3f64.powi(d + 2) * g.radius.powi(d + 3) * g.p_mode / (g.epsilon.powi(3) * g.delta1))
}

/// `3^{-(d+2)}·ε³·δ1·L^{-(d+3)}·p_Θ(m)⁻¹·Γ(d/2+1)/π^{d/2}`.
pub fn lemma2_gap_bound(g: &Geometry) -> Result<f64> {
    g.validate_small_step()?;
    let d = g.dim as i32;
    Ok(g.epsilon.powi(3) * g.delta1 / (3f64.powi(d + 2) * g.radius.powi(d + 3) * g.p_mode * unit_ball_volume(g.dim)))
}

/// `C·log(16)·ε⁻³·δ1⁻¹·L^{d+3}·p_Θ(m)·π^{d/2}·3^{d+2}/Γ(d/2+1)`.
pub fn lemma2_tau_bound(c: f64, g: &Geometry) -> Result<f64> {
    positive("C", c)?;
    Ok(c * 16f64.ln() * continuous_a0_bound(g)?)
}

fn check_drift(gamma: f64, k: f64, tau: u64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::invalid(format!("K must be finite and nonnegative, got {k}")));
    }
    if tau == 0 {
        return Err(Error::invalid("tau must be at least 1"));
    }
    Ok(())
}

/// Escape probability bound `R2⁻¹(R1/(1−γ) + Kτ/(1−γ))`; `1/8` whenever
/// `K > 0`, and 0 for `K = 0`.
pub fn escape_prob_bound(gamma: f64, k: f64, tau: u64) -> Result<f64> {
    check_drift(gamma, k, tau)?;
    if k == 0.0 {
        return Ok(0.0);
    }
    Ok(escape_numerator(gamma, k, tau) / outer_radius(gamma, k, tau))
}

/// The same chain before its last step, keeping the `γ^{τ+1}` term:
/// `R2⁻¹(R1/(1−γ) + K((1−γ)τ + γ^{τ+1} − γ)/(1−γ)²)`.
pub fn escape_prob_bound_sharp(gamma: f64, k: f64, tau: u64) -> Result<f64> {
    check_drift(gamma, k, tau)?;
    if k == 0.0 {
        return Ok(0.0);
    }
    let g = 1.0 - gamma;
    let t = tau as f64;
    let sum = 4.0 * k / (g * g) + k * (g * t + gamma.powf(t + 1.0) - gamma) / (g * g);
    Ok(sum / outer_radius(gamma, k, tau))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarrisRate {
    /// Contraction rate of `P^τ`.
    pub alpha_bar: f64,
    /// Minimizing α₀.
    pub alpha_zero: f64,
    /// The τ-free upper bound with `γ` in place of `γ^τ`.
    pub tau_free: f64,
}

/// Second term of the Harris maximum with `g = γ^τ`.
fn harris_second(g: f64, a0: f64) -> f64 {
    let w = 4.0 * a0 / (1.0 - g);
    (2.0 + w * (g + 1.0) / 2.0) / (2.0 + w)
}

fn harris_objective(g: f64, a0: f64) -> f64 {
    (1.0 - 5.0 / 8.0 + a0).max(harris_second(g, a0))
}

/// `inf_{α₀ ∈ (0, 5/8)} max(3/8 + α₀, harris_second(g, α₀))`: grid search,
/// then bisection on the crossing inside the best cell.
fn harris_infimum(g: f64) -> (f64, f64) {
    let top = 5.0 / 8.0;
    let h = top / HARRIS_GRID as f64;
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..HARRIS_GRID {
        let a0 = i as f64 * h;
        let value = harris_objective(g, a0);
        if value < best.0 {
            best = (value, a0);
        }
    }
    let diff = |a0: f64| (3.0 / 8.0 + a0) - harris_second(g, a0);
    let (mut lo, mut hi) = ((best.1 - h).max(0.0), (best.1 + h).min(top));
    if diff(lo) <= 0.0 && diff(hi) >= 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if diff(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        let a0 = 0.5 * (lo + hi);
        let value = harris_objective(g, a0);
        if value < best.0 {
            best = (value, a0);
        }
    }
    best
}

/// Resolution of reported Harris rates.
const HARRIS_RESOLUTION: f64 = (1u64 << 40) as f64;

/// Rounds up onto the `2^-40` grid. Exact, monotone, and never below `v`, so
/// last-bit noise in the crossing cannot make the rate increase with `τ`.
fn round_up(v: f64) -> f64 {
    (v * HARRIS_RESOLUTION).ceil() / HARRIS_RESOLUTION
}

/// Contraction rate of `P^τ` from the minorization on `S(R1)` and drift.
pub fn harris_rate(gamma: f64, tau: u64) -> Result<HarrisRate> {
    check_drift(gamma, 0.0, tau)?;
    let g = gamma.powf(tau as f64);
    let (alpha_bar, alpha_zero) = harris_infimum(g);
    let (tau_free, _) = harris_infimum(gamma);
    Ok(HarrisRate {
        alpha_bar: round_up(alpha_bar),
        alpha_zero,
        tau_free: round_up(tau_free),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationBound {
    /// `1 / (1 − ᾱ^{1/τ})`.
    pub bound: f64,
    /// `bound / τ`.
    pub ratio: f64,
}

pub fn relaxation_bound(alpha_bar: f64, tau: u64) -> Result<RelaxationBound> {
    if !(0.0..1.0).contains(&alpha_bar) {
        return Err(Error::invalid(format!("alpha_bar must lie in [0, 1), got {alpha_bar}")));
    }
    if tau == 0 {
        return Err(Error::invalid("tau must be at least 1"));
    }
    let t = tau as f64;
    // 1 − ᾱ^{1/τ} = −expm1(ln ᾱ / τ), accurate for large τ
    let bound = 1.0 / -(alpha_bar.ln() / t).exp_m1();
    Ok(RelaxationBound {
        bound,
        ratio: bound / t,
    })
}

/// Concrete values for the constants the bounds leave unspecified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Multiplies `ε⁻³δ1⁻¹L⁴p_Θ(m)` in the mixing bound.
    pub c_thm1: f64,
    /// Multiplies the restricted mixing bound near the mode.
    pub c_lemma2: f64,
    /// Hitting time scale `C3·L²/ε²`.
    pub c3: f64,
    /// Number of hitting-time blocks needed for escape probability 1/8.
    pub t: u64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            c_thm1: 1.0,
            c_lemma2: 1.0,
            c3: 1.0,
            t: 1,
        }
    }
}

/// One sweep point's empirical quantities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub geometry: Geometry,
    pub exact_tau: u64,
    pub exact_tau_restricted: u64,
    /// Fitted per-block survival of the hitting tail, if measured.
    pub hit_decay: Option<f64>,
}

/// Smallest constants making every bound hold over `points`, times
/// [`SAFETY_MARGIN`].
///
/// `T` is the number of blocks the slowest fitted hitting tail needs to
/// fall below 1/8 (1 when no tails are supplied); `C3` then covers
/// `τ − τ_A ≤ C3·T·L²/ε²`.
pub fn calibrate_constants(points: &[CalibrationPoint]) -> Result<Calibration> {
    if points.is_empty() {
        return Err(Error::InsufficientData(
            "calibration needs at least one sweep point".into(),
        ));
    }
    let mut t = 1u64;
    for p in points {
        if let Some(decay) = p.hit_decay {
            if !(decay > 0.0 && decay < 1.0) {
                return Err(Error::invalid(format!("hitting decay must lie in (0, 1), got {decay}")));
            }
            t = t.max((8f64.ln() / -decay.ln()).ceil() as u64);
        }
    }
    let mut c_thm1 = 0.0f64;
    let mut c_lemma2 = 0.0f64;
    let mut c3 = 0.0f64;
    for p in points {
        let g = &p.geometry;
        let unit = thm1_mixing_bound(1.0, g.epsilon, g.delta1, g.radius, g.p_mode)?;
        c_thm1 = c_thm1.max(p.exact_tau as f64 / unit);
        c_lemma2 = c_lemma2.max(p.exact_tau_restricted as f64 / lemma2_tau_bound(1.0, g)?);
        let excess = p.exact_tau.saturating_sub(p.exact_tau_restricted).max(1) as f64;
        c3 = c3.max(excess * g.epsilon * g.epsilon / (g.radius * g.radius * t as f64));
    }
    Ok(Calibration {
        c_thm1: SAFETY_MARGIN * c_thm1,
        c_lemma2: SAFETY_MARGIN * c_lemma2,
        c3: SAFETY_MARGIN * c3,
        t,
    })
}

/// Every input a [`BoundReport`] is computed from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub geometry: Geometry,
    pub c1: f64,
    pub c2: f64,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub tau: u64,
    pub calibration: Calibration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub thm1_tau_bound: f64,
    pub lemma2_gap_lower: f64,
    pub lemma2_tau_bound: f64,
    pub a0_bound: f64,
    pub escape_prob: f64,
    pub harris_alpha_bar: f64,
    pub harris_tau_free: f64,
    pub relaxation_bound: f64,
    pub relaxation_ratio: f64,
    pub exact_gap: Option<f64>,
    pub exact_tau: Option<u64>,
    /// `thm1_tau_bound ≥ exact_tau`, when the twin is present.
    pub thm1_dominates: Option<bool>,
    /// `lemma2_gap_lower ≤ exact_gap`, when the twin is present.
    pub gap_bound_holds: Option<bool>,
}

impl BoundReport {
    pub fn evaluate(inputs: BoundInputs, exact_gap: Option<f64>, exact_tau: Option<u64>) -> Result<Self> {
        let g = &inputs.geometry;
        let thm1 = thm1_mixing_bound(inputs.calibration.c_thm1, g.epsilon, g.delta1, g.radius, g.p_mode)?;
        let gap = lemma2_gap_bound(g)?;
        let harris = harris_rate(inputs.gamma, inputs.tau)?;
        let relax = relaxation_bound(harris.alpha_bar, inputs.tau)?;
        Ok(BoundReport {
            inputs,
            thm1_tau_bound: thm1,
            lemma2_gap_lower: gap,
            lemma2_tau_bound: lemma2_tau_bound(inputs.calibration.c_lemma2, g)?,
            a0_bound: continuous_a0_bound(g)?,
            escape_prob: escape_prob_bound(inputs.gamma, inputs.k, inputs.tau)?,
            harris_alpha_bar: harris.alpha_bar,
            harris_tau_free: harris.tau_free,
            relaxation_bound: relax.bound,
            relaxation_ratio: relax.ratio,
            exact_gap,
            exact_tau,
            thm1_dominates: exact_tau.map(|t| thm1 >= t as f64),
            gap_bound_holds: exact_gap.map(|e| gap <= e),
        })
    }
}
