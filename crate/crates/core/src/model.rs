//! Target densities, isotropic proposals, and the structural checks placed on
//! them: unimodality about a declared mode, near-uniformity on `B_{2ε}(m)`,
//! and the sub-exponential proposal envelope
//! `δ1·1{r ≤ ε} ≤ q(r) ≤ c1·exp(−c2·r/ε)`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

use crate::quad::{simpson, simpson_pieces};
use crate::{Error, Result};

/// Simpson intervals for the normalizer (2^14 + 1 nodes).
pub const NORMALIZER_INTERVALS: usize = 1 << 14;
/// Relative slack that separates genuine monotonicity violations from
/// floating-point plateaus.
pub const UNIMODAL_SLACK: f64 = 1e-12;
/// Threshold of the near-uniform condition on `B_{2ε}(m)`.
pub const NEAR_UNIFORM_THRESHOLD: f64 = 15.0 / 16.0;
/// Radius grid for envelope verification: count and span in units of ε.
pub const ENVELOPE_GRID_POINTS: usize = 512;
pub const ENVELOPE_GRID_MIN: f64 = 1e-6;
pub const ENVELOPE_GRID_MAX: f64 = 50.0;

const NEAR_UNIFORM_GRID: usize = 4096;

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("interval [{lo}, {hi}] is degenerate")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.lo >= self.lo && other.hi <= self.hi
    }
}

/// Shipped target families. Densities are unnormalized on ℝ; a
/// [`TargetSpec`] truncates them to its support Θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case")]
pub enum TargetFamily {
    Uniform,
    Gaussian {
        mean: f64,
        sd: f64,
    },
    Laplace {
        loc: f64,
        scale: f64,
    },
    /// Piecewise-linear tent vanishing at `left` and `right` with apex `apex`.
    Tent {
        apex: f64,
        left: f64,
        right: f64,
    },
}

impl TargetFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TargetFamily::Uniform => "uniform",
            TargetFamily::Gaussian { .. } => "gaussian",
            TargetFamily::Laplace { .. } => "laplace",
            TargetFamily::Tent { .. } => "tent",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TargetFamily::Uniform => Ok(()),
            TargetFamily::Gaussian { mean, sd } => {
                if mean.is_finite() && sd > 0.0 && sd.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "gaussian needs finite mean and sd > 0, got ({mean}, {sd})"
                    )))
                }
            }
            TargetFamily::Laplace { loc, scale } => {
                if loc.is_finite() && scale > 0.0 && scale.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "laplace needs finite loc and scale > 0, got ({loc}, {scale})"
                    )))
                }
            }
            TargetFamily::Tent { apex, left, right } => {
                if left < apex && apex < right && left.is_finite() && right.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "tent needs left < apex < right, got ({left}, {apex}, {right})"
                    )))
                }
            }
        }
    }

    /// The family's own mode, if it has a unique one.
    pub fn natural_mode(&self) -> Option<f64> {
        match *self {
            TargetFamily::Uniform => None,
            TargetFamily::Gaussian { mean, .. } => Some(mean),
            TargetFamily::Laplace { loc, .. } => Some(loc),
            TargetFamily::Tent { apex, .. } => Some(apex),
        }
    }

    /// Unnormalized log density on ℝ (`-inf` where the density vanishes).
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            TargetFamily::Uniform => 0.0,
            TargetFamily::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z
            }
            TargetFamily::Laplace { loc, scale } => -(x - loc).abs() / scale,
            TargetFamily::Tent { apex, left, right } => {
                let v = if x <= apex {
                    (x - left) / (apex - left)
                } else {
                    (right - x) / (right - apex)
                };
                if v > 0.0 {
                    v.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// Points where the density is not smooth.
    fn kinks(&self) -> Vec<f64> {
        match *self {
            TargetFamily::Uniform | TargetFamily::Gaussian { .. } => vec![],
            TargetFamily::Laplace { loc, .. } => vec![loc],
            TargetFamily::Tent { apex, left, right } => vec![left, apex, right],
        }
    }
}

/// A unimodal target restricted to Θ = `[a, b]` with declared mode `m` and
/// radius `L` such that Θ ⊆ `[m − L, m + L]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub family: TargetFamily,
    pub mode: f64,
    pub support: Interval,
    pub radius: f64,
    /// μ(Θ): integral of the unnormalized density over Θ.
    pub normalizer: f64,
    /// p_Θ(m).
    pub p_theta_at_mode: f64,
}

impl TargetSpec {
    /// Builds a target on `support`. `mode` defaults to the family's mode
    /// (the midpoint for uniform targets) and `radius` to the smallest `L`
    /// with Θ ⊆ B_L(m).
    pub fn new(family: TargetFamily, support: Interval, mode: Option<f64>, radius: Option<f64>) -> Result<Self> {
        family.validate()?;
        let mode = mode
            .or_else(|| family.natural_mode())
            .unwrap_or(0.5 * (support.lo + support.hi));
        if !support.contains(mode) {
            return Err(Error::invalid(format!(
                "mode {mode} is outside the support [{}, {}]",
                support.lo, support.hi
            )));
        }
        let min_radius = (mode - support.lo).max(support.hi - mode);
        let radius = radius.unwrap_or(min_radius);
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("radius must be positive, got {radius}")));
        }
        if radius < min_radius * (1.0 - 1e-12) {
            return Err(Error::invalid(format!(
                "support [{}, {}] is not inside B_L(m) = [{}, {}]",
                support.lo,
                support.hi,
                mode - radius,
                mode + radius
            )));
        }
        let normalizer = integrate_density(&family, support, mode);
        if !(normalizer.is_finite() && normalizer > 0.0) {
            return Err(Error::NotNormalizable {
                lo: support.lo,
                hi: support.hi,
                integral: normalizer,
            });
        }
        let p_theta_at_mode = family.density(mode) / normalizer;
        Ok(TargetSpec {
            family,
            mode,
            support,
            radius,
            normalizer,
            p_theta_at_mode,
        })
    }

    /// The same family and mode on a different support.
    pub fn with_support(&self, support: Interval) -> Result<Self> {
        TargetSpec::new(self.family.clone(), support, Some(self.mode), None)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.support.contains(x)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        self.family.log_density(x)
    }

    /// Unnormalized density on ℝ.
    pub fn density(&self, x: f64) -> f64 {
        self.family.density(x)
    }

    /// Normalized restricted density p_Θ, zero off Θ.
    pub fn restricted_density(&self, x: f64) -> f64 {
        if self.contains(x) {
            self.density(x) / self.normalizer
        } else {
            0.0
        }
    }

    /// Knots for piecewise quadrature: the mode and any kinks.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.family.kinks();
        b.push(self.mode);
        b
    }

    /// ∫ p_Θ over `[lo, hi] ∩ Θ`.
    pub fn mass(&self, lo: f64, hi: f64, intervals_per_piece: usize) -> f64 {
        let lo = lo.max(self.support.lo);
        let hi = hi.min(self.support.hi);
        simpson_pieces(|x| self.density(x), lo, hi, &self.breakpoints(), intervals_per_piece) / self.normalizer
    }

    pub fn check_unimodal(&self, grid_size: usize) -> Result<UnimodalCheck> {
        check_unimodal(|x| self.density(x), self.support, self.mode, grid_size)
    }

    pub fn check_near_uniform(&self, epsilon: f64) -> Result<NearUniformCheck> {
        check_near_uniform(self, epsilon)
    }

    /// Smallest density value on Θ over a uniform grid, and whether it is
    /// strictly positive and finite everywhere.
    pub fn check_positive(&self, grid_size: usize) -> Result<f64> {
        let n = grid_size.max(2);
        let mut min = f64::INFINITY;
        for i in 0..n {
            let x = self.support.lo + self.support.width() * i as f64 / (n - 1) as f64;
            let p = self.density(x);
            if !p.is_finite() {
                return Err(Error::NonFiniteDensity { x });
            }
            min = min.min(p);
        }
        Ok(min)
    }
}

fn integrate_density(family: &TargetFamily, support: Interval, mode: f64) -> f64 {
    let mut knots = family.kinks();
    knots.push(mode);
    let inner: Vec<f64> = knots
        .into_iter()
        .filter(|&k| k > support.lo && k < support.hi)
        .collect();
    let pieces = inner.len() + 1;
    let per_piece = (NORMALIZER_INTERVALS / pieces).max(2);
    simpson_pieces(|x| family.density(x), support.lo, support.hi, &inner, per_piece)
}

/// Outcome of a unimodality scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnimodalCheck {
    pub pass: bool,
    pub first_violation: Option<f64>,
    /// Width of the set around the mode where the density is within the
    /// plateau slack of `p(m)`. Plateaus wider than `2ε` are reported.
    pub plateau_width: f64,
}

/// Scans `density` on a uniform grid of `grid_size` points over `support`
/// (plus the mode itself) and checks it is nondecreasing up to `mode` and
/// nonincreasing after it.
pub fn check_unimodal<F: Fn(f64) -> f64>(
    density: F,
    support: Interval,
    mode: f64,
    grid_size: usize,
) -> Result<UnimodalCheck> {
    if grid_size < 3 {
        return Err(Error::invalid("unimodality grid needs at least 3 points"));
    }
    if !support.contains(mode) {
        return Err(Error::invalid(format!("mode {mode} outside support")));
    }
    let n = grid_size;
    let mut xs: Vec<f64> = (0..n)
        .map(|i| support.lo + support.width() * i as f64 / (n - 1) as f64)
        .collect();
    xs.push(mode);
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut values = Vec::with_capacity(xs.len());
    for &x in &xs {
        let p = density(x);
        if !p.is_finite() {
            return Err(Error::NonFiniteDensity { x });
        }
        values.push(p);
    }

    let mut first_violation = None;
    for i in 1..xs.len() {
        let (prev, cur) = (values[i - 1], values[i]);
        let violated = if xs[i] <= mode {
            cur < prev - UNIMODAL_SLACK * prev.abs()
        } else {
            cur > prev + UNIMODAL_SLACK * prev.abs()
        };
        if violated {
            first_violation = Some(xs[i]);
            break;
        }
    }

    let p_mode = density(mode);
    let plateau: Vec<f64> = xs
        .iter()
        .zip(&values)
        .filter(|(_, &p)| p >= p_mode * (1.0 - UNIMODAL_SLACK))
        .map(|(&x, _)| x)
        .collect();
    let plateau_width = match (plateau.first(), plateau.last()) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0.0,
    };

    Ok(UnimodalCheck {
        pass: first_violation.is_none(),
        first_violation,
        plateau_width,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NearUniformCheck {
    pub pass: bool,
    /// inf over B_{2ε}(m) of p(x)/p(m).
    pub ratio: f64,
}

/// Evaluates `inf_{x ∈ B_{2ε}(m)} p(x) / p(m)` on a grid and compares it
/// with 15/16.
pub fn check_near_uniform(target: &TargetSpec, epsilon: f64) -> Result<NearUniformCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let m = target.mode;
    let ball = Interval {
        lo: m - 2.0 * epsilon,
        hi: m + 2.0 * epsilon,
    };
    if !target.support.contains_interval(&ball) {
        return Err(Error::BallOutsideSupport {
            lo: ball.lo,
            hi: ball.hi,
            a: target.support.lo,
            b: target.support.hi,
        });
    }
    let log_pm = target.log_density(m);
    let n = NEAR_UNIFORM_GRID;
    let mut ratio = 1.0f64;
    for i in 0..=n {
        let x = ball.lo + ball.width() * i as f64 / n as f64;
        let r = (target.log_density(x) - log_pm).exp();
        if !r.is_finite() {
            return Err(Error::NonFiniteDensity { x });
        }
        ratio = ratio.min(r);
    }
    Ok(NearUniformCheck {
        pass: ratio > NEAR_UNIFORM_THRESHOLD,
        ratio,
    })
}

/// Largest ε passing the near-uniform condition, by bisection on the grid
/// ratio. `upper` must keep `B_{2·upper}(m)` inside the support.
pub fn critical_near_uniform_epsilon(target: &TargetSpec, upper: f64) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = upper;
    if check_near_uniform(target, hi)?.pass {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid > 0.0 && check_near_uniform(target, mid)?.pass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Isotropic proposal families, all parameterised by the step scale ε.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalFamily {
    /// Uniform on the closed ball of radius ε.
    UniformBall,
    /// Gaussian with standard deviation ε per coordinate.
    Gaussian,
    /// Density proportional to `exp(−‖x‖/ε)`.
    Laplace,
}

impl ProposalFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ProposalFamily::UniformBall => "uniform-ball",
            ProposalFamily::Gaussian => "gaussian",
            ProposalFamily::Laplace => "laplace",
        }
    }
}

/// `(δ1, c1, c2)` with `q(r) ≥ δ1` for `r ≤ ε` and `q(r) ≤ c1·e^{−c2 r/ε}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConstants {
    pub delta1: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum EnvelopeSide {
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeViolation {
    pub radius: f64,
    pub side: EnvelopeSide,
    /// `q(r)` divided by the bound it violates.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub pass: bool,
    pub constants: EnvelopeConstants,
    pub violations: Vec<EnvelopeViolation>,
}

/// An isotropic proposal kernel in dimension `dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    pub family: ProposalFamily,
    pub epsilon: f64,
    pub dim: usize,
    pub envelope: EnvelopeConstants,
}

impl ProposalSpec {
    /// Builds the proposal and certifies its envelope with `c2 = 1`.
    pub fn new(family: ProposalFamily, epsilon: f64, dim: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let mut spec = ProposalSpec {
            family,
            epsilon,
            dim,
            envelope: EnvelopeConstants {
                delta1: 0.0,
                c1: 0.0,
                c2: 1.0,
            },
        };
        let report = spec.verify_envelope()?;
        if !report.pass {
            return Err(Error::invalid(format!(
                "{} proposal failed envelope certification",
                family.name()
            )));
        }
        spec.envelope = report.constants;
        Ok(spec)
    }

    /// Radial density `q(r)` in ℝ^d.
    pub fn radial_density(&self, r: f64) -> f64 {
        let eps = self.epsilon;
        let d = self.dim as i32;
        let df = self.dim as f64;
        match self.family {
            ProposalFamily::UniformBall => {
                if r <= eps {
                    1.0 / (unit_ball_volume(self.dim) * eps.powi(d))
                } else {
                    0.0
                }
            }
            ProposalFamily::Gaussian => (2.0 * PI * eps * eps).powf(-0.5 * df) * (-0.5 * (r / eps).powi(2)).exp(),
            ProposalFamily::Laplace => {
                let sphere = df * unit_ball_volume(self.dim);
                (-r / eps).exp() / (eps.powi(d) * sphere * gamma(df))
            }
        }
    }

    /// `q(x, y)` for 1D states.
    pub fn density(&self, x: f64, y: f64) -> f64 {
        self.radial_density((y - x).abs())
    }

    /// Radii where the radial density has kinks or jumps.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.family {
            ProposalFamily::UniformBall => vec![self.epsilon],
            _ => vec![],
        }
    }

    /// ∫ q over ℝ^d by radial Simpson quadrature on `[0, 50ε]`.
    pub fn total_mass(&self) -> f64 {
        let sphere = self.dim as f64 * unit_ball_volume(self.dim);
        let dm1 = self.dim as i32 - 1;
        let eps = self.epsilon;
        sphere
            * simpson_pieces(
                |r| self.radial_density(r) * r.powi(dm1),
                0.0,
                ENVELOPE_GRID_MAX * eps,
                &[eps],
                1 << 14,
            )
    }

    /// CDF of a 1D increment. Only meaningful for `dim == 1`.
    pub fn increment_cdf(&self, z: f64) -> f64 {
        let eps = self.epsilon;
        match self.family {
            ProposalFamily::UniformBall => ((z + eps) / (2.0 * eps)).clamp(0.0, 1.0),
            ProposalFamily::Gaussian => 0.5 * erfc(-z / (eps * std::f64::consts::SQRT_2)),
            ProposalFamily::Laplace => {
                if z < 0.0 {
                    0.5 * (z / eps).exp()
                } else {
                    1.0 - 0.5 * (-z / eps).exp()
                }
            }
        }
    }

    /// `1 − F(z)` computed without cancellation for large `z`.
    fn increment_sf(&self, z: f64) -> f64 {
        let eps = self.epsilon;
        match self.family {
            ProposalFamily::UniformBall => ((eps - z) / (2.0 * eps)).clamp(0.0, 1.0),
            ProposalFamily::Gaussian => 0.5 * erfc(z / (eps * std::f64::consts::SQRT_2)),
            ProposalFamily::Laplace => {
                if z > 0.0 {
                    0.5 * (-z / eps).exp()
                } else {
                    1.0 - 0.5 * (z / eps).exp()
                }
            }
        }
    }

    /// Probability that a 1D increment lands in `[lo, hi]`.
    pub fn increment_mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let m = if lo >= 0.0 {
            self.increment_sf(lo) - self.increment_sf(hi)
        } else {
            self.increment_cdf(hi) - self.increment_cdf(lo)
        };
        m.max(0.0)
    }

    /// Inverse CDF of the 1D increment, `u ∈ (0, 1)`.
    pub fn sample_increment(&self, u: f64) -> f64 {
        let eps = self.epsilon;
        match self.family {
            ProposalFamily::UniformBall => eps * (2.0 * u - 1.0),
            ProposalFamily::Gaussian => {
                // statrs' inverse CDF is accurate to ~1e-15 in the bulk
                let std = Normal::new(0.0, 1.0).expect("standard normal");
                eps * std.inverse_cdf(u)
            }
            ProposalFamily::Laplace => {
                if u < 0.5 {
                    eps * (2.0 * u).ln()
                } else {
                    -eps * (2.0 * (1.0 - u)).ln()
                }
            }
        }
    }

    pub fn verify_envelope(&self) -> Result<EnvelopeReport> {
        certify_envelope(|r| self.radial_density(r), self.epsilon, 1.0)
    }

    pub fn check_envelope(&self, constants: &EnvelopeConstants) -> Vec<EnvelopeViolation> {
        check_envelope(|r| self.radial_density(r), self.epsilon, constants)
    }
}

/// Volume of the unit ball in ℝ^d: `π^{d/2} / Γ(d/2 + 1)`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => {
            let d = dim as f64;
            PI.powf(0.5 * d) / gamma(0.5 * d + 1.0)
        }
    }
}

/// 512 log-spaced radii on `[1e-6 ε, 50 ε]`, plus ε itself.
pub fn envelope_radius_grid(epsilon: f64) -> Vec<f64> {
    let (lo, hi) = (ENVELOPE_GRID_MIN.ln(), ENVELOPE_GRID_MAX.ln());
    let n = ENVELOPE_GRID_POINTS;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| epsilon * (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
        .collect();
    grid.push(epsilon);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Checks both envelope inequalities at every grid radius.
pub fn check_envelope<F: Fn(f64) -> f64>(
    radial: F,
    epsilon: f64,
    constants: &EnvelopeConstants,
) -> Vec<EnvelopeViolation> {
    let mut violations = Vec::new();
    for r in envelope_radius_grid(epsilon) {
        let q = radial(r);
        if r <= epsilon && q < constants.delta1 * (1.0 - 1e-12) {
            violations.push(EnvelopeViolation {
                radius: r,
                side: EnvelopeSide::Lower,
                ratio: q / constants.delta1,
            });
        }
        let upper = constants.c1 * (-constants.c2 * r / epsilon).exp();
        if q > upper * (1.0 + 1e-12) {
            violations.push(EnvelopeViolation {
                radius: r,
                side: EnvelopeSide::Upper,
                ratio: q / upper,
            });
        }
    }
    violations
}

/// Certifies the tightest `(δ1, c1)` for the given `c2` on the radius grid.
///
/// `δ1` is the minimum of `q` over radii `≤ ε` and `c1` the maximum of
/// `q(r)·e^{c2 r/ε}`. If that product is still growing at the end of the
/// grid the tail is not sub-exponential at rate `c2`: certification fails
/// and the violations are reported against the envelope fitted to the core
/// `r ≤ ε`.
pub fn certify_envelope<F: Fn(f64) -> f64>(radial: F, epsilon: f64, c2: f64) -> Result<EnvelopeReport> {
    let grid = envelope_radius_grid(epsilon);
    let values: Vec<f64> = grid.iter().map(|&r| radial(r)).collect();
    if let Some((i, _)) = values.iter().enumerate().find(|(_, q)| !q.is_finite() || **q < 0.0) {
        return Err(Error::NotNormalizable {
            lo: 0.0,
            hi: grid[i],
            integral: f64::NAN,
        });
    }
    let delta1 = grid
        .iter()
        .zip(&values)
        .filter(|(&r, _)| r <= epsilon)
        .map(|(_, &q)| q)
        .fold(f64::INFINITY, f64::min);
    let weighted: Vec<f64> = grid
        .iter()
        .zip(&values)
        .map(|(&r, &q)| q * (c2 * r / epsilon).exp())
        .collect();
    let c1 = weighted.iter().copied().fold(0.0, f64::max);
    let k = weighted.len();
    let tail_growing = weighted[k - 1] > weighted[k - 2] * (1.0 + 1e-9);

    if !(delta1 > 0.0) {
        return Ok(EnvelopeReport {
            pass: false,
            constants: EnvelopeConstants { delta1, c1, c2 },
            violations: vec![],
        });
    }
    if tail_growing {
        let core = grid
            .iter()
            .zip(&weighted)
            .filter(|(&r, _)| r <= epsilon)
            .map(|(_, &w)| w)
            .fold(0.0, f64::max);
        let constants = EnvelopeConstants { delta1, c1: core, c2 };
        let violations = check_envelope(&radial, epsilon, &constants);
        return Ok(EnvelopeReport {
            pass: false,
            constants,
            violations,
        });
    }
    let constants = EnvelopeConstants { delta1, c1, c2 };
    let violations = check_envelope(&radial, epsilon, &constants);
    Ok(EnvelopeReport {
        pass: violations.is_empty(),
        constants,
        violations,
    })
}

/// JSON description of a target/proposal pair.
///
/// ```json
/// {
///   "target": {"family": "gaussian", "params": {"mean": 0.0, "sd": 1.0}},
///   "support": [-1.0, 1.0],
///   "mode": 0.0,
///   "radius": 1.0,
///   "proposal": "uniform-ball",
///   "epsilon": 0.1,
///   "dim": 1
/// }
/// ```
/// `mode`, `radius` and `dim` are optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub target: TargetFamily,
    pub support: [f64; 2],
    #[serde(default)]
    pub mode: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
    pub proposal: ProposalFamily,
    pub epsilon: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    1
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<(TargetSpec, ProposalSpec)> {
        let support = Interval::new(self.support[0], self.support[1])?;
        let target = TargetSpec::new(self.target.clone(), support, self.mode, self.radius)?;
        let proposal = ProposalSpec::new(self.proposal, self.epsilon, self.dim)?;
        Ok((target, proposal))
    }
}

/// Every structural assumption on a target/proposal pair, evaluated at once.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub target: String,
    pub proposal: String,
    pub epsilon: f64,
    pub radius: f64,
    pub p_theta_at_mode: f64,
    pub normalization_error: f64,
    pub proposal_mass_error: f64,
    pub min_density: f64,
    pub unimodal: UnimodalCheck,
    pub wide_plateau: bool,
    /// `None` when `B_{2ε}(m)` does not fit inside Θ.
    pub near_uniform: Option<NearUniformCheck>,
    pub envelope: EnvelopeReport,
    pub pass: bool,
}

pub fn assumption_report(target: &TargetSpec, proposal: &ProposalSpec) -> Result<AssumptionReport> {
    let unimodal = target.check_unimodal(5001)?;
    let near_uniform = match target.check_near_uniform(proposal.epsilon) {
        Ok(c) => Some(c),
        Err(Error::BallOutsideSupport { .. }) => None,
        Err(e) => return Err(e),
    };
    let envelope = proposal.verify_envelope()?;
    let normalization = simpson(
        |x| target.restricted_density(x),
        target.support.lo,
        target.support.hi,
        10_000,
    );
    let min_density = target.check_positive(5001)?;
    let wide_plateau = unimodal.plateau_width > 2.0 * proposal.epsilon;
    let pass = unimodal.pass && near_uniform.map(|c| c.pass).unwrap_or(false) && envelope.pass && min_density > 0.0;
    Ok(AssumptionReport {
        target: target.family.name().to_string(),
        proposal: proposal.family.name().to_string(),
        epsilon: proposal.epsilon,
        radius: target.radius,
        p_theta_at_mode: target.p_theta_at_mode,
        normalization_error: (target.mass(target.support.lo, target.support.hi, 1 << 12) - 1.0)
            .abs()
            .max((normalization - 1.0).abs()),
        proposal_mass_error: (proposal.total_mass() - 1.0).abs(),
        min_density,
        unimodal,
        wide_plateau,
        near_uniform,
        envelope,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::erf::erf;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    fn gaussian(lo: f64, hi: f64) -> TargetSpec {
        TargetSpec::new(TargetFamily::Gaussian { mean: 0.0, sd: 1.0 }, iv(lo, hi), None, None).unwrap()
    }

    #[test]
    fn gaussian_is_unimodal() {
        let t = gaussian(-1.0, 1.0);
        assert!(t.check_unimodal(101).unwrap().pass);
    }

    #[test]
    fn antimode_fails_left_of_zero() {
        let c = check_unimodal(|x| x * x, iv(-1.0, 1.0), 0.0, 101).unwrap();
        assert!(!c.pass);
        let v = c.first_violation.unwrap();
        assert!(v < 0.0 && v > -1.0);
        assert_relative_eq!(v, -0.98, epsilon = 1e-12);
    }

    #[test]
    fn tent_passes_against_grid_scan_oracle() {
        let tent = TargetFamily::Tent {
            apex: 0.3,
            left: -0.1,
            right: 1.1,
        };
        let t = TargetSpec::new(tent.clone(), iv(0.0, 1.0), None, None).unwrap();
        let c = t.check_unimodal(101).unwrap();
        // oracle: direct scan of the analytic tent on the same grid
        let xs: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let oracle = xs.windows(2).all(|w| {
            let f = |x: f64| if x <= 0.3 { (x + 0.1) / 0.4 } else { (1.1 - x) / 0.8 };
            if w[1] <= 0.3 {
                f(w[1]) >= f(w[0])
            } else {
                f(w[1]) <= f(w[0])
            }
        });
        assert!(oracle);
        assert_eq!(c.pass, oracle);
    }

    #[test]
    fn non_finite_density_is_named() {
        let err = check_unimodal(|x| 1.0 / x, iv(-1.0, 1.0), 0.5, 3).unwrap_err();
        match err {
            Error::NonFiniteDensity { x } => assert_eq!(x, 0.0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn near_uniform_on_uniform_density() {
        let t = TargetSpec::new(TargetFamily::Uniform, iv(-1.0, 1.0), None, None).unwrap();
        let c = t.check_near_uniform(0.3).unwrap();
        assert_eq!(c.ratio, 1.0);
        assert!(c.pass);
    }

    #[test]
    fn near_uniform_gaussian_threshold() {
        let t = gaussian(-1.0, 1.0);
        assert!(t.check_near_uniform(0.17).unwrap().pass);
        assert!(!t.check_near_uniform(0.19).unwrap().pass);
        // closed form: exp(-2 eps^2) = 15/16
        let closed = ((16.0f64 / 15.0).ln() / 2.0).sqrt();
        assert_relative_eq!(closed, 0.1796, epsilon = 1e-4);
        let crit = critical_near_uniform_epsilon(&t, 0.45).unwrap();
        assert!((crit - closed).abs() < 1e-6, "{crit} vs {closed}");
    }

    #[test]
    fn near_uniform_laplace_ratio() {
        let t = TargetSpec::new(
            TargetFamily::Laplace { loc: 0.0, scale: 1.0 },
            iv(-1.0, 1.0),
            None,
            None,
        )
        .unwrap();
        let c = t.check_near_uniform(0.01).unwrap();
        assert_relative_eq!(c.ratio, (-0.02f64).exp(), epsilon = 1e-14);
        assert!(c.pass);
    }

    #[test]
    fn near_uniform_ball_outside_support() {
        let t = gaussian(-0.1, 1.0);
        assert!(matches!(
            t.check_near_uniform(0.1),
            Err(Error::BallOutsideSupport { .. })
        ));
    }

    #[test]
    fn near_uniform_ratio_monotone_in_epsilon() {
        let t = TargetSpec::new(
            TargetFamily::Tent {
                apex: 0.0,
                left: -3.0,
                right: 2.0,
            },
            iv(-1.0, 1.0),
            None,
            None,
        )
        .unwrap();
        let mut last = 1.0;
        for k in 1..20 {
            let r = t.check_near_uniform(0.02 * k as f64).unwrap().ratio;
            assert!(r <= last + 1e-15);
            last = r;
        }
    }

    #[test]
    fn gaussian_normalizer_matches_erf() {
        let t = gaussian(-1.5, 2.0);
        // sqrt(2π)·(Φ(2) − Φ(−1.5)), 30-digit reference value
        let exact = 2.282_141_330_988_625;
        assert_relative_eq!(t.normalizer, exact, max_relative = 1e-13);
        let via_erf = (2.0 * PI).sqrt() * 0.5 * (erf(2.0 / 2f64.sqrt()) + erf(1.5 / 2f64.sqrt()));
        assert_relative_eq!(t.normalizer, via_erf, max_relative = 1e-11);
    }

    #[test]
    fn laplace_and_tent_normalizers_closed_form() {
        let t = TargetSpec::new(
            TargetFamily::Laplace { loc: 0.2, scale: 0.5 },
            iv(-1.0, 1.0),
            None,
            None,
        )
        .unwrap();
        let exact = 0.5 * (1.0 - (-1.2f64 / 0.5).exp()) + 0.5 * (1.0 - (-0.8f64 / 0.5).exp());
        assert_relative_eq!(t.normalizer, exact, max_relative = 1e-12);
        let tent = TargetSpec::new(
            TargetFamily::Tent {
                apex: 0.3,
                left: 0.0,
                right: 1.0,
            },
            iv(0.0, 1.0),
            None,
            None,
        )
        .unwrap();
        assert_relative_eq!(tent.normalizer, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn support_must_fit_in_radius() {
        let r = TargetSpec::new(TargetFamily::Uniform, iv(-1.0, 1.0), Some(0.0), Some(0.5));
        assert!(r.is_err());
        let t = TargetSpec::new(TargetFamily::Uniform, iv(-1.0, 1.0), Some(0.5), None).unwrap();
        assert_eq!(t.radius, 1.5);
    }

    #[test]
    fn uniform_ball_envelope() {
        let eps = 0.2;
        let p = ProposalSpec::new(ProposalFamily::UniformBall, eps, 1).unwrap();
        assert_eq!(p.envelope.delta1, 1.0 / (2.0 * eps));
        assert!(p.envelope.c1 >= 1.0 / (2.0 * eps));
        assert!(p.check_envelope(&p.envelope).is_empty());
    }

    #[test]
    fn gaussian_envelope_constants() {
        let eps = 0.3;
        let p = ProposalSpec::new(ProposalFamily::Gaussian, eps, 1).unwrap();
        let s = eps * (2.0 * PI).sqrt();
        assert_relative_eq!(p.envelope.delta1, (-0.5f64).exp() / s, max_relative = 1e-14);
        // sup_r exp(-r^2/2eps^2 + r/eps) is attained at r = eps
        assert_relative_eq!(p.envelope.c1, 0.5f64.exp() / s, max_relative = 1e-14);
    }

    #[test]
    fn heavy_tail_fails_envelope() {
        let eps = 1.0;
        let cauchy = |r: f64| 1.0 / (PI * eps * (1.0 + (r / eps).powi(2)));
        let rep = certify_envelope(cauchy, eps, 1.0).unwrap();
        assert!(!rep.pass);
        assert!(!rep.violations.is_empty());
        let upper: Vec<_> = rep
            .violations
            .iter()
            .filter(|v| v.side == EnvelopeSide::Upper)
            .collect();
        assert!(upper.windows(2).all(|w| w[1].ratio > w[0].ratio));
        assert!(upper.last().unwrap().radius > 49.0);
    }

    #[test]
    fn proposals_integrate_to_one() {
        for fam in [
            ProposalFamily::UniformBall,
            ProposalFamily::Gaussian,
            ProposalFamily::Laplace,
        ] {
            for dim in 1..=3 {
                let p = ProposalSpec::new(fam, 0.7, dim).unwrap();
                assert!(
                    (p.total_mass() - 1.0).abs() < 1e-8,
                    "{fam:?} d={dim}: {}",
                    p.total_mass()
                );
            }
        }
    }

    #[test]
    fn increment_cdf_matches_sampler() {
        for fam in [
            ProposalFamily::UniformBall,
            ProposalFamily::Gaussian,
            ProposalFamily::Laplace,
        ] {
            let p = ProposalSpec::new(fam, 0.4, 1).unwrap();
            for &u in &[0.01, 0.2, 0.5, 0.77, 0.99] {
                let z = p.sample_increment(u);
                assert_relative_eq!(p.increment_cdf(z), u, epsilon = 1e-10);
            }
            assert_relative_eq!(p.increment_mass(-1e3, 1e3), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn model_config_round_trip() {
        let json = r#"{"target": {"family": "gaussian", "params": {"mean": 0.0, "sd": 1.0}},
                       "support": [-1.0, 1.0], "proposal": "uniform-ball", "epsilon": 0.1}"#;
        let cfg = ModelConfig::from_json(json).unwrap();
        let (t, p) = cfg.build().unwrap();
        assert_eq!(t.mode, 0.0);
        assert_eq!(p.dim, 1);
        let uni = r#"{"target": {"family": "uniform"}, "support": [0.0, 2.0],
                      "proposal": "laplace", "epsilon": 0.1}"#;
        let (t, _) = ModelConfig::from_json(uni).unwrap().build().unwrap();
        assert_eq!(t.mode, 1.0);
    }

    #[test]
    fn assumption_report_for_shipped_pair() {
        let t = gaussian(-1.0, 1.0);
        let p = ProposalSpec::new(ProposalFamily::Gaussian, 0.1, 1).unwrap();
        let rep = assumption_report(&t, &p).unwrap();
        assert!(rep.pass);
        assert!(rep.normalization_error < 1e-8);
        assert!(!rep.wide_plateau);
    }
}
