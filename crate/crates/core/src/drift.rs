//! Lyapunov drift: `(PV)(x)`, fitted constants `(γ, K)`, sublevel sets, and
//! the lower size condition on Θ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

use crate::kernel::MhKernel;
use crate::model::Interval;
use crate::quad::simpson_pieces;
use crate::{Error, Result};

/// Simpson intervals per smooth piece when integrating against `P(x, ·)`.
pub const DRIFT_INTERVALS: usize = 512;

/// Resolution of the γ scan in [`fit_drift`].
pub const GAMMA_STEP: f64 = 0.01;

/// Relative slack allowed when re-verifying a certificate.
pub const VERIFY_TOLERANCE: f64 = 1e-6;

/// A Lyapunov function `V : ℝ → [0, ∞)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Lyapunov {
    Constant {
        value: f64,
    },
    /// `offset + (x − center)²`
    Quadratic {
        center: f64,
        offset: f64,
    },
    /// `offset + |x − center|`
    Absolute {
        center: f64,
        offset: f64,
    },
    /// `exp(rate·|x − center|)`
    Exponential {
        center: f64,
        rate: f64,
    },
    /// `slope·x + intercept`; not nonnegative on ℝ, only for drift evaluation.
    Linear {
        slope: f64,
        intercept: f64,
    },
}

impl Lyapunov {
    /// The default for compact Θ: `1 + (x − center)²`.
    pub fn quadratic(center: f64) -> Self {
        Lyapunov::Quadratic { center, offset: 1.0 }
    }

    /// `exp(s|x − center|)` with `s = c2 / (2ε)`, finite under
    /// sub-exponential proposal tails.
    pub fn exponential_for(center: f64, c2: f64, epsilon: f64) -> Self {
        Lyapunov::Exponential {
            center,
            rate: c2 / (2.0 * epsilon),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Lyapunov::Constant { value } => value,
            Lyapunov::Quadratic { center, offset } => offset + (x - center) * (x - center),
            Lyapunov::Absolute { center, offset } => offset + (x - center).abs(),
            Lyapunov::Exponential { center, rate } => (rate * (x - center).abs()).exp(),
            Lyapunov::Linear { slope, intercept } => slope * x + intercept,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Lyapunov::Constant { value } => format!("constant({value})"),
            Lyapunov::Quadratic { center, offset } => format!("{offset}+(x-{center})^2"),
            Lyapunov::Absolute { center, offset } => format!("{offset}+|x-{center}|"),
            Lyapunov::Exponential { center, rate } => format!("exp({rate}|x-{center}|)"),
            Lyapunov::Linear { slope, intercept } => format!("{slope}x+{intercept}"),
        }
    }

    /// Points where `V` is not smooth.
    fn kinks(&self) -> Vec<f64> {
        match *self {
            Lyapunov::Absolute { center, .. } | Lyapunov::Exponential { center, .. } => vec![center],
            _ => Vec::new(),
        }
    }
}

fn finite_v(v: &Lyapunov, y: f64) -> Result<f64> {
    let value = v.eval(y);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLyapunov { y })
    }
}

/// `(PV)(x) = ∫ α(x,y) q(x,y) V(y) dy + (1 − ∫ α q dy)·V(x)`.
///
/// Evaluated as `V(x) + ∫ α q (V(y) − V(x)) dy`, so constants are preserved
/// exactly.
pub fn apply_kernel(kernel: &MhKernel, v: &Lyapunov, x: f64) -> Result<f64> {
    let vx = finite_v(v, x)?;
    let (lo, hi, mut knots) = kernel.move_window(x);
    finite_v(v, lo)?;
    finite_v(v, hi)?;
    knots.extend(v.kinks());
    // α·q is evaluated inside the closure; the first error wins
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let integral = simpson_pieces(
        |y| {
            let m = match kernel.move_density(x, y) {
                Ok(m) => m,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    return 0.0;
                }
            };
            if m == 0.0 {
                return 0.0;
            }
            let vy = v.eval(y);
            if !vy.is_finite() {
                failure.borrow_mut().get_or_insert(Error::NonFiniteLyapunov { y });
                return 0.0;
            }
            m * (vy - vx)
        },
        lo,
        hi,
        &knots,
        DRIFT_INTERVALS,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(vx + integral)
}

/// `(PV)(x_i)` at every grid point, in parallel.
pub fn apply_kernel_on_grid(kernel: &MhKernel, v: &Lyapunov, grid: &[f64]) -> Result<Vec<f64>> {
    grid.par_iter().map(|&x| apply_kernel(kernel, v, x)).collect()
}

/// Fitted drift constants for `(PV)(x) ≤ γV(x) + K`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftCertificate {
    pub lyapunov: Lyapunov,
    pub gamma: f64,
    pub k: f64,
    /// `4K / (1 − γ)`.
    pub r1: f64,
    /// `8(4K/(1−γ)² + Kτ/(1−γ))`, set by [`DriftCertificate::finalize`].
    pub r2: Option<f64>,
    pub tau: Option<u64>,
    pub grid: Vec<f64>,
    pub seed: Option<u64>,
}

/// JSON form of a certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    #[serde(rename = "V_name")]
    pub v_name: String,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: Option<f64>,
    pub tau: Option<u64>,
    pub grid_n: usize,
    pub seed: Option<u64>,
}

pub fn inner_radius(gamma: f64, k: f64) -> f64 {
    4.0 * k / (1.0 - gamma)
}

/// `8(4K/(1−γ)² + Kτ/(1−γ))`, written as `8·(R1/(1−γ) + Kτ/(1−γ))`.
pub fn outer_radius(gamma: f64, k: f64, tau: u64) -> f64 {
    8.0 * escape_numerator(gamma, k, tau)
}

/// `R1/(1−γ) + Kτ/(1−γ)`, the sum bounding `Σ_k E V(X_k)` from `S(R1)`.
pub fn escape_numerator(gamma: f64, k: f64, tau: u64) -> f64 {
    let g = 1.0 - gamma;
    inner_radius(gamma, k) / g + k * tau as f64 / g
}

impl DriftCertificate {
    /// Fixes the mixing time used for `R2`.
    pub fn finalize(&mut self, tau: u64) -> Result<()> {
        if tau == 0 {
            return Err(Error::invalid("tau must be at least 1"));
        }
        self.tau = Some(tau);
        self.r2 = Some(outer_radius(self.gamma, self.k, tau));
        Ok(())
    }

    pub fn is_finalized(&self) -> bool {
        self.r2.is_some()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Largest relative excess of `(PV) − γV − K` over `γV + K` on `grid`.
    pub fn worst_violation(&self, kernel: &MhKernel, grid: &[f64]) -> Result<f64> {
        let pv = apply_kernel_on_grid(kernel, &self.lyapunov, grid)?;
        Ok(grid
            .iter()
            .zip(&pv)
            .map(|(&x, &p)| {
                let rhs = self.gamma * self.lyapunov.eval(x) + self.k;
                (p - rhs) / rhs.abs().max(1e-300)
            })
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Re-checks the inequality on a grid `factor` times finer than the
    /// fitting grid (linear refinement between neighbouring points).
    pub fn verify_refined(&self, kernel: &MhKernel, factor: usize) -> Result<bool> {
        let fine = refine_grid(&self.grid, factor);
        Ok(self.worst_violation(kernel, &fine)? <= VERIFY_TOLERANCE)
    }

    pub fn record(&self) -> DriftRecord {
        DriftRecord {
            v_name: self.lyapunov.name(),
            gamma: self.gamma,
            k: self.k,
            r1: self.r1,
            r2: self.r2,
            tau: self.tau,
            grid_n: self.grid.len(),
            seed: self.seed,
        }
    }
}

/// Inserts `factor − 1` equally spaced points inside each grid gap.
pub fn refine_grid(grid: &[f64], factor: usize) -> Vec<f64> {
    let factor = factor.max(1);
    let mut out = Vec::with_capacity(grid.len() * factor);
    for w in grid.windows(2) {
        for j in 0..factor {
            out.push(w[0] + (w[1] - w[0]) * j as f64 / factor as f64);
        }
    }
    out.extend(grid.last().copied());
    out
}

/// `n` equally spaced points covering `[lo, hi]`, endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Scans γ ∈ {0.01, …, 0.99} with `K(γ) = max_i [(PV)(x_i) − γV(x_i)]⁺`,
/// keeping the γ with the smallest `K/(1−γ)` (ties to the smaller γ).
pub fn fit_drift(kernel: &MhKernel, v: &Lyapunov, grid: &[f64]) -> Result<DriftCertificate> {
    if grid.is_empty() {
        return Err(Error::invalid("drift grid is empty"));
    }
    let vs: Vec<f64> = grid.iter().map(|&x| finite_v(v, x)).collect::<Result<_>>()?;
    if let Some(i) = vs.iter().position(|&value| value < 0.0) {
        return Err(Error::invalid(format!(
            "Lyapunov function is negative at x = {}",
            grid[i]
        )));
    }
    let pv = apply_kernel_on_grid(kernel, v, grid)?;
    Ok(fit_from_values(v.clone(), grid.to_vec(), &vs, &pv))
}

fn fit_from_values(lyapunov: Lyapunov, grid: Vec<f64>, vs: &[f64], pv: &[f64]) -> DriftCertificate {
    let steps = (1.0 / GAMMA_STEP).round() as usize;
    let mut best: Option<(f64, f64, f64)> = None;
    for j in 1..steps {
        let gamma = j as f64 * GAMMA_STEP;
        let k = vs
            .iter()
            .zip(pv)
            .map(|(&v, &p)| (p - gamma * v).max(0.0))
            .fold(0.0, f64::max);
        let score = k / (1.0 - gamma);
        if best.is_none_or(|(_, _, s)| score < s) {
            best = Some((gamma, k, score));
        }
    }
    let (gamma, k, _) = best.expect("gamma scan is nonempty");
    DriftCertificate {
        lyapunov,
        gamma,
        k,
        r1: inner_radius(gamma, k),
        r2: None,
        tau: None,
        grid,
        seed: None,
    }
}

/// Grid-resolved `S(R) = {x : V(x) ≤ R}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sublevel {
    pub lo: f64,
    pub hi: f64,
    /// The set reaches an end of the grid and may continue beyond it.
    pub truncated: bool,
}

/// Hull of the grid points with `V ≤ R`, with endpoints refined by linear
/// interpolation of `V − R` inside the bracketing cell. `None` when no grid
/// point qualifies.
pub fn sublevel_set(v: &Lyapunov, r: f64, grid: &[f64]) -> Result<Option<Sublevel>> {
    if !(r >= 0.0) {
        return Err(Error::invalid("sublevel R must be nonnegative"));
    }
    let vs: Vec<f64> = grid.iter().map(|&x| v.eval(x)).collect();
    let Some(first) = vs.iter().position(|&value| value <= r) else {
        return Ok(None);
    };
    let last = vs.iter().rposition(|&value| value <= r).expect("nonempty");
    let cross = |i: usize, j: usize| {
        // V(x_i) > R ≥ V(x_j)
        let t = (vs[i] - r) / (vs[i] - vs[j]);
        grid[i] + t * (grid[j] - grid[i])
    };
    let lo = if first > 0 { cross(first - 1, first) } else { grid[0] };
    let hi = if last + 1 < grid.len() {
        cross(last + 1, last)
    } else {
        grid[last]
    };
    Ok(Some(Sublevel {
        lo,
        hi,
        truncated: first == 0 || last + 1 == grid.len(),
    }))
}

/// Inputs to the lower size condition on Θ besides the certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaScale {
    /// Calibration constant multiplying `ε⁻²δ1⁻¹L³p_Θ(m)`.
    pub c: f64,
    pub epsilon: f64,
    pub delta1: f64,
    pub radius: f64,
    pub p_mode: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaCheck {
    pub pass: bool,
    pub required_level: f64,
    pub sublevel: Option<Sublevel>,
    /// An endpoint of the required sublevel set lying outside Θ.
    pub violated_endpoint: Option<f64>,
}

/// `(8/(1−γ))·(4K/(1−γ) + K·C·ε⁻²·δ1⁻¹·L³·p_Θ(m))`.
pub fn required_level(gamma: f64, k: f64, s: &ThetaScale) -> f64 {
    let g = 1.0 - gamma;
    let inner = s.c * s.radius.powi(3) * s.p_mode / (s.epsilon * s.epsilon * s.delta1);
    8.0 / g * (4.0 * k / g + k * inner)
}

/// Passes iff the required sublevel set of `V` (resolved on `grid`) lies in Θ.
pub fn check_theta_condition(
    theta: &Interval,
    cert: &DriftCertificate,
    scale: &ThetaScale,
    grid: &[f64],
) -> Result<ThetaCheck> {
    let level = required_level(cert.gamma, cert.k, scale);
    let sublevel = sublevel_set(&cert.lyapunov, level, grid)?;
    let violated_endpoint = match sublevel {
        None => None,
        Some(s) if s.lo < theta.lo => Some(s.lo),
        Some(s) if s.hi > theta.hi => Some(s.hi),
        Some(s) if s.truncated => Some(if s.lo <= grid[0] { s.lo } else { s.hi }),
        Some(_) => None,
    };
    Ok(ThetaCheck {
        pass: violated_endpoint.is_none(),
        required_level: level,
        sublevel,
        violated_endpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProposalFamily, ProposalSpec, TargetFamily, TargetSpec};
    use approx::assert_relative_eq;

    fn gaussian_iid() -> MhKernel {
        let t = TargetSpec::new(
            TargetFamily::Gaussian { mean: 0.0, sd: 1.0 },
            Interval::new(-12.0, 12.0).unwrap(),
            None,
            None,
        )
        .unwrap();
        MhKernel::independence(t)
    }

    fn uniform_rw(eps: f64) -> MhKernel {
        let t = TargetSpec::new(
            TargetFamily::Uniform,
            Interval::new(-1.0, 1.0).unwrap(),
            Some(0.0),
            None,
        )
        .unwrap();
        let p = ProposalSpec::new(ProposalFamily::UniformBall, eps, 1).unwrap();
        MhKernel::restricted(t, p).unwrap()
    }

    #[test]
    fn constants_are_preserved() {
        let v = Lyapunov::Constant { value: 1.0 };
        for k in [gaussian_iid(), uniform_rw(0.3)] {
            for x in [-0.9, 0.0, 0.4, 1.0] {
                assert_eq!(apply_kernel(&k, &v, x).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn iid_gaussian_second_moment() {
        let k = gaussian_iid();
        let v = Lyapunov::quadratic(0.0);
        for x in [-3.0, -0.5, 0.0, 2.0, 7.0] {
            assert_relative_eq!(apply_kernel(&k, &v, x).unwrap(), 2.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn interior_linear_is_harmonic() {
        let k = uniform_rw(0.2);
        let v = Lyapunov::Linear {
            slope: 1.0,
            intercept: 0.0,
        };
        for x in [-0.7, -0.1, 0.0, 0.33, 0.79] {
            assert!((apply_kernel(&k, &v, x).unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_pulls_inward() {
        // at the right end only leftward moves are accepted
        let k = uniform_rw(0.2);
        let v = Lyapunov::Linear {
            slope: 1.0,
            intercept: 0.0,
        };
        // E[x + Δ; Δ ∈ (−ε, 0)] + P(Δ > 0)·x = x − ε/4
        assert_relative_eq!(apply_kernel(&k, &v, 1.0).unwrap(), 1.0 - 0.05, epsilon = 1e-12);
    }

    #[test]
    fn zero_function_fit() {
        let k = uniform_rw(0.3);
        let cert = fit_drift(&k, &Lyapunov::Constant { value: 0.0 }, &uniform_grid(-1.0, 1.0, 33)).unwrap();
        assert_eq!((cert.gamma, cert.k), (0.01, 0.0));
    }

    #[test]
    fn iid_gaussian_fit() {
        let k = gaussian_iid();
        let grid = uniform_grid(-12.0, 12.0, 97);
        let cert = fit_drift(&k, &Lyapunov::quadratic(0.0), &grid).unwrap();
        assert_eq!(cert.gamma, 0.01);
        // V ≥ 1 with V(0) = 1 on the grid, so K = 2 − 0.01
        assert_relative_eq!(cert.k, 1.99, max_relative = 1e-8);
        assert!(cert.k <= 2.0);
    }

    #[test]
    fn restricted_fit_reverifies_finer() {
        let k = uniform_rw(0.25);
        let cert = fit_drift(&k, &Lyapunov::quadratic(0.0), &uniform_grid(-1.0, 1.0, 65)).unwrap();
        assert!(cert.verify_refined(&k, 4).unwrap());
        assert!(cert.worst_violation(&k, &cert.grid).unwrap() <= 1e-8);
    }

    #[test]
    fn radii() {
        let mut cert = fit_from_values(Lyapunov::quadratic(0.0), vec![0.0], &[1.0], &[1.5]);
        assert_relative_eq!(cert.r1, 4.0 * cert.k / (1.0 - cert.gamma));
        cert.finalize(10).unwrap();
        let g = 1.0 - cert.gamma;
        assert_relative_eq!(
            cert.r2.unwrap(),
            8.0 * (4.0 * cert.k / (g * g) + cert.k * 10.0 / g),
            max_relative = 1e-15
        );
        assert!(cert.r2.unwrap() > cert.r1);
        assert!(cert.finalize(0).is_err());
    }

    #[test]
    fn record_json_keys() {
        let mut cert = fit_from_values(Lyapunov::quadratic(0.0), vec![0.0, 1.0], &[1.0, 2.0], &[1.5, 2.5]);
        cert.finalize(3).unwrap();
        let json = serde_json::to_value(cert.with_seed(9).record()).unwrap();
        for key in ["V_name", "gamma", "K", "R1", "R2", "tau", "grid_n", "seed"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["grid_n"], 2);
    }

    #[test]
    fn sublevel_examples() {
        let grid = uniform_grid(-5.0, 5.0, 1001);
        let h = 0.01;
        let sq = Lyapunov::Quadratic {
            center: 0.0,
            offset: 0.0,
        };
        let s = sublevel_set(&sq, 4.0, &grid).unwrap().unwrap();
        assert!((s.lo + 2.0).abs() <= h && (s.hi - 2.0).abs() <= h);
        assert!(!s.truncated);
        let s = sublevel_set(&sq, 0.0, &grid).unwrap().unwrap();
        assert!(s.lo.abs() <= h && s.hi.abs() <= h);
        let abs = Lyapunov::Absolute {
            center: 0.0,
            offset: 1.0,
        };
        assert_eq!(sublevel_set(&abs, 0.5, &grid).unwrap(), None);
        assert!(sublevel_set(&abs, -1.0, &grid).is_err());
        assert!(sublevel_set(&abs, 100.0, &grid).unwrap().unwrap().truncated);
    }

    fn cert(gamma: f64, k: f64) -> DriftCertificate {
        DriftCertificate {
            lyapunov: Lyapunov::quadratic(0.0),
            gamma,
            k,
            r1: inner_radius(gamma, k),
            r2: None,
            tau: None,
            grid: Vec::new(),
            seed: None,
        }
    }

    #[test]
    fn theta_condition_level() {
        let s = ThetaScale {
            c: 1.0,
            epsilon: 0.5,
            delta1: 1.0,
            radius: 1.0,
            p_mode: 0.5,
        };
        assert_relative_eq!(required_level(0.5, 1.0, &s), 160.0, max_relative = 1e-14);
        assert_eq!(required_level(0.5, 0.0, &s), 0.0);
    }

    #[test]
    fn theta_condition_containment() {
        let grid = uniform_grid(-50.0, 50.0, 10001);
        let s = ThetaScale {
            c: 1.0,
            epsilon: 0.5,
            delta1: 1.0,
            radius: 1.0,
            p_mode: 0.5,
        };
        let theta = Interval::new(-1.0, 1.0).unwrap();
        // K = 0: empty required set, trivially contained
        assert!(check_theta_condition(&theta, &cert(0.5, 0.0), &s, &grid).unwrap().pass);
        // level 160 needs |x| ≤ √159 ≈ 12.6
        let small = check_theta_condition(&theta, &cert(0.5, 1.0), &s, &grid).unwrap();
        assert!(!small.pass);
        assert!(small.violated_endpoint.unwrap() < -12.0);
        let big = Interval::new(-13.0, 13.0).unwrap();
        assert!(check_theta_condition(&big, &cert(0.5, 1.0), &s, &grid).unwrap().pass);
    }

    #[test]
    fn nonfinite_lyapunov_is_an_error() {
        let k = uniform_rw(0.3);
        let v = Lyapunov::Exponential { center: 0.0, rate: 1e4 };
        assert!(matches!(
            apply_kernel(&k, &v, 0.0),
            Err(Error::NonFiniteLyapunov { .. })
        ));
    }
}
