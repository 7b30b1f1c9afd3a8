//! The Metropolis-Hastings kernel, its restriction to Θ, and the forward map
//! `F(x, Δ, U) = x + Δ·1{U < α(x, x + Δ)}`.

use rand::{Rng, RngCore};
use std::sync::Arc;

use crate::model::{ProposalSpec, TargetSpec};
use crate::rng::open_unit;
use crate::{Error, Result};

/// How candidate moves are generated.
#[derive(Clone, Debug)]
pub enum Proposal {
    /// Isotropic random walk `y = x + Δ`, `Δ ~ q`.
    RandomWalk(ProposalSpec),
    /// Independent draws from the restricted target `p_Θ`. Every move is
    /// accepted, so the chain is iid sampling from μ_Θ.
    Independence,
}

/// One step's worth of randomness: the increment and the acceptance uniform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Innovation {
    pub delta: f64,
    pub u: f64,
}

#[derive(Clone, Debug)]
pub struct MhKernel {
    target: TargetSpec,
    proposal: Proposal,
    restricted: bool,
    sampler: Option<Arc<InverseCdf>>,
}

impl MhKernel {
    /// Random-walk MH restricted to the target's support Θ.
    pub fn restricted(target: TargetSpec, proposal: ProposalSpec) -> Result<Self> {
        Self::random_walk(target, proposal, true)
    }

    /// Random-walk MH on ℝ targeting the family's untruncated density. The
    /// target's support is only used as the default evaluation window.
    pub fn unrestricted(target: TargetSpec, proposal: ProposalSpec) -> Result<Self> {
        Self::random_walk(target, proposal, false)
    }

    fn random_walk(target: TargetSpec, proposal: ProposalSpec, restricted: bool) -> Result<Self> {
        if proposal.dim != 1 {
            return Err(Error::invalid("MH kernels are one-dimensional"));
        }
        Ok(MhKernel {
            target,
            proposal: Proposal::RandomWalk(proposal),
            restricted,
            sampler: None,
        })
    }

    /// Independence sampler with proposal `p_Θ` (always restricted).
    pub fn independence(target: TargetSpec) -> Self {
        let sampler = Arc::new(InverseCdf::new(&target));
        MhKernel {
            target,
            proposal: Proposal::Independence,
            restricted: true,
            sampler: Some(sampler),
        }
    }

    /// The same kernel restricted to a new interval Θ.
    pub fn restrict_to(&self, theta: crate::model::Interval) -> Result<Self> {
        let target = self.target.with_support(theta)?;
        match &self.proposal {
            Proposal::RandomWalk(p) => Self::restricted(target, p.clone()),
            Proposal::Independence => Ok(Self::independence(target)),
        }
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn proposal(&self) -> &Proposal {
        &self.proposal
    }

    pub fn random_walk_proposal(&self) -> Option<&ProposalSpec> {
        match &self.proposal {
            Proposal::RandomWalk(p) => Some(p),
            Proposal::Independence => None,
        }
    }

    pub fn is_restricted(&self) -> bool {
        self.restricted
    }

    fn check_state(&self, x: f64) -> Result<()> {
        if self.restricted && !self.target.contains(x) {
            return Err(Error::OutsideSupport {
                x,
                a: self.target.support.lo,
                b: self.target.support.hi,
            });
        }
        Ok(())
    }

    /// `α(x, y) = 1 ∧ p(y)q(y,x) / (p(x)q(x,y))`; zero for proposals off Θ
    /// when restricted. Boundary points of Θ count as inside.
    pub fn acceptance(&self, x: f64, y: f64) -> Result<f64> {
        self.check_state(x)?;
        if self.restricted && !self.target.contains(y) {
            return Ok(0.0);
        }
        match self.proposal {
            Proposal::Independence => Ok(1.0),
            Proposal::RandomWalk(_) => {
                let lx = self.target.log_density(x);
                if lx == f64::NEG_INFINITY {
                    return Err(Error::OutsideSupport {
                        x,
                        a: self.target.support.lo,
                        b: self.target.support.hi,
                    });
                }
                let ly = self.target.log_density(y);
                Ok((ly - lx).exp().min(1.0))
            }
        }
    }

    /// `F(x, Δ, U)`.
    pub fn forward_map(&self, x: f64, delta: f64, u: f64) -> Result<f64> {
        let y = x + delta;
        Ok(if u < self.acceptance(x, y)? { y } else { x })
    }

    /// Draws `(Δ, U)`, consuming exactly two `u64`s from `rng`.
    pub fn draw_innovation<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Innovation {
        let v = open_unit(rng);
        let delta = match &self.proposal {
            Proposal::RandomWalk(p) => p.sample_increment(v),
            Proposal::Independence => self.sampler.as_ref().expect("independence sampler").sample(v) - x,
        };
        let u: f64 = rng.random();
        Innovation { delta, u }
    }

    /// One MH transition from `x`.
    pub fn step<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        self.check_state(x)?;
        let Innovation { delta, u } = self.draw_innovation(x, rng);
        self.forward_map(x, delta, u)
    }

    /// Sub-density of accepted moves, `α(x,y)·q(x,y)`.
    pub fn move_density(&self, x: f64, y: f64) -> Result<f64> {
        let a = self.acceptance(x, y)?;
        if a == 0.0 {
            return Ok(0.0);
        }
        Ok(a * match &self.proposal {
            Proposal::RandomWalk(p) => p.density(x, y),
            Proposal::Independence => self.target.restricted_density(y),
        })
    }

    /// Integration window for functionals of `P(x, ·)` and the knots inside
    /// it where `α(x,·)q(x,·)` is not smooth.
    pub fn move_window(&self, x: f64) -> (f64, f64, Vec<f64>) {
        let mut knots = self.target.breakpoints();
        let (mut lo, mut hi) = match &self.proposal {
            Proposal::RandomWalk(p) => {
                knots.push(x);
                for b in p.breakpoints() {
                    knots.push(x - b);
                    knots.push(x + b);
                }
                let w = crate::model::ENVELOPE_GRID_MAX * p.epsilon;
                (x - w, x + w)
            }
            Proposal::Independence => (self.target.support.lo, self.target.support.hi),
        };
        if self.restricted {
            lo = lo.max(self.target.support.lo);
            hi = hi.min(self.target.support.hi);
        } else {
            knots.push(self.target.support.lo);
            knots.push(self.target.support.hi);
        }
        (lo, hi, knots)
    }
}

/// Tabulated inverse CDF of `p_Θ` for the independence sampler.
#[derive(Debug)]
struct InverseCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdf {
    const POINTS: usize = 4097;

    fn new(target: &TargetSpec) -> Self {
        let n = Self::POINTS;
        let (a, b) = (target.support.lo, target.support.hi);
        let xs: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + target.mass(xs[i - 1], xs[i], 8);
        }
        let total = cdf[n - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        InverseCdf { xs, cdf }
    }

    fn sample(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.xs.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.xs[i - 1] + w * (self.xs[i] - self.xs[i - 1])
    }
}
