//! Exact finite-state twin of a 1D kernel.
//!
//! Θ is cut into `n` equal cells. The chain proposes cell `j` from cell `i`
//! with the proposal mass of the cell offset and accepts with the discrete MH
//! ratio of cell masses, so the matrix is exactly reversible with respect to
//! the cell masses of `p_Θ`. Rejected mass sits on the diagonal, computed as
//! `1 − Σ_{j≠i} P_ij` so rows sum to one to rounding.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::VecDeque;
use std::io::{BufRead, Write};

use crate::kernel::{MhKernel, Proposal};
use crate::{Error, Result};

/// Largest state space handed to the dense symmetric eigensolver.
pub const MAX_DENSE_STATES: usize = 4096;

const CELL_INTERVALS: usize = 64;

#[derive(Clone, Debug)]
pub struct DiscretizedChain {
    grid: Vec<f64>,
    cell_width: f64,
    p: DMatrix<f64>,
    pi: DVector<f64>,
}

/// Maximum deviations from the chain invariants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InvariantReport {
    pub row_sum_error: f64,
    pub min_entry: f64,
    pub stationarity_error: f64,
    pub detailed_balance_error: f64,
}

/// Starting point of a TV curve.
#[derive(Clone, Debug)]
pub enum Start {
    State(usize),
    Distribution(Vec<f64>),
}

#[derive(Clone, Debug)]
pub enum StartSet {
    All,
    Subset(Vec<usize>),
}

/// How the worst-case TV distance is compared with the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    /// `TV < threshold`, as in the mixing time τ.
    Below,
    /// `TV ≤ threshold`, as in the restricted mixing time τ_A.
    AtMost,
}

impl Comparison {
    fn holds(self, tv: f64, threshold: f64) -> bool {
        match self {
            Comparison::Below => tv < threshold,
            Comparison::AtMost => tv <= threshold,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PathBound {
    /// `1/B`, a lower bound on the spectral gap.
    pub gap_lower: f64,
    /// The congestion constant `B`.
    pub congestion: f64,
    /// Left state of the most congested edge.
    pub worst_edge: usize,
}

impl DiscretizedChain {
    /// Discretizes a restricted 1D kernel on `n` cells of Θ.
    pub fn build(kernel: &MhKernel, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("discretization needs at least 2 states"));
        }
        if !kernel.is_restricted() {
            return Err(Error::invalid(
                "only kernels restricted to a bounded interval can be discretized",
            ));
        }
        let target = kernel.target();
        let (a, b) = (target.support.lo, target.support.hi);
        let h = (b - a) / n as f64;
        let grid: Vec<f64> = (0..n).map(|i| a + (i as f64 + 0.5) * h).collect();
        let cell = |i: usize| (a + i as f64 * h, if i + 1 == n { b } else { a + (i + 1) as f64 * h });

        let weights: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (lo, hi) = cell(i);
                target.mass(lo, hi, CELL_INTERVALS)
            })
            .collect();
        if let Some(i) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!(
                "cell {i} around x = {} has no target mass",
                grid[i]
            )));
        }
        let total: f64 = weights.iter().sum();

        let rows: Vec<Vec<f64>> = match kernel.proposal() {
            Proposal::RandomWalk(q) => {
                // proposal mass by cell offset; symmetric by construction
                let offset_mass: Vec<f64> = (0..n)
                    .map(|d| q.increment_mass((d as f64 - 0.5) * h, (d as f64 + 0.5) * h))
                    .collect();
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let mut row = vec![0.0; n];
                        let wi = weights[i];
                        for (j, r) in row.iter_mut().enumerate() {
                            if j != i {
                                let flow = offset_mass[i.abs_diff(j)] * wi.min(weights[j]);
                                *r = flow / wi;
                            }
                        }
                        let off: f64 = row.iter().sum();
                        row[i] = 1.0 - off;
                        row
                    })
                    .collect()
            }
            Proposal::Independence => (0..n)
                .map(|i| {
                    let mut row: Vec<f64> = weights.iter().map(|w| w / total).collect();
                    let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
                    row[i] = 1.0 - off;
                    row
                })
                .collect(),
        };
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let p = DMatrix::from_row_slice(n, n, &flat);
        assert!(
            p.iter().all(|&v| v >= -1e-15),
            "discretization produced negative transition mass"
        );
        let pi = DVector::from_iterator(n, weights.iter().map(|w| w / total));
        Ok(DiscretizedChain {
            grid,
            cell_width: h,
            p,
            pi,
        })
    }

    /// Birth-death MH chain on an ordered grid: propose a neighbour with
    /// probability 1/2 each side, accept with `1 ∧ w_j / w_i`.
    pub fn birth_death(grid: Vec<f64>, weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n < 2 || grid.len() != n {
            return Err(Error::invalid(
                "birth-death chain needs matching grid and weights of length >= 2",
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("birth-death weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut off = 0.0;
            for j in [i.wrapping_sub(1), i + 1] {
                if j < n {
                    let v = 0.5 * weights[i].min(weights[j]) / weights[i];
                    p[(i, j)] = v;
                    off += v;
                }
            }
            p[(i, i)] = 1.0 - off;
        }
        let h = if n > 1 { grid[1] - grid[0] } else { 1.0 };
        Ok(DiscretizedChain {
            grid,
            cell_width: h,
            p,
            pi: DVector::from_iterator(n, weights.iter().map(|w| w / total)),
        })
    }

    /// Wraps an explicit stochastic matrix and stationary vector.
    pub fn from_parts(grid: Vec<f64>, p: DMatrix<f64>, pi: DVector<f64>) -> Result<Self> {
        let n = p.nrows();
        if n < 1 || p.ncols() != n || pi.len() != n || grid.len() != n {
            return Err(Error::invalid("matrix, grid and stationary vector sizes disagree"));
        }
        let h = if n > 1 { grid[1] - grid[0] } else { 1.0 };
        let chain = DiscretizedChain {
            grid,
            cell_width: h,
            p,
            pi,
        };
        let inv = chain.invariants();
        if inv.row_sum_error > 1e-12 || inv.min_entry < 0.0 {
            return Err(Error::invalid("matrix is not row-stochastic"));
        }
        if inv.stationarity_error > 1e-10 || (chain.pi.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("pi is not a stationary distribution of P"));
        }
        Ok(chain)
    }

    /// Wraps a stochastic matrix, solving `πP = π, Σπ = 1` for `π`.
    pub fn from_matrix(p: DMatrix<f64>) -> Result<Self> {
        let n = p.nrows();
        if n < 1 || p.ncols() != n {
            return Err(Error::invalid("transition matrix must be square"));
        }
        let mut a = p.transpose() - DMatrix::identity(n, n);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let pi = a.lu().solve(&rhs).ok_or(Error::Reducible)?;
        let grid = (0..n).map(|i| i as f64).collect();
        Self::from_parts(grid, p, pi)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.pi
    }

    /// Indices of cells whose centers lie within `radius` of `center`; never
    /// empty (falls back to the nearest cell).
    pub fn states_near(&self, center: f64, radius: f64) -> Vec<usize> {
        let near: Vec<usize> = (0..self.len())
            .filter(|&i| (self.grid[i] - center).abs() <= radius)
            .collect();
        if near.is_empty() {
            let nearest = (0..self.len())
                .min_by(|&i, &j| (self.grid[i] - center).abs().total_cmp(&(self.grid[j] - center).abs()))
                .unwrap_or(0);
            vec![nearest]
        } else {
            near
        }
    }

    pub fn invariants(&self) -> InvariantReport {
        let n = self.len();
        let mut row_sum_error = 0.0f64;
        let mut min_entry = f64::INFINITY;
        let mut detailed_balance_error = 0.0f64;
        for i in 0..n {
            let row = self.p.row(i);
            row_sum_error = row_sum_error.max((row.sum() - 1.0).abs());
            for j in 0..n {
                min_entry = min_entry.min(self.p[(i, j)]);
                if j > i {
                    let db = (self.pi[i] * self.p[(i, j)] - self.pi[j] * self.p[(j, i)]).abs();
                    detailed_balance_error = detailed_balance_error.max(db);
                }
            }
        }
        let moved = self.p.tr_mul(&self.pi);
        let stationarity_error = (moved - &self.pi).amax();
        InvariantReport {
            row_sum_error,
            min_entry,
            stationarity_error,
            detailed_balance_error,
        }
    }

    /// Strong connectivity of the nonzero pattern.
    pub fn is_irreducible(&self) -> bool {
        let n = self.len();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(i) = queue.pop_front() {
                #[allow(clippy::needless_range_loop)]
                for j in 0..n {
                    let v = if forward { self.p[(i, j)] } else { self.p[(j, i)] };
                    if v > 0.0 && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// `D^{1/2} P D^{-1/2}` with `D = diag(π)`, symmetrized.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let n = self.len();
        let sq: Vec<f64> = self.pi.iter().map(|v| v.sqrt()).collect();
        let mut s = DMatrix::from_fn(n, n, |i, j| sq[i] * self.p[(i, j)] / sq[j]);
        let t = s.transpose();
        s += t;
        s *= 0.5;
        s
    }

    /// `1 − |λ₂|`, the absolute spectral gap.
    pub fn spectral_gap(&self) -> Result<f64> {
        if !self.is_irreducible() {
            return Err(Error::Reducible);
        }
        if self.len() > MAX_DENSE_STATES {
            return Err(Error::invalid(format!(
                "{} states exceed the dense eigensolver cap of {MAX_DENSE_STATES}",
                self.len()
            )));
        }
        if self.len() == 1 {
            return Ok(1.0);
        }
        let mut eig: Vec<f64> = self.symmetrized().symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        eig.pop(); // the Perron eigenvalue 1
        let second = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
        Ok((1.0 - second).clamp(0.0, 1.0))
    }

    pub fn relaxation_time(&self) -> Result<f64> {
        Ok(1.0 / self.spectral_gap()?)
    }

    /// `TV(δ_start Pᵗ, π)` for `t = 0..=t_max`.
    pub fn tv_curve(&self, start: &Start, t_max: usize) -> Result<Vec<f64>> {
        let n = self.len();
        let mut v = match start {
            Start::State(i) => {
                if *i >= n {
                    return Err(Error::invalid(format!("start state {i} out of range")));
                }
                let mut v = DVector::zeros(n);
                v[*i] = 1.0;
                v
            }
            Start::Distribution(d) => {
                if d.len() != n {
                    return Err(Error::invalid("start distribution has the wrong length"));
                }
                DVector::from_column_slice(d)
            }
        };
        let mut out = Vec::with_capacity(t_max + 1);
        for t in 0..=t_max {
            out.push(total_variation(v.as_slice(), self.pi.as_slice()));
            if t < t_max {
                v = self.p.tr_mul(&v);
            }
        }
        Ok(out)
    }

    fn worst_tv(&self, rows: &DMatrix<f64>) -> f64 {
        (0..rows.nrows())
            .map(|r| {
                0.5 * rows
                    .row(r)
                    .iter()
                    .zip(self.pi.iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Smallest `t ≤ cap` whose worst-case TV over `starts` satisfies
    /// `comparison` against `threshold`; `None` if the cap is exceeded.
    ///
    /// The worst-case TV is nonincreasing in `t`, so the search squares the
    /// matrix until the condition holds and then descends by binary lifting.
    pub fn mixing_time(
        &self,
        threshold: f64,
        starts: &StartSet,
        comparison: Comparison,
        cap: u64,
    ) -> Result<Option<u64>> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {threshold} not in (0, 1)")));
        }
        let n = self.len();
        let idx: Vec<usize> = match starts {
            StartSet::All => (0..n).collect(),
            StartSet::Subset(s) => {
                if s.is_empty() {
                    return Err(Error::EmptyStartSet);
                }
                if let Some(&i) = s.iter().find(|&&i| i >= n) {
                    return Err(Error::invalid(format!("start state {i} out of range")));
                }
                s.clone()
            }
        };
        let ok = |rows: &DMatrix<f64>| comparison.holds(self.worst_tv(rows), threshold);
        let start_rows = DMatrix::from_fn(idx.len(), n, |r, c| if idx[r] == c { 1.0 } else { 0.0 });
        if ok(&start_rows) {
            return Ok(Some(0));
        }
        if cap == 0 {
            return Ok(None);
        }
        let select = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), n, |r, c| m[(idx[r], c)]);

        // powers[k] = P^(2^k)
        let mut powers = vec![self.p.clone()];
        loop {
            let k = powers.len() - 1;
            let span = 1u64 << k;
            if ok(&select(&powers[k])) {
                break;
            }
            if span >= cap || k >= 62 {
                return Ok(None);
            }
            let sq = &powers[k] * &powers[k];
            powers.push(sq);
        }
        let top = powers.len() - 1;
        // condition fails at `lo`, holds at lo + 2^top
        let (mut lo, mut rows) = if top == 0 {
            (0u64, start_rows)
        } else {
            (1u64 << (top - 1), select(&powers[top - 1]))
        };
        if top >= 2 {
            for j in (0..top - 1).rev() {
                let cand = &rows * &powers[j];
                if !ok(&cand) {
                    rows = cand;
                    lo += 1 << j;
                }
            }
        }
        let t = lo + 1;
        Ok((t <= cap).then_some(t))
    }

    /// τ: worst start over Θ, strict threshold 1/4.
    pub fn mixing_time_quarter(&self, cap: u64) -> Result<Option<u64>> {
        self.mixing_time(0.25, &StartSet::All, Comparison::Below, cap)
    }

    /// τ_A: starts in `subset`, threshold `≤ 1/8`.
    pub fn restricted_mixing_time(&self, subset: Vec<usize>, cap: u64) -> Result<Option<u64>> {
        self.mixing_time(0.125, &StartSet::Subset(subset), Comparison::AtMost, cap)
    }

    /// Canonical-path bound over monotone index paths: `gap ≥ 1/B` with
    /// `B = max_e Q(e)⁻¹ Σ_{s ≤ i < t} π_s π_t (t − s)` over edges `e = (i, i+1)`.
    pub fn discrete_path_gap_bound(&self) -> Result<PathBound> {
        let n = self.len();
        if n < 2 {
            return Err(Error::invalid("path bound needs at least 2 states"));
        }
        let pi = self.pi.as_slice();
        let total_mass: f64 = pi.iter().sum();
        let total_moment: f64 = pi.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        let mut left_mass = 0.0;
        let mut left_moment = 0.0;
        let mut worst = (0.0f64, 0usize);
        #[allow(clippy::needless_range_loop)]
        for i in 0..n - 1 {
            left_mass += pi[i];
            left_moment += i as f64 * pi[i];
            let q = pi[i] * self.p[(i, i + 1)];
            if !(q > 0.0) {
                return Err(Error::InvalidPathFamily { edge: i, next: i + 1 });
            }
            let right_mass = total_mass - left_mass;
            let right_moment = total_moment - left_moment;
            let load = left_mass * right_moment - left_moment * right_mass;
            let congestion = load / q;
            if congestion > worst.0 {
                worst = (congestion, i);
            }
        }
        Ok(PathBound {
            gap_lower: 1.0 / worst.0,
            congestion: worst.0,
            worst_edge: worst.1,
        })
    }

    /// Plain-text export: `n`, `h`, grid, row-major matrix, π.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let join = |it: &mut dyn Iterator<Item = f64>| it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
        writeln!(w, "n {}", self.len())?;
        writeln!(w, "h {:e}", self.cell_width)?;
        writeln!(w, "grid {}", join(&mut self.grid.iter().copied()))?;
        for i in 0..self.len() {
            writeln!(w, "row {}", join(&mut self.p.row(i).iter().copied()))?;
        }
        writeln!(w, "pi {}", join(&mut self.pi.iter().copied()))?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut n = None;
        let mut h = None;
        let mut grid = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        let mut pi = Vec::new();
        for line in r.lines() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(tag) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| Error::Parse(format!("{tag}: {e}")))?;
            match tag {
                "n" => n = values.first().map(|&v| v as usize),
                "h" => h = values.first().copied(),
                "grid" => grid = values,
                "row" => rows.extend(values),
                "pi" => pi = values,
                other => return Err(Error::Parse(format!("unknown record {other}"))),
            }
        }
        let n = n.ok_or_else(|| Error::Parse("missing n".into()))?;
        if rows.len() != n * n || grid.len() != n || pi.len() != n {
            return Err(Error::Parse("record lengths disagree with n".into()));
        }
        let mut chain = Self::from_parts(grid, DMatrix::from_row_slice(n, n, &rows), DVector::from_vec(pi))?;
        if let Some(h) = h {
            chain.cell_width = h;
        }
        Ok(chain)
    }
}

/// `½ Σ |a − b|`.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Interval, ProposalFamily, ProposalSpec, TargetFamily, TargetSpec};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn two_state(a: f64, b: f64) -> DiscretizedChain {
        DiscretizedChain::from_matrix(dmatrix![1.0 - a, a; b, 1.0 - b]).unwrap()
    }

    fn kernel(family: TargetFamily, eps: f64, prop: ProposalFamily) -> MhKernel {
        let t = TargetSpec::new(family, Interval::new(-1.0, 1.0).unwrap(), Some(0.0), None).unwrap();
        MhKernel::restricted(t, ProposalSpec::new(prop, eps, 1).unwrap()).unwrap()
    }

    #[test]
    fn total_variation_unit() {
        assert_eq!(total_variation(&[1.0, 0.0], &[0.5, 0.5]), 0.5);
    }

    #[test]
    fn iid_rows_are_cell_masses() {
        let t = TargetSpec::new(
            TargetFamily::Gaussian { mean: 0.0, sd: 1.0 },
            Interval::new(-1.0, 1.0).unwrap(),
            None,
            None,
        )
        .unwrap();
        let k = MhKernel::independence(t.clone());
        let c = DiscretizedChain::build(&k, 8).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let lo = -1.0 + j as f64 * 0.25;
                assert_relative_eq!(c.matrix()[(i, j)], t.mass(lo, lo + 0.25, 64), epsilon = 1e-12);
            }
        }
        assert_eq!(c.mixing_time_quarter(100).unwrap(), Some(1));
        let tv = c.tv_curve(&Start::State(3), 3).unwrap();
        assert_relative_eq!(tv[0], 1.0 - c.stationary()[3], epsilon = 1e-14);
        assert!(tv[1..].iter().all(|&v| v < 1e-14));
    }

    #[test]
    fn two_cell_uniform_matches_cross_mass() {
        let eps = 0.8;
        let k = kernel(TargetFamily::Uniform, eps, ProposalFamily::UniformBall);
        let c = DiscretizedChain::build(&k, 2).unwrap();
        // proposal offset of one cell (width 1): mass of [0.5, 1.5] under U(-eps, eps)
        let a = (eps - 0.5) / (2.0 * eps);
        assert_relative_eq!(c.matrix()[(0, 1)], a, epsilon = 1e-15);
        assert_relative_eq!(c.matrix()[(1, 0)], a, epsilon = 1e-15);
        assert_relative_eq!(c.matrix()[(0, 0)], 1.0 - a, epsilon = 1e-15);
    }

    #[test]
    fn uniform_target_has_uniform_pi() {
        let k = kernel(TargetFamily::Uniform, 0.5, ProposalFamily::UniformBall);
        let c = DiscretizedChain::build(&k, 16).unwrap();
        for v in c.stationary().iter() {
            assert!((v - 1.0 / 16.0).abs() < 1e-10);
        }
        let inv = c.invariants();
        assert!(inv.stationarity_error < 1e-12);
        assert!(inv.detailed_balance_error < 1e-15);
    }

    #[test]
    fn two_state_gaps() {
        assert_relative_eq!(two_state(0.5, 0.5).spectral_gap().unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(two_state(0.25, 0.25).spectral_gap().unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(two_state(0.7, 0.9).spectral_gap().unwrap(), 1.0 - 0.6, epsilon = 1e-12);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let c = DiscretizedChain::from_parts(
            vec![0.0, 1.0],
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap();
        assert!(matches!(c.spectral_gap(), Err(Error::Reducible)));
        assert_eq!(c.mixing_time_quarter(1 << 20).unwrap(), None);
    }

    #[test]
    fn two_state_mixing_time() {
        let c = two_state(0.1, 0.1);
        let tv = c.tv_curve(&Start::State(0), 5).unwrap();
        assert_relative_eq!(tv[3], 0.256, epsilon = 1e-12);
        assert_relative_eq!(tv[4], 0.2048, epsilon = 1e-12);
        assert_eq!(c.mixing_time_quarter(1000).unwrap(), Some(4));
        assert_eq!(c.mixing_time_quarter(3).unwrap(), None);
        // ≤ 1/8: 0.5·0.8^t ≤ 0.125 ⇔ t ≥ 6.21
        assert_eq!(c.restricted_mixing_time(vec![0], 1000).unwrap(), Some(7));
    }

    #[test]
    fn mixing_time_matches_linear_scan() {
        let k = kernel(
            TargetFamily::Gaussian { mean: 0.0, sd: 0.7 },
            0.2,
            ProposalFamily::Gaussian,
        );
        let c = DiscretizedChain::build(&k, 40).unwrap();
        let curves: Vec<Vec<f64>> = (0..40).map(|i| c.tv_curve(&Start::State(i), 400).unwrap()).collect();
        let worst: Vec<f64> = (0..=400)
            .map(|t| curves.iter().map(|cv| cv[t]).fold(0.0, f64::max))
            .collect();
        let scan = worst.iter().position(|&v| v < 0.25).unwrap() as u64;
        assert_eq!(c.mixing_time_quarter(10_000).unwrap(), Some(scan));
        let sub = c.states_near(0.0, 0.2);
        let worst_a: Vec<f64> = (0..=400)
            .map(|t| sub.iter().map(|&i| curves[i][t]).fold(0.0, f64::max))
            .collect();
        let scan_a = worst_a.iter().position(|&v| v <= 0.125).unwrap() as u64;
        assert_eq!(c.restricted_mixing_time(sub, 10_000).unwrap(), Some(scan_a));
    }

    #[test]
    fn empty_start_set_is_an_error() {
        let c = two_state(0.2, 0.3);
        assert!(matches!(
            c.mixing_time(0.25, &StartSet::Subset(vec![]), Comparison::Below, 10),
            Err(Error::EmptyStartSet)
        ));
    }

    #[test]
    fn tv_curve_from_stationarity_is_zero() {
        let k = kernel(
            TargetFamily::Laplace { loc: 0.0, scale: 1.0 },
            0.3,
            ProposalFamily::Laplace,
        );
        let c = DiscretizedChain::build(&k, 32).unwrap();
        let start = Start::Distribution(c.stationary().iter().copied().collect());
        assert!(c.tv_curve(&start, 20).unwrap().iter().all(|&v| v < 1e-14));
        let tv = c.tv_curve(&Start::State(0), 200).unwrap();
        assert!(tv.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn path_bound_two_state() {
        let b = two_state(0.5, 0.5).discrete_path_gap_bound().unwrap();
        assert_relative_eq!(b.gap_lower, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn path_bound_rejects_broken_edge() {
        let p = dmatrix![1.0, 0.0, 0.0; 0.0, 0.5, 0.5; 0.0, 0.5, 0.5];
        let c = DiscretizedChain::from_parts(vec![0.0, 1.0, 2.0], p, DVector::from_vec(vec![0.0, 0.5, 0.5])).unwrap();
        assert!(matches!(
            c.discrete_path_gap_bound(),
            Err(Error::InvalidPathFamily { edge: 0, .. })
        ));
    }

    #[test]
    fn path_bound_never_exceeds_gap() {
        for fam in [
            TargetFamily::Uniform,
            TargetFamily::Gaussian { mean: 0.0, sd: 0.5 },
            TargetFamily::Laplace { loc: 0.0, scale: 0.3 },
            TargetFamily::Tent {
                apex: 0.0,
                left: -1.5,
                right: 1.5,
            },
        ] {
            for prop in [
                ProposalFamily::UniformBall,
                ProposalFamily::Gaussian,
                ProposalFamily::Laplace,
            ] {
                let c = DiscretizedChain::build(&kernel(fam.clone(), 0.15, prop), 64).unwrap();
                let gap = c.spectral_gap().unwrap();
                let b = c.discrete_path_gap_bound().unwrap();
                assert!(b.gap_lower <= gap + 1e-12, "{fam:?} {prop:?}: {} > {gap}", b.gap_lower);
            }
        }
    }

    #[test]
    fn text_export_round_trips() {
        let c = DiscretizedChain::build(&kernel(TargetFamily::Uniform, 0.4, ProposalFamily::Gaussian), 6).unwrap();
        let mut buf = Vec::new();
        c.write_text(&mut buf).unwrap();
        let back = DiscretizedChain::read_text(&buf[..]).unwrap();
        assert_eq!(back.matrix(), c.matrix());
        assert_eq!(back.stationary(), c.stationary());
        assert_eq!(back.grid(), c.grid());
    }
}
