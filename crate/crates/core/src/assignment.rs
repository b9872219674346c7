//! Minimization of linear functionals over the partial-correspondence
//! polytope `Ω = {P ≥ 0 : P1 ≤ 1, 1ᵀP ≤ 1, 1ᵀP1 = n_p}`.
//!
//! The vertices of `Ω` are integral, so the LP optimum is attained by a
//! partial matching of exactly `n_p` pairs. It is found as a min-cost flow of
//! value `n_p` through unit-capacity row and column nodes, one successive
//! shortest augmenting path at a time, with node potentials keeping the
//! reduced costs nonnegative for Dijkstra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::interval::Interval;

/// Dense `n_x x n_y` costs with a required number of matches.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_x: usize,
    n_y: usize,
    n_p: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    /// `costs` is row-major, `costs[i * n_y + j]` for the pair `(i, j)`.
    pub fn new(n_x: usize, n_y: usize, costs: Vec<f64>, n_p: usize) -> Result<Self> {
        if costs.len() != n_x * n_y {
            return Err(Error::DimensionMismatch { expected: n_x * n_y, got: costs.len() });
        }
        if n_p == 0 {
            return Err(Error::InvalidArgument("n_p must be at least 1".into()));
        }
        if n_p > n_x.min(n_y) {
            return Err(Error::InfeasibleCardinality { n_p, n_x, n_y });
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite cost".into()));
        }
        Ok(Self { n_x, n_y, n_p, costs })
    }

    pub fn from_matrix(m: &DMatrix<f64>, n_p: usize) -> Result<Self> {
        let costs = crate::vecmat::vec_rows(m);
        Self::new(m.nrows(), m.ncols(), costs, n_p)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.costs[i * self.n_y + j]
    }

    pub fn negated(&self) -> CostMatrix {
        CostMatrix { costs: self.costs.iter().map(|c| -c).collect(), ..self.clone() }
    }
}

/// A partial matching; `matches` is sorted by model index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub matches: Vec<(usize, usize)>,
    pub n_x: usize,
    pub n_y: usize,
}

impl Assignment {
    pub fn new(mut matches: Vec<(usize, usize)>, n_x: usize, n_y: usize) -> Self {
        matches.sort_unstable();
        Self { matches, n_x, n_y }
    }

    pub fn n_p(&self) -> usize {
        self.matches.len()
    }

    /// Each row and column used at most once, indices in range.
    pub fn is_valid(&self) -> bool {
        let mut rows = vec![false; self.n_x];
        let mut cols = vec![false; self.n_y];
        for &(i, j) in &self.matches {
            if i >= self.n_x || j >= self.n_y || rows[i] || cols[j] {
                return false;
            }
            rows[i] = true;
            cols[j] = true;
        }
        true
    }

    /// `p = vec(P)` in row-major order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_x * self.n_y];
        for &(i, j) in &self.matches {
            p[i * self.n_y + j] = 1.0;
        }
        p
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        crate::vecmat::mat_rows(&self.to_vec(), self.n_x, self.n_y)
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(i, j)| c.at(i, j)).sum()
    }
}

/// Scratch buffers for repeated solves; one solve at a time per instance.
#[derive(Debug, Default)]
pub struct KCardLap {
    row_match: Vec<Option<usize>>,
    col_match: Vec<Option<usize>>,
    pot_row: Vec<f64>,
    pot_col: Vec<f64>,
    dist_row: Vec<f64>,
    dist_col: Vec<f64>,
    done_row: Vec<bool>,
    done_col: Vec<bool>,
    parent_col: Vec<usize>,
}

impl KCardLap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, c: &CostMatrix) -> (Assignment, f64) {
        let (nx, ny) = (c.n_x, c.n_y);
        self.row_match.clear();
        self.row_match.resize(nx, None);
        self.col_match.clear();
        self.col_match.resize(ny, None);
        self.pot_row.clear();
        self.pot_row.resize(nx, 0.0);
        // shortest distances in the initial DAG are feasible potentials
        self.pot_col.clear();
        self.pot_col.extend((0..ny).map(|j| (0..nx).map(|i| c.at(i, j)).fold(f64::INFINITY, f64::min)));
        let mut pot_sink = self.pot_col.iter().copied().fold(f64::INFINITY, f64::min);

        for _ in 0..c.n_p {
            pot_sink = self.augment(c, pot_sink);
        }

        let matches: Vec<(usize, usize)> =
            self.row_match.iter().enumerate().filter_map(|(i, m)| m.map(|j| (i, j))).collect();
        let a = Assignment::new(matches, nx, ny);
        let value = a.cost(c);
        (a, value)
    }

    /// One Dijkstra pass from the source; returns the updated sink potential.
    fn augment(&mut self, c: &CostMatrix, pot_sink: f64) -> f64 {
        let (nx, ny) = (c.n_x, c.n_y);
        let inf = f64::INFINITY;
        self.dist_row.clear();
        self.dist_row.extend((0..nx).map(|i| if self.row_match[i].is_none() { (-self.pot_row[i]).max(0.0) } else { inf }));
        self.dist_col.clear();
        self.dist_col.resize(ny, inf);
        self.done_row.clear();
        self.done_row.resize(nx, false);
        self.done_col.clear();
        self.done_col.resize(ny, false);
        self.parent_col.clear();
        self.parent_col.resize(ny, usize::MAX);
        let mut dist_sink = inf;
        let mut sink_from = usize::MAX;

        loop {
            // lowest tentative distance; rows before columns, then lowest index
            let mut best = inf;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..nx {
                if !self.done_row[i] && self.dist_row[i] < best {
                    best = self.dist_row[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..ny {
                if !self.done_col[j] && self.dist_col[j] < best {
                    best = self.dist_col[j];
                    pick = Some((false, j));
                }
            }
            if dist_sink <= best {
                break;
            }
            let Some((is_row, k)) = pick else { break };
            if is_row {
                self.done_row[k] = true;
                let pr = self.pot_row[k];
                let row = &c.costs[k * ny..(k + 1) * ny];
                for j in 0..ny {
                    if self.done_col[j] || self.row_match[k] == Some(j) {
                        continue;
                    }
                    let cand = best + (row[j] + pr - self.pot_col[j]).max(0.0);
                    if cand < self.dist_col[j] {
                        self.dist_col[j] = cand;
                        self.parent_col[j] = k;
                    }
                }
            } else {
                self.done_col[k] = true;
                match self.col_match[k] {
                    Some(i) => {
                        if !self.done_row[i] {
                            let reduced = (-c.at(i, k) + self.pot_col[k] - self.pot_row[i]).max(0.0);
                            if best + reduced < self.dist_row[i] {
                                self.dist_row[i] = best + reduced;
                            }
                        }
                    }
                    None => {
                        let cand = best + (self.pot_col[k] - pot_sink).max(0.0);
                        if cand < dist_sink {
                            dist_sink = cand;
                            sink_from = k;
                        }
                    }
                }
            }
        }

        debug_assert!(sink_from != usize::MAX, "feasible n_p always admits an augmenting path");
        for i in 0..nx {
            self.pot_row[i] += self.dist_row[i].min(dist_sink);
        }
        for j in 0..ny {
            self.pot_col[j] += self.dist_col[j].min(dist_sink);
        }

        // flip the path back from the sink
        let mut col = sink_from;
        loop {
            let row = self.parent_col[col];
            let prev = self.row_match[row];
            self.row_match[row] = Some(col);
            self.col_match[col] = Some(row);
            match prev {
                Some(p) => col = p,
                None => break,
            }
        }
        pot_sink + dist_sink
    }
}

/// Integral minimizer of `Σ c_ij p_ij` over `Ω` and its value.
pub fn solve_kcard_lap(c: &CostMatrix) -> (Assignment, f64) {
    KCardLap::new().solve(c)
}

/// `[min, max]` of `cᵀp` over `Ω`.
pub fn linear_range_over_omega(c: &CostMatrix) -> Interval {
    let mut lap = KCardLap::new();
    let (_, lo) = lap.solve(c);
    let (_, neg_hi) = lap.solve(&c.negated());
    Interval { lo, hi: (-neg_hi).max(lo) }
}

/// Exhaustive search over all `n_p`-matchings; test oracle for small inputs.
pub fn brute_force_lap(c: &CostMatrix) -> Result<(Assignment, f64)> {
    if c.n_x > 7 || c.n_y > 7 {
        return Err(Error::TooLargeForEnumeration(c.n_x, c.n_y));
    }
    fn recurse(
        c: &CostMatrix,
        row: usize,
        used: &mut [bool],
        cur: &mut Vec<(usize, usize)>,
        acc: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if cur.len() == c.n_p {
            if acc < best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        if row == c.n_x || c.n_x - row < c.n_p - cur.len() {
            return;
        }
        for j in 0..c.n_y {
            if !used[j] {
                used[j] = true;
                cur.push((row, j));
                recurse(c, row + 1, used, cur, acc + c.at(row, j), best);
                cur.pop();
                used[j] = false;
            }
        }
        recurse(c, row + 1, used, cur, acc, best);
    }
    let mut best = (f64::INFINITY, Vec::new());
    recurse(c, 0, &mut vec![false; c.n_y], &mut Vec::new(), 0.0, &mut best);
    Ok((Assignment::new(best.1, c.n_x, c.n_y), best.0))
}

/// Every `n_p`-matching of an `n_x x n_y` grid; used by enumeration oracles.
pub fn all_matchings(n_x: usize, n_y: usize, n_p: usize) -> Vec<Assignment> {
    fn recurse(n_x: usize, n_y: usize, n_p: usize, row: usize, used: &mut [bool], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Assignment>) {
        if cur.len() == n_p {
            out.push(Assignment::new(cur.clone(), n_x, n_y));
            return;
        }
        if row == n_x || n_x - row < n_p - cur.len() {
            return;
        }
        for j in 0..n_y {
            if !used[j] {
                used[j] = true;
                cur.push((row, j));
                recurse(n_x, n_y, n_p, row + 1, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
        recurse(n_x, n_y, n_p, row + 1, used, cur, out);
    }
    let mut out = Vec::new();
    recurse(n_x, n_y, n_p, 0, &mut vec![false; n_y], &mut Vec::new(), &mut out);
    out
}

/// Uniformly shuffled `n_p`-matching, used for sampling points of `Ω`.
pub fn random_matching<R: rand::Rng + ?Sized>(rng: &mut R, n_x: usize, n_y: usize, n_p: usize) -> Assignment {
    use rand::seq::SliceRandom;
    let mut rows: Vec<usize> = (0..n_x).collect();
    let mut cols: Vec<usize> = (0..n_y).collect();
    rows.shuffle(rng);
    cols.shuffle(rng);
    Assignment::new(rows.into_iter().zip(cols).take(n_p).collect(), n_x, n_y)
}

/// Convex combination of `k` random matchings: a generally fractional point of `Ω`.
pub fn random_omega_point<R: rand::Rng + ?Sized>(rng: &mut R, n_x: usize, n_y: usize, n_p: usize, k: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut p = vec![0.0; n_x * n_y];
    for w in weights {
        for &(i, j) in &random_matching(rng, n_x, n_y, n_p).matches {
            p[i * n_y + j] += w / total;
        }
    }
    p
}
