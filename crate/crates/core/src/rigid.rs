//! Case two: 3D rigid registration.
//!
//! `E(P, R, t) = Σ p_ij ‖y_j − Rx_i − t‖²` expands to
//! `tr(G₁P) + n_p‖t‖² + Σ R_ab V_ba + tᵀu + Σ t_a R_ab s_b` with
//! `V = −2XᵀPY`, `u = −2YᵀPᵀ1` and `s = 2XᵀP1`. The ranges of `V`, `u`, `s`
//! over `Ω` are fixed once by LAPs; the ranges of the rotation entries over a
//! box of angle-axis vectors come from a precomputed grid.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::assignment::{linear_range_over_omega, Assignment, CostMatrix, KCardLap};
use crate::bnb::{BoundCase, NodeEval};
use crate::boxqp::minimize_box_linear;
use crate::envelope::{bilinear_lower, trilinear_lower};
use crate::error::{Error, Result};
use crate::interval::{Interval, ParamBox};
use crate::pointset::PointSet;
use crate::transform::Transform;

/// Half-width of the initial translation box.
pub const T_HALF_WIDTH: f64 = 3.0;
/// Default grid resolution per axis.
pub const DEFAULT_GRID: usize = 50;
/// Default cap on stored grid scalars (`9 g³`).
pub const DEFAULT_GRID_CAP: usize = 9 * 200 * 200 * 200;
const TAYLOR_BELOW: f64 = 1e-6;

fn skew(r: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

/// Exponential map `R = I + [r]× sin θ/θ + [r]×²(1 − cos θ)/θ²`, `θ = ‖r‖`.
pub fn rotation_from_axis_angle(r: &Vector3<f64>) -> Matrix3<f64> {
    let k = skew(r);
    let theta = r.norm();
    if theta < TAYLOR_BELOW {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    Matrix3::identity() + k * (theta.sin() / theta) + k * k * ((1.0 - theta.cos()) / (theta * theta))
}

/// `R_ij` sampled at `g³` angle-axis vectors spanning a cube, both ends included.
#[derive(Debug, Clone)]
pub struct RotationGrid {
    g: usize,
    lo: [f64; 3],
    step: [f64; 3],
    values: Vec<[f64; 9]>,
}

impl RotationGrid {
    pub fn precompute(bounds: &ParamBox, g: usize) -> Result<Self> {
        Self::precompute_capped(bounds, g, DEFAULT_GRID_CAP)
    }

    pub fn precompute_capped(bounds: &ParamBox, g: usize, cap: usize) -> Result<Self> {
        if bounds.dim() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: bounds.dim() });
        }
        if g < 2 {
            return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
        }
        let needed = 9usize.saturating_mul(g.saturating_pow(3));
        if needed > cap {
            return Err(Error::GridTooLarge { needed, cap });
        }
        let iv = &bounds.intervals;
        let lo = [iv[0].lo, iv[1].lo, iv[2].lo];
        let step = [0, 1, 2].map(|a| iv[a].width() / (g - 1) as f64);
        let mut grid = Self { g, lo, step, values: Vec::with_capacity(g * g * g) };
        for i1 in 0..g {
            for i2 in 0..g {
                for i3 in 0..g {
                    let r = grid.node(i1, i2, i3);
                    let m = rotation_from_axis_angle(&r);
                    grid.values.push([m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]);
                }
            }
        }
        Ok(grid)
    }

    pub fn resolution(&self) -> usize {
        self.g
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node(&self, i1: usize, i2: usize, i3: usize) -> Vector3<f64> {
        Vector3::new(
            self.lo[0] + i1 as f64 * self.step[0],
            self.lo[1] + i2 as f64 * self.step[1],
            self.lo[2] + i3 as f64 * self.step[2],
        )
    }

    /// Row-major `R` entries at node `(i1, i2, i3)`.
    pub fn value(&self, i1: usize, i2: usize, i3: usize) -> &[f64; 9] {
        &self.values[(i1 * self.g + i2) * self.g + i3]
    }

    /// Nodes inside `[lo, hi]` along one axis, or the two bracketing nodes
    /// when none falls inside.
    fn axis_span(&self, axis: usize, iv: Interval) -> (usize, usize) {
        let last = (self.g - 1) as f64;
        let a = ((iv.lo - self.lo[axis]) / self.step[axis]).clamp(0.0, last);
        let b = ((iv.hi - self.lo[axis]) / self.step[axis]).clamp(0.0, last);
        let eps = 1e-9;
        let (first, end) = ((a - eps).ceil(), (b + eps).floor());
        if first <= end {
            (first as usize, end as usize)
        } else {
            (a.floor() as usize, (b.ceil() as usize).min(self.g - 1))
        }
    }

    /// Min/max of each `R_ij` over grid nodes inside `rbox` (row-major),
    /// widened by `padding · √3 · step` and clipped to `[−1, 1]`. Padding 1
    /// covers the true ranges because the exponential map is 1-Lipschitz into
    /// the spectral norm and every point is within `√3 · step` of a used node.
    pub fn entry_ranges(&self, rbox: &ParamBox, padding: f64) -> [Interval; 9] {
        let spans = [0, 1, 2].map(|a| self.axis_span(a, rbox.intervals[a]));
        let mut lo = [f64::INFINITY; 9];
        let mut hi = [f64::NEG_INFINITY; 9];
        for i1 in spans[0].0..=spans[0].1 {
            for i2 in spans[1].0..=spans[1].1 {
                let base = (i1 * self.g + i2) * self.g;
                for v in &self.values[base + spans[2].0..=base + spans[2].1] {
                    for k in 0..9 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
            }
        }
        let pad = padding * 3f64.sqrt() * self.step.iter().fold(0.0f64, |m, &s| m.max(s));
        std::array::from_fn(|k| Interval { lo: (lo[k] - pad).max(-1.0), hi: (hi[k] + pad).min(1.0) })
    }
}

/// Options for a rigid problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidOptions {
    pub grid: usize,
    pub padding: f64,
    pub grid_cap: usize,
}

impl Default for RigidOptions {
    fn default() -> Self {
        Self { grid: DEFAULT_GRID, padding: 0.0, grid_cap: DEFAULT_GRID_CAP }
    }
}

/// Assembled case-two problem; shared read-only during search.
#[derive(Debug, Clone)]
pub struct RigidProblem {
    pub x: PointSet,
    pub y: PointSet,
    pub n_p: usize,
    /// Ranges of `u_a = (−2YᵀPᵀ1)_a`.
    pub u_ranges: [Interval; 3],
    /// Ranges of `V_ba = (−2XᵀPY)_ba`, stored at `[b * 3 + a]`.
    pub v_ranges: [Interval; 9],
    /// Ranges of `s_b = (2XᵀP1)_b`.
    pub s_ranges: [Interval; 3],
    pub grid: Arc<RotationGrid>,
    pub padding: f64,
    pub initial: ParamBox,
}

#[derive(Debug, Clone)]
pub struct RigidLowerBound {
    pub p: Assignment,
    /// Relaxed rotation; only box constrained.
    pub r_relaxed: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct RigidUpperBound {
    pub value: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    /// Fewer than three matches leave the rotation under-determined.
    pub underdetermined: bool,
}

/// `[r; t]` box: `r ∈ [−π, π]³`, `t ∈ [−3, 3]³`.
pub fn initial_rigid_box() -> ParamBox {
    let pi = std::f64::consts::PI;
    let mut v = vec![Interval { lo: -pi, hi: pi }; 3];
    v.extend(vec![Interval { lo: -T_HALF_WIDTH, hi: T_HALF_WIDTH }; 3]);
    ParamBox::new(v)
}

/// `Σ p_ij ‖y_j − Rx_i − t‖²` for a fractional `p`.
pub fn rigid_energy(x: &PointSet, y: &PointSet, p: &[f64], r: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
    let mut e = 0.0;
    for (i, xi) in x.iter().enumerate() {
        let tx = r * Vector3::new(xi[0], xi[1], xi[2]) + t;
        for (j, yj) in y.iter().enumerate() {
            let w = p[i * y.len() + j];
            if w != 0.0 {
                e += w * (Vector3::new(yj[0], yj[1], yj[2]) - tx).norm_squared();
            }
        }
    }
    e
}

impl RigidProblem {
    /// `x` must be centered at the origin so the `s` ranges contain zero.
    pub fn assemble(x: &PointSet, y: &PointSet, n_p: usize, opts: RigidOptions) -> Result<Self> {
        let initial = initial_rigid_box();
        let grid = Arc::new(RotationGrid::precompute_capped(&initial.slice(0..3), opts.grid, opts.grid_cap)?);
        Self::assemble_with_grid(x, y, n_p, grid, opts.padding)
    }

    pub fn assemble_with_grid(x: &PointSet, y: &PointSet, n_p: usize, grid: Arc<RotationGrid>, padding: f64) -> Result<Self> {
        if x.dim() != 3 || y.dim() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: if x.dim() != 3 { x.dim() } else { y.dim() } });
        }
        let (n_x, n_y) = (x.len(), y.len());
        if n_p == 0 || n_p > n_x.min(n_y) {
            return Err(Error::InfeasibleCardinality { n_p, n_x, n_y });
        }
        let range = |f: &dyn Fn(&[f64], &[f64]) -> f64| -> Result<Interval> {
            let costs = x.iter().flat_map(|xi| y.iter().map(move |yj| f(xi, yj))).collect();
            Ok(linear_range_over_omega(&CostMatrix::new(n_x, n_y, costs, n_p)?))
        };
        let mut u_ranges = [Interval::point(0.0); 3];
        let mut s_ranges = [Interval::point(0.0); 3];
        let mut v_ranges = [Interval::point(0.0); 9];
        for a in 0..3 {
            u_ranges[a] = range(&|_, yj| -2.0 * yj[a])?;
            s_ranges[a] = range(&|xi, _| 2.0 * xi[a])?;
            for b in 0..3 {
                v_ranges[b * 3 + a] = range(&|xi, yj| -2.0 * xi[b] * yj[a])?;
            }
        }
        // a fully matched centered set sums to zero only up to rounding
        let tol = 1e-9 * n_p as f64 * x.coords().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for s in &mut s_ranges {
            if s.lo > 0.0 && s.lo <= tol {
                s.lo = 0.0;
            }
            if s.hi < 0.0 && s.hi >= -tol {
                s.hi = 0.0;
            }
        }
        if let Some(b) = (0..3).find(|&b| !s_ranges[b].contains_zero()) {
            return Err(Error::InvalidArgument(format!(
                "model set is not centered: range of (2XᵀP1)_{b} is [{}, {}]",
                s_ranges[b].lo, s_ranges[b].hi
            )));
        }
        Ok(Self { x: x.clone(), y: y.clone(), n_p, u_ranges, v_ranges, s_ranges, grid, padding, initial: initial_rigid_box() })
    }

    pub fn energy(&self, p: &[f64], r: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
        rigid_energy(&self.x, &self.y, p, r, t)
    }

    pub fn lower_bound(&self, node: &ParamBox) -> Result<RigidLowerBound> {
        self.lower_bound_with(node, &mut KCardLap::new())
    }

    pub fn lower_bound_with(&self, node: &ParamBox, lap: &mut KCardLap) -> Result<RigidLowerBound> {
        if node.dim() != 6 {
            return Err(Error::DimensionMismatch { expected: 6, got: node.dim() });
        }
        let rr = self.grid.entry_ranges(&node.slice(0..3), self.padding);
        let tr = &node.intervals[3..6];

        let mut g_r = DMatrix::zeros(3, 3);
        let mut g_t = Vector3::<f64>::zeros();
        let mut g3 = 0.0;
        // coefficients pushed onto p: m₁_ij = |x|² + |y|² + y_jᵀκx_i + λᵀy_j + μᵀx_i
        let mut kappa = Matrix3::<f64>::zeros();
        let mut lambda = Vector3::<f64>::zeros();
        let mut mu = Vector3::<f64>::zeros();

        for a in 0..3 {
            for b in 0..3 {
                let bl = bilinear_lower(rr[a * 3 + b], self.v_ranges[b * 3 + a]);
                g_r[(a, b)] += bl.coeffs[0];
                kappa[(a, b)] += -2.0 * bl.coeffs[1];
                g3 += bl.constant;

                let tl = trilinear_lower(tr[a], rr[a * 3 + b], self.s_ranges[b])?;
                g_t[a] += tl.coeffs[0];
                g_r[(a, b)] += tl.coeffs[1];
                mu[b] += 2.0 * tl.coeffs[2];
                g3 += tl.constant;
            }
            let bl = bilinear_lower(tr[a], self.u_ranges[a]);
            g_t[a] += bl.coeffs[0];
            lambda[a] += -2.0 * bl.coeffs[1];
            g3 += bl.constant;
        }

        let (n_x, n_y) = (self.x.len(), self.y.len());
        let mut m1 = Vec::with_capacity(n_x * n_y);
        for xi in self.x.iter() {
            let xv = Vector3::new(xi[0], xi[1], xi[2]);
            let kx = kappa * xv + lambda;
            let cx = xv.norm_squared() + mu.dot(&xv);
            for yj in self.y.iter() {
                m1.push(cx + yj[0] * (yj[0] + kx[0]) + yj[1] * (yj[1] + kx[1]) + yj[2] * (yj[2] + kx[2]));
            }
        }
        let (p, lap_value) = lap.solve(&CostMatrix::new(n_x, n_y, m1, self.n_p)?);

        let (r_mat, r_value) = minimize_box_linear(&g_r, &rr);
        let n_p = self.n_p as f64;
        let t = Vector3::from_fn(|a, _| tr[a].clamp(-g_t[a] / (2.0 * n_p)));
        let t_value = n_p * t.norm_squared() + g_t.dot(&t);

        let r_relaxed = Matrix3::from_fn(|a, b| r_mat[(a, b)]);
        Ok(RigidLowerBound { p, r_relaxed, t, beta: lap_value + r_value + t_value + g3 })
    }

    /// Optimal `R`, `t` for fixed `P` (weighted Kabsch) and the energy there.
    pub fn upper_bound(&self, p: &Assignment) -> RigidUpperBound {
        let (r, t) = kabsch(&self.x, &self.y, p);
        let value = self.energy(&p.to_vec(), &r, &t);
        RigidUpperBound { value, r, t, underdetermined: p.n_p() < 3 }
    }
}

/// Feasible point found at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidCandidate {
    pub p: Assignment,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl BoundCase for RigidProblem {
    type Candidate = RigidCandidate;

    fn initial_box(&self) -> ParamBox {
        self.initial.clone()
    }

    fn epsilon_scale(&self) -> usize {
        self.x.len().min(self.y.len())
    }

    fn evaluate(&self, node: &ParamBox) -> Result<NodeEval<RigidCandidate>> {
        let lb = self.lower_bound(node)?;
        let ub = self.upper_bound(&lb.p);
        Ok(NodeEval {
            beta: lb.beta,
            upper: ub.value,
            candidate: RigidCandidate { p: lb.p, r: ub.r, t: ub.t },
            flagged: ub.underdetermined,
        })
    }

    fn polish(&self, c: &RigidCandidate, value: f64) -> Option<(RigidCandidate, f64)> {
        let mut best = None;
        let (mut r, mut t, mut cur) = (c.r, c.t, value);
        let mut lap = KCardLap::new();
        for _ in 0..crate::linear::POLISH_ROUNDS {
            let costs = self
                .x
                .iter()
                .flat_map(|p| {
                    let q = r * Vector3::new(p[0], p[1], p[2]) + t;
                    self.y.iter().map(move |y| (Vector3::new(y[0], y[1], y[2]) - q).norm_squared())
                })
                .collect();
            let (p, _) = lap.solve(&CostMatrix::new(self.x.len(), self.y.len(), costs, self.n_p).ok()?);
            let ub = self.upper_bound(&p);
            if ub.value >= cur - 1e-12 {
                break;
            }
            (r, t, cur) = (ub.r, ub.t, ub.value);
            best = Some((RigidCandidate { p, r, t }, cur));
        }
        best
    }
}

/// Rotation maximizing `Σ (y_j − μ_y)ᵀR(x_i − μ_x)` over matched pairs, with
/// a determinant guard against reflections, and `t = μ_y − Rμ_x`.
pub fn kabsch(x: &PointSet, y: &PointSet, p: &Assignment) -> (Matrix3<f64>, Vector3<f64>) {
    let v3 = |s: &[f64]| Vector3::new(s[0], s[1], s[2]);
    let n = p.n_p().max(1) as f64;
    let mx = p.matches.iter().map(|&(i, _)| v3(x.point(i))).sum::<Vector3<f64>>() / n;
    let my = p.matches.iter().map(|&(_, j)| v3(y.point(j))).sum::<Vector3<f64>>() / n;
    // H = XᵀPY − (1/n_p) XᵀP11ᵀPY
    let h: Matrix3<f64> = p.matches.iter().map(|&(i, j)| (v3(x.point(i)) - mx) * (v3(y.point(j)) - my).transpose()).sum();
    let svd = h.transpose().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d == 0.0 { 1.0 } else { d })) * vt;
    (r, my - r * mx)
}

/// Rigid transform from an angle-axis vector and translation.
pub fn rigid_transform(r: &Vector3<f64>, t: &Vector3<f64>) -> Transform {
    Transform::Rigid3 { r: rotation_from_axis_angle(r), t: *t }
}
