//! Case one: transforms linear in their parameters, `T(x) = J(x)θ`.
//!
//! With `p = vec(P)` the energy is
//! `E(p, θ) = θᵀmat(Bp)θ − 2θᵀAp + ρᵀp`. Rows of `B` that are constant over
//! the model points fold into a constant matrix `C` (using `1ᵀp = n_p`) and
//! the rest are signed copies of a few base rows `B₂`, so
//! `mat(Bp) = mat(KB₂p) + C`. Shifting by `D = mat(KB₂p₀)` leaves
//! `Z = mat(KB₂p) − D`, whose ranges over `Ω` contain zero; the products
//! `θ_iθ_jZ_ij` and `θ_i(−2Ap)_i` are then replaced by affine
//! underestimators.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::assignment::{linear_range_over_omega, solve_kcard_lap, Assignment, CostMatrix, KCardLap};
use crate::bnb::{BoundCase, NodeEval};
use crate::boxqp::{minimize_box_qp, BoxQp};
use crate::envelope::{bilinear_lower, trilinear_lower};
use crate::error::{Error, Result};
use crate::interval::{Interval, ParamBox};
use crate::pointset::PointSet;
use crate::transform::Transform;
use crate::vecmat::{mat_rows, w_matrix};

/// Half-width of the initial parameter box `[−3, 3]^{n_θ}`.
pub const THETA_HALF_WIDTH: f64 = 3.0;
const RECONSTRUCTION_TOL: f64 = 1e-10;

// generic probe points used to classify rows of B symbolically
const PROBES: [[f64; 2]; 5] = [[0.37, -1.21], [1.7, 0.45], [-0.83, 0.66], [0.1, 2.3], [-1.9, -0.27]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Similarity2d,
    Affine2d,
}

impl TransformKind {
    pub fn n_theta(self) -> usize {
        match self {
            TransformKind::Similarity2d => 4,
            TransformKind::Affine2d => 6,
        }
    }

    /// `J(x)` with `T(x) = J(x)θ`.
    pub fn jacobian(self, x: &[f64]) -> Result<DMatrix<f64>> {
        let &[x1, x2] = x else {
            return Err(Error::DimensionMismatch { expected: 2, got: x.len() });
        };
        Ok(match self {
            TransformKind::Similarity2d => DMatrix::from_row_slice(2, 4, &[x1, -x2, 1.0, 0.0, x2, x1, 0.0, 1.0]),
            TransformKind::Affine2d => DMatrix::from_row_slice(2, 6, &[x1, x2, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, x1, x2, 0.0, 1.0]),
        })
    }

    /// Zero-based rows of `B` kept as `B₂`.
    pub fn b2_rows(self) -> &'static [usize] {
        match self {
            TransformKind::Similarity2d => &[0, 2, 3],
            TransformKind::Affine2d => &[0, 1, 4, 7, 10],
        }
    }

    pub fn to_transform(self, theta: &[f64]) -> Transform {
        match self {
            TransformKind::Similarity2d => {
                let [a, b, tx, ty] = theta[..4] else { unreachable!() };
                Transform::Affine2 { a: Matrix2::new(a, -b, b, a), b: Vector2::new(tx, ty) }
            }
            TransformKind::Affine2d => {
                let [a11, a12, a21, a22, tx, ty] = theta[..6] else { unreachable!() };
                Transform::Affine2 { a: Matrix2::new(a11, a12, a21, a22), b: Vector2::new(tx, ty) }
            }
        }
    }

    pub fn identity_theta(self) -> Vec<f64> {
        match self {
            TransformKind::Similarity2d => vec![1.0, 0.0, 0.0, 0.0],
            TransformKind::Affine2d => vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        }
    }
}

/// Row structure of `B`: `mat(Bp) = mat(K B₂ p) + (1ᵀp) C₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct BStructure {
    pub b2_rows: Vec<usize>,
    /// `n_θ² x |B₂|`, one signed unit entry per non-constant row.
    pub k: DMatrix<f64>,
    /// Constant part per unit of correspondence mass.
    pub c_unit: DMatrix<f64>,
}

/// Classifies the rows of `vec(J(x)ᵀJ(x))` as constant, or a `±1` multiple
/// of an earlier non-constant row, or a new base row.
pub fn derive_b_structure(jacobian: impl Fn(&[f64]) -> Result<DMatrix<f64>>, n_theta: usize) -> Result<BStructure> {
    let nn = n_theta * n_theta;
    let mut rows = vec![Vec::with_capacity(PROBES.len()); nn];
    for x in &PROBES {
        let j = jacobian(x)?;
        let m = j.transpose() * &j;
        for a in 0..n_theta {
            for b in 0..n_theta {
                rows[a * n_theta + b].push(m[(a, b)]);
            }
        }
    }
    let same = |u: &[f64], v: &[f64], s: f64| u.iter().zip(v).all(|(a, b)| (a - s * b).abs() < 1e-12);

    let mut b2_rows: Vec<usize> = Vec::new();
    let mut links = Vec::with_capacity(nn);
    let mut c_unit = DMatrix::zeros(n_theta, n_theta);
    for r in 0..nn {
        let row = &rows[r];
        if row.iter().all(|v| (v - row[0]).abs() < 1e-12) {
            c_unit[(r / n_theta, r % n_theta)] = row[0];
            links.push(None);
            continue;
        }
        let found = b2_rows.iter().enumerate().find_map(|(k, &b)| {
            [1.0, -1.0].into_iter().find(|&s| same(row, &rows[b], s)).map(|s| (k, s))
        });
        match found {
            Some(link) => links.push(Some(link)),
            None => {
                links.push(Some((b2_rows.len(), 1.0)));
                b2_rows.push(r);
            }
        }
    }
    let mut k = DMatrix::zeros(nn, b2_rows.len());
    for (r, link) in links.into_iter().enumerate() {
        if let Some((col, s)) = link {
            k[(r, col)] = s;
        }
    }
    Ok(BStructure { b2_rows, k, c_unit })
}

/// One entry `Z_ij`, `i ≤ j`, as a signed base row minus its shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZTerm {
    pub i: usize,
    pub j: usize,
    pub base: usize,
    pub sign: f64,
    pub shift: f64,
    pub range: Interval,
}

/// Assembled case-one problem with its fixed ranges; immutable during search.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub kind: TransformKind,
    pub n_x: usize,
    pub n_y: usize,
    pub n_p: usize,
    pub structure: BStructure,
    /// `n_θ x n_x n_y`; column `(i, j)` is `J(x_i)ᵀy_j`.
    pub a: DMatrix<f64>,
    /// `|B₂| x n_x n_y`.
    pub b2: DMatrix<f64>,
    pub rho: Vec<f64>,
    /// `C = n_p C₁`.
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Ranges of `(−2Ap)_i` over `Ω`.
    pub w_ranges: Vec<Interval>,
    pub z_terms: Vec<ZTerm>,
    pub theta0: ParamBox,
    x: PointSet,
    y: PointSet,
}

/// `E_l(p, θ) = θᵀQθ + m₀ᵀθ + m₁ᵀp + m₂` for one node.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub q: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub m1: Vec<f64>,
    pub m2: f64,
}

impl Relaxation {
    pub fn eval(&self, p: &[f64], theta: &DVector<f64>) -> f64 {
        theta.dot(&(&self.q * theta)) + self.m0.dot(theta) + dot(&self.m1, p) + self.m2
    }
}

#[derive(Debug, Clone)]
pub struct LowerBound {
    pub p: Assignment,
    pub theta: DVector<f64>,
    pub beta: f64,
    pub relaxation: Relaxation,
}

#[derive(Debug, Clone)]
pub struct UpperBound {
    pub value: f64,
    pub theta: DVector<f64>,
    /// The unconstrained minimizer left `Θ₀`, so `θ` is the box-constrained one.
    pub constrained: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearProblem {
    /// Assembles with the uniform `p₀ = n_p/(n_x n_y) 1`.
    pub fn assemble(kind: TransformKind, x: &PointSet, y: &PointSet, n_p: usize) -> Result<Self> {
        let p0 = vec![n_p as f64 / (x.len() * y.len()) as f64; x.len() * y.len()];
        Self::assemble_with_p0(kind, x, y, n_p, &p0)
    }

    /// `p0` must lie in `Ω`; it only affects the split between `D` and `Z`.
    pub fn assemble_with_p0(kind: TransformKind, x: &PointSet, y: &PointSet, n_p: usize, p0: &[f64]) -> Result<Self> {
        if x.dim() != 2 || y.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: if x.dim() != 2 { x.dim() } else { y.dim() } });
        }
        let (n_x, n_y) = (x.len(), y.len());
        if n_p == 0 || n_p > n_x.min(n_y) {
            return Err(Error::InfeasibleCardinality { n_p, n_x, n_y });
        }
        if p0.len() != n_x * n_y {
            return Err(Error::DimensionMismatch { expected: n_x * n_y, got: p0.len() });
        }
        let nt = kind.n_theta();
        let structure = derive_b_structure(|p| kind.jacobian(p), nt)?;
        if structure.b2_rows != kind.b2_rows() {
            return Err(Error::Assembly(format!("derived B₂ rows {:?} differ from {:?}", structure.b2_rows, kind.b2_rows())));
        }

        let jacs: Vec<DMatrix<f64>> = x.iter().map(|p| kind.jacobian(p)).collect::<Result<_>>()?;
        let mut j_stack = DMatrix::zeros(2 * n_x, nt);
        let mut j2_stack = DMatrix::zeros(nt * n_x, nt);
        for (i, j) in jacs.iter().enumerate() {
            j_stack.rows_mut(2 * i, 2).copy_from(j);
            j2_stack.rows_mut(nt * i, nt).copy_from(&(j.transpose() * j));
        }
        let y_row = DMatrix::from_row_slice(1, 2 * n_y, y.coords());

        let a = w_matrix(n_x, n_y, 2).left_mul(&j_stack.transpose().kronecker(&y_row));
        let b_rows = w_matrix(n_x, 1, nt).left_mul(&j2_stack.transpose().kronecker(&DMatrix::<f64>::identity(nt, nt)));
        // (I ⊗ 1ᵀ) copies column i to every (i, j)
        let b = DMatrix::from_fn(nt * nt, n_x * n_y, |r, c| b_rows[(r, c / n_y)]);

        let rho: Vec<f64> = (0..n_x).flat_map(|_| y.iter().map(|q| q[0] * q[0] + q[1] * q[1])).collect();
        let b2 = DMatrix::from_fn(structure.b2_rows.len(), n_x * n_y, |r, c| b[(structure.b2_rows[r], c)]);
        let c = &structure.c_unit * n_p as f64;

        check_reconstruction(&b, &b2, &structure, n_x, n_y, n_p)?;

        let kb2p0 = &structure.k * (&b2 * DVector::from_column_slice(p0));
        let d = mat_rows(kb2p0.as_slice(), nt, nt);

        let mut prob = LinearProblem {
            kind,
            n_x,
            n_y,
            n_p,
            structure,
            a,
            b2,
            rho,
            c,
            d,
            w_ranges: Vec::new(),
            z_terms: Vec::new(),
            theta0: ParamBox::cube(nt, THETA_HALF_WIDTH),
            x: x.clone(),
            y: y.clone(),
        };
        prob.fixed_ranges()?;
        Ok(prob)
    }

    pub fn n_theta(&self) -> usize {
        self.kind.n_theta()
    }

    fn row_costs(&self, row: impl Iterator<Item = f64>) -> Result<CostMatrix> {
        CostMatrix::new(self.n_x, self.n_y, row.collect(), self.n_p)
    }

    /// Ranges over `Ω` of `(−2Ap)_i` and of each non-constant `Z_ij`.
    fn fixed_ranges(&mut self) -> Result<()> {
        let nt = self.n_theta();
        self.w_ranges = (0..nt)
            .map(|i| Ok(linear_range_over_omega(&self.row_costs(self.a.row(i).iter().map(|v| -2.0 * v))?)))
            .collect::<Result<_>>()?;
        let base_ranges: Vec<Interval> = (0..self.b2.nrows())
            .map(|b| Ok(linear_range_over_omega(&self.row_costs(self.b2.row(b).iter().copied())?)))
            .collect::<Result<_>>()?;

        self.z_terms.clear();
        for i in 0..nt {
            for j in i..nt {
                let r = i * nt + j;
                let Some(base) = (0..self.structure.k.ncols()).find(|&b| self.structure.k[(r, b)] != 0.0) else {
                    continue;
                };
                let sign = self.structure.k[(r, base)];
                let shift = self.d[(i, j)];
                let br = if sign < 0.0 { base_ranges[base].neg() } else { base_ranges[base] };
                // p₀ ∈ Ω puts zero inside; absorb rounding at the ends
                let range = Interval { lo: (br.lo - shift).min(0.0), hi: (br.hi - shift).max(0.0) };
                self.z_terms.push(ZTerm { i, j, base, sign, shift, range });
            }
        }
        Ok(())
    }

    /// `Ap` and `mat(Bp)` for a correspondence vector.
    fn ap_and_m(&self, p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let nt = self.n_theta();
        let pv = DVector::from_column_slice(p);
        let ap = &self.a * &pv;
        let kb2p = &self.structure.k * (&self.b2 * &pv);
        let mass: f64 = p.iter().sum();
        let m = mat_rows(kb2p.as_slice(), nt, nt) + &self.structure.c_unit * mass;
        (ap, m)
    }

    /// `θᵀmat(Bp)θ − 2θᵀAp + ρᵀp`.
    pub fn energy(&self, p: &[f64], theta: &[f64]) -> f64 {
        let (ap, m) = self.ap_and_m(p);
        let t = DVector::from_column_slice(theta);
        t.dot(&(&m * &t)) - 2.0 * t.dot(&ap) + dot(&self.rho, p)
    }

    /// Lower bound of `E` over `Ω x node`.
    pub fn lower_bound(&self, node: &ParamBox) -> Result<LowerBound> {
        self.lower_bound_with(node, &mut KCardLap::new())
    }

    pub fn lower_bound_with(&self, node: &ParamBox, lap: &mut KCardLap) -> Result<LowerBound> {
        let nt = self.n_theta();
        if node.dim() != nt {
            return Err(Error::DimensionMismatch { expected: nt, got: node.dim() });
        }
        let th = &node.intervals;
        let mut m0 = DVector::zeros(nt);
        let mut m2 = 0.0;
        let mut a_coef = vec![0.0; nt];
        let mut b2_coef = vec![0.0; self.b2.nrows()];

        for i in 0..nt {
            let bl = bilinear_lower(th[i], self.w_ranges[i]);
            m0[i] += bl.coeffs[0];
            a_coef[i] += -2.0 * bl.coeffs[1];
            m2 += bl.constant;
        }
        for z in &self.z_terms {
            if z.range.width() == 0.0 {
                continue;
            }
            let tl = trilinear_lower(th[z.i], th[z.j], z.range)?;
            let mult = if z.i == z.j { 1.0 } else { 2.0 };
            m0[z.i] += mult * tl.coeffs[0];
            m0[z.j] += mult * tl.coeffs[1];
            b2_coef[z.base] += mult * tl.coeffs[2] * z.sign;
            m2 += mult * (tl.constant - tl.coeffs[2] * z.shift);
        }

        let mut m1 = self.rho.clone();
        for (i, &ci) in a_coef.iter().enumerate() {
            if ci != 0.0 {
                for (m, v) in m1.iter_mut().zip(self.a.row(i).iter()) {
                    *m += ci * v;
                }
            }
        }
        for (b, &cb) in b2_coef.iter().enumerate() {
            if cb != 0.0 {
                for (m, v) in m1.iter_mut().zip(self.b2.row(b).iter()) {
                    *m += cb * v;
                }
            }
        }

        let q = &self.c + &self.d;
        let (p, lap_value) = lap.solve(&CostMatrix::new(self.n_x, self.n_y, m1.clone(), self.n_p)?);
        let qp = BoxQp::new(q.clone(), m0.clone(), node.clone())?;
        let (theta, qp_value) = minimize_box_qp(&qp)?;
        let beta = lap_value + qp_value + m2;
        Ok(LowerBound { p, theta, beta, relaxation: Relaxation { q, m0, m1, m2 } })
    }

    /// `min_{θ ∈ Θ₀} E(p, θ)`: the unconstrained `θ = mat(Bp)⁻¹Ap` when it
    /// lies in `Θ₀`, otherwise the box-constrained minimizer.
    pub fn upper_bound(&self, p: &Assignment) -> Result<UpperBound> {
        self.upper_bound_vec(&p.to_vec())
    }

    pub fn upper_bound_vec(&self, p: &[f64]) -> Result<UpperBound> {
        let (ap, m) = self.ap_and_m(p);
        let qp = BoxQp::new(m, -2.0 * &ap, self.theta0.clone())?;
        let (theta, value) = minimize_box_qp(&qp)?;
        let grad = 2.0 * (&qp.q * &theta) + &qp.m;
        let constrained = grad.amax() > 1e-9 * (1.0 + qp.m.amax());
        Ok(UpperBound { value: value + dot(&self.rho, p), theta, constrained })
    }

    /// Unconstrained elimination `ρᵀp − (Ap)ᵀ mat(Bp)⁻¹ Ap`, with a `1e−10`
    /// ridge when `mat(Bp)` is singular or its condition number exceeds `1e12`.
    /// Returns the value, the eliminating `θ` and whether the ridge was used.
    pub fn eliminated_energy(&self, p: &[f64]) -> (f64, DVector<f64>, bool) {
        let (ap, mut m) = self.ap_and_m(p);
        let sv = m.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        let ridge = !(smin > 0.0 && smax / smin <= 1e12);
        if ridge {
            for k in 0..m.nrows() {
                m[(k, k)] += 1e-10;
            }
        }
        let theta = m.lu().solve(&ap).unwrap_or_else(|| DVector::zeros(ap.len()));
        (dot(&self.rho, p) - ap.dot(&theta), theta, ridge)
    }
}

/// Feasible point found at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCandidate {
    pub p: Assignment,
    pub theta: Vec<f64>,
}

impl BoundCase for LinearProblem {
    type Candidate = LinearCandidate;

    fn initial_box(&self) -> ParamBox {
        self.theta0.clone()
    }

    fn epsilon_scale(&self) -> usize {
        self.n_x.min(self.n_y)
    }

    fn evaluate(&self, node: &ParamBox) -> Result<NodeEval<LinearCandidate>> {
        let lb = self.lower_bound(node)?;
        let ub = self.upper_bound(&lb.p)?;
        Ok(NodeEval {
            beta: lb.beta,
            upper: ub.value,
            candidate: LinearCandidate { p: lb.p, theta: ub.theta.as_slice().to_vec() },
            flagged: ub.constrained,
        })
    }

    fn polish(&self, c: &LinearCandidate, value: f64) -> Option<(LinearCandidate, f64)> {
        let mut best: Option<(LinearCandidate, f64)> = None;
        let mut cur = (c.clone(), value);
        for _ in 0..POLISH_ROUNDS {
            let (p, _) = best_assignment_for_theta(self.kind, &self.x, &self.y, self.n_p, &cur.0.theta).ok()?;
            let ub = self.upper_bound(&p).ok()?;
            if ub.value >= cur.1 - 1e-12 {
                break;
            }
            cur = (LinearCandidate { p, theta: ub.theta.as_slice().to_vec() }, ub.value);
            best = Some(cur.clone());
        }
        best
    }
}

/// Cap on assignment/transform alternations when polishing an incumbent.
pub(crate) const POLISH_ROUNDS: usize = 50;

fn check_reconstruction(b: &DMatrix<f64>, b2: &DMatrix<f64>, s: &BStructure, n_x: usize, n_y: usize, n_p: usize) -> Result<()> {
    // deterministic feasible probes: a diagonal-ish matching and the uniform point
    let mut probes = vec![vec![n_p as f64 / (n_x * n_y) as f64; n_x * n_y]];
    let mut p = vec![0.0; n_x * n_y];
    for k in 0..n_p {
        p[k * n_y + (k * 7 + 3) % n_y] = 1.0;
    }
    if p.iter().sum::<f64>() as usize == n_p && (0..n_y).all(|j| (0..n_x).map(|i| p[i * n_y + j]).sum::<f64>() <= 1.0) {
        probes.push(p);
    }
    let scale = b.amax().max(1.0);
    for p in probes {
        let pv = DVector::from_column_slice(&p);
        let full = b * &pv;
        let nt = s.c_unit.nrows();
        let rebuilt = &s.k * (b2 * &pv) + DVector::from_column_slice(vec_of(&(&s.c_unit * n_p as f64)).as_slice());
        let err = (&full - &rebuilt).amax();
        if err > RECONSTRUCTION_TOL * scale * nt as f64 {
            return Err(Error::Assembly(format!("mat(KB₂p) + C differs from mat(Bp) by {err:e}")));
        }
    }
    Ok(())
}

fn vec_of(m: &DMatrix<f64>) -> Vec<f64> {
    crate::vecmat::vec_rows(m)
}

/// Best value of `E(p, θ)` over a fixed `θ` and all `p ∈ Ω`: a LAP on
/// the residual costs `‖y_j − J(x_i)θ‖²`.
pub fn best_assignment_for_theta(kind: TransformKind, x: &PointSet, y: &PointSet, n_p: usize, theta: &[f64]) -> Result<(Assignment, f64)> {
    let tx: Vec<Vec<f64>> = x.iter().map(|p| kind.to_transform(theta).apply(p)).collect();
    let costs = tx
        .iter()
        .flat_map(|t| y.iter().map(move |q| (q[0] - t[0]).powi(2) + (q[1] - t[1]).powi(2)))
        .collect();
    Ok(solve_kcard_lap(&CostMatrix::new(x.len(), y.len(), costs, n_p)?))
}
