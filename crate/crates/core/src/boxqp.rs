//! Small box-constrained convex problems: `min θᵀQθ + mᵀθ` and separable
//! linear objectives over per-entry bounds.
//!
//! The QP is solved by enumerating the `3ⁿ` faces of the box. A vertex of the
//! optimal set is the unique stationary point of some face, so the lowest
//! feasible face-stationary point is a global minimizer. A face whose point
//! satisfies the KKT sign conditions ends the search early.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::interval::{Interval, ParamBox};

/// Absolute PSD tolerance, scaled by `max(1, max|Q_ij|)`.
pub const PSD_TOL: f64 = 1e-8;
const SYM_TOL: f64 = 1e-10;
const MAX_DIM: usize = 12;

#[derive(Debug, Clone)]
pub struct BoxQp {
    pub q: DMatrix<f64>,
    pub m: DVector<f64>,
    pub bounds: ParamBox,
}

impl BoxQp {
    pub fn new(q: DMatrix<f64>, m: DVector<f64>, bounds: ParamBox) -> Result<Self> {
        let n = m.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: q.nrows() });
        }
        if bounds.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: bounds.dim() });
        }
        if n > MAX_DIM {
            return Err(Error::InvalidArgument(format!("box QP dimension {n} exceeds {MAX_DIM}")));
        }
        let scale = q.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if (&q - q.transpose()).amax() > SYM_TOL * scale {
            return Err(Error::InvalidArgument("Q is not symmetric".into()));
        }
        if n > 0 {
            let min_eig = q.clone().symmetric_eigenvalues().min();
            if min_eig < -PSD_TOL * scale {
                return Err(Error::NotPsd(min_eig));
            }
        }
        Ok(Self { q, m, bounds })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn objective(&self, theta: &DVector<f64>) -> f64 {
        theta.dot(&(&self.q * theta)) + self.m.dot(theta)
    }
}

/// Global minimizer and minimum value of a [`BoxQp`].
pub fn minimize_box_qp(prob: &BoxQp) -> Result<(DVector<f64>, f64)> {
    let n = prob.dim();
    if n == 0 {
        return Ok((DVector::zeros(0), 0.0));
    }
    if is_diagonal(&prob.q) {
        return Ok(separable(prob));
    }

    let ivs = &prob.bounds.intervals;
    let scale = prob.q.iter().chain(prob.m.iter()).fold(1.0f64, |a, v| a.max(v.abs()));
    let feas_tol = 1e-10 * ivs.iter().fold(1.0f64, |a, iv| a.max(iv.lo.abs()).max(iv.hi.abs()));
    let kkt_tol = 1e-9 * scale;

    let mut best: Option<(DVector<f64>, f64)> = None;
    // face code per coordinate: 0 free, 1 at lower bound, 2 at upper bound
    let mut code = vec![0u8; n];
    let mut theta = DVector::zeros(n);
    let mut free = Vec::with_capacity(n);
    let total = 3usize.pow(n as u32);
    for _ in 0..total {
        free.clear();
        for k in 0..n {
            match code[k] {
                0 => free.push(k),
                1 => theta[k] = ivs[k].lo,
                _ => theta[k] = ivs[k].hi,
            }
        }
        if solve_face(prob, &free, &mut theta) && (0..n).all(|k| theta[k] >= ivs[k].lo - feas_tol && theta[k] <= ivs[k].hi + feas_tol) {
            for k in 0..n {
                theta[k] = ivs[k].clamp(theta[k]);
            }
            let value = prob.objective(&theta);
            let grad = 2.0 * (&prob.q * &theta) + &prob.m;
            let kkt = (0..n).all(|k| match code[k] {
                0 => grad[k].abs() <= kkt_tol,
                1 => grad[k] >= -kkt_tol,
                _ => grad[k] <= kkt_tol,
            });
            if best.as_ref().is_none_or(|b| value < b.1) {
                best = Some((theta.clone(), value));
            }
            if kkt {
                break;
            }
        }
        next_code(&mut code);
    }
    best.ok_or(Error::QpNoKkt)
}

fn is_diagonal(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] == 0.0))
}

/// Per-coordinate closed form for diagonal `Q`.
fn separable(prob: &BoxQp) -> (DVector<f64>, f64) {
    let theta = DVector::from_iterator(
        prob.dim(),
        prob.bounds.intervals.iter().enumerate().map(|(k, iv)| {
            let (a, b) = (prob.q[(k, k)], prob.m[k]);
            if a > 0.0 {
                iv.clamp(-b / (2.0 * a))
            } else if b >= 0.0 {
                iv.lo
            } else {
                iv.hi
            }
        }),
    );
    let value = prob.objective(&theta);
    (theta, value)
}

/// Stationary point of the face with the given free coordinates; fixed
/// coordinates of `theta` must already be set.
fn solve_face(prob: &BoxQp, free: &[usize], theta: &mut DVector<f64>) -> bool {
    let nf = free.len();
    if nf == 0 {
        return true;
    }
    let n = prob.dim();
    let mut a = DMatrix::zeros(nf, nf);
    let mut rhs = DVector::zeros(nf);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[(r, c)] = 2.0 * prob.q[(i, j)];
        }
        let mut s = -prob.m[i];
        for j in 0..n {
            if !free.contains(&j) {
                s -= 2.0 * prob.q[(i, j)] * theta[j];
            }
        }
        rhs[r] = s;
    }
    match a.lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => {
            for (r, &i) in free.iter().enumerate() {
                theta[i] = x[r];
            }
            true
        }
        _ => false,
    }
}

fn next_code(code: &mut [u8]) {
    for c in code.iter_mut() {
        if *c < 2 {
            *c += 1;
            return;
        }
        *c = 0;
    }
}

/// Minimizes `Σ coef_ij R_ij` with `R_ij ∈ bounds[i * ncols + j]`. Entries take
/// the lower bound unless their coefficient is negative.
pub fn minimize_box_linear(coef: &DMatrix<f64>, bounds: &[Interval]) -> (DMatrix<f64>, f64) {
    let (nr, nc) = coef.shape();
    assert_eq!(bounds.len(), nr * nc, "one interval per entry");
    let mut r = DMatrix::zeros(nr, nc);
    let mut value = 0.0;
    for i in 0..nr {
        for j in 0..nc {
            let iv = bounds[i * nc + j];
            let c = coef[(i, j)];
            let v = if c < 0.0 { iv.hi } else { iv.lo };
            r[(i, j)] = v;
            value += c * v;
        }
    }
    (r, value)
}
