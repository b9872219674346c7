//! Affine underestimators of bilinear and trilinear monomials over boxes.
//!
//! Each underestimator is the average of the facets of the monomial's convex
//! envelope, which keeps the relaxed energy linear in the correspondence
//! variables. Bilinear: the two McCormick facets. Trilinear: the six facets
//! of the envelope when one variable is nonnegative, one has a nonpositive
//! lower bound and one straddles zero; other sign patterns are mapped onto
//! that case by permutation and paired sign flips, and whatever remains falls
//! back to a vertex-dominated least-squares plane.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::interval::Interval;

/// Widths below this are treated as points.
pub const DEGENERATE_WIDTH: f64 = 1e-12;

/// `coeffs · v + constant`, a lower bound of a monomial on its box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineUnderestimator<const N: usize> {
    pub coeffs: [f64; N],
    pub constant: f64,
}

impl<const N: usize> AffineUnderestimator<N> {
    pub fn eval(&self, v: &[f64; N]) -> f64 {
        self.coeffs.iter().zip(v).map(|(c, x)| c * x).sum::<f64>() + self.constant
    }
}

pub type BilinearBound = AffineUnderestimator<2>;
pub type TrilinearBound = AffineUnderestimator<3>;

/// Average of the two McCormick underestimators of `xy`:
/// `½(x̲+x̄)y + ½(y̲+ȳ)x − ½(x̲y̲ + x̄ȳ)`.
pub fn bilinear_lower(ix: Interval, iy: Interval) -> BilinearBound {
    BilinearBound {
        coeffs: [0.5 * (iy.lo + iy.hi), 0.5 * (ix.lo + ix.hi)],
        constant: -0.5 * (ix.lo * iy.lo + ix.hi * iy.hi),
    }
}

// Vertex sets (bit 0 = lower bound, 1 = upper bound; order x, y, z) on which
// each envelope facet interpolates xyz. Valid for x̲ ≤ 0, y̲ ≥ 0, z̲ ≤ 0 ≤ z̄.
type Corner = [u8; 3];

/// x̄ > 0 and x̄y̲z̲ + x̲ȳz̄ ≤ x̄ȳz̲ + x̲y̲z̄.
const FACETS_MIXED_X_LOW: [[Corner; 4]; 6] = [
    [[0, 0, 0], [0, 0, 1], [0, 1, 1], [1, 0, 0]],
    [[0, 0, 0], [0, 1, 0], [0, 1, 1], [1, 1, 0]],
    [[0, 0, 0], [0, 1, 1], [1, 0, 0], [1, 1, 0]],
    [[0, 0, 1], [0, 1, 1], [1, 0, 0], [1, 0, 1]],
    [[0, 1, 1], [1, 0, 0], [1, 0, 1], [1, 1, 0]],
    [[0, 1, 1], [1, 0, 1], [1, 1, 0], [1, 1, 1]],
];

/// x̄ > 0 and the opposite ordering.
const FACETS_MIXED_X_HIGH: [[Corner; 4]; 6] = [
    [[0, 0, 0], [0, 0, 1], [0, 1, 1], [1, 1, 0]],
    [[0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 1, 0]],
    [[0, 0, 0], [0, 1, 0], [0, 1, 1], [1, 1, 0]],
    [[0, 0, 1], [0, 1, 1], [1, 0, 1], [1, 1, 0]],
    [[0, 0, 1], [1, 0, 0], [1, 0, 1], [1, 1, 0]],
    [[0, 1, 1], [1, 0, 1], [1, 1, 0], [1, 1, 1]],
];

/// x̄ ≤ 0.
const FACETS_NONPOSITIVE_X: [[Corner; 4]; 6] = [
    [[0, 0, 0], [0, 0, 1], [0, 1, 1], [1, 0, 0]],
    [[0, 0, 0], [0, 1, 0], [0, 1, 1], [1, 1, 0]],
    [[0, 0, 0], [0, 1, 1], [1, 0, 0], [1, 1, 0]],
    [[0, 0, 1], [0, 1, 1], [1, 0, 0], [1, 0, 1]],
    [[0, 1, 1], [1, 0, 0], [1, 0, 1], [1, 1, 1]],
    [[0, 1, 1], [1, 0, 0], [1, 1, 0], [1, 1, 1]],
];

fn corner_point(b: &[Interval; 3], c: Corner) -> [f64; 3] {
    let pick = |iv: &Interval, bit: u8| if bit == 0 { iv.lo } else { iv.hi };
    [pick(&b[0], c[0]), pick(&b[1], c[1]), pick(&b[2], c[2])]
}

/// The plane through `(v, xyz(v))` for four affinely independent corners.
fn interpolate_facet(b: &[Interval; 3], corners: &[Corner; 4]) -> Result<TrilinearBound> {
    let mut a = Matrix4::zeros();
    let mut f = Vector4::zeros();
    for (r, &c) in corners.iter().enumerate() {
        let p = corner_point(b, c);
        a[(r, 0)] = p[0];
        a[(r, 1)] = p[1];
        a[(r, 2)] = p[2];
        a[(r, 3)] = 1.0;
        f[r] = p[0] * p[1] * p[2];
    }
    let sol = a.lu().solve(&f).ok_or(Error::DegenerateBox)?;
    Ok(TrilinearBound { coeffs: [sol[0], sol[1], sol[2]], constant: sol[3] })
}

/// Averaged envelope facets of `xyz` for `x̲ ≤ 0, y̲ ≥ 0, z̲ ≤ 0 ≤ z̄`.
///
/// Errors with [`Error::SignPattern`] outside that pattern and with
/// [`Error::DegenerateBox`] when an interval is (numerically) a point.
pub fn trilinear_lower_facets(ix: Interval, iy: Interval, iz: Interval) -> Result<TrilinearBound> {
    if !(ix.lo <= 0.0 && iy.lo >= 0.0 && iz.lo <= 0.0 && iz.hi >= 0.0) {
        return Err(Error::SignPattern(format!("x={ix:?} y={iy:?} z={iz:?}")));
    }
    if ix.width() < DEGENERATE_WIDTH || iy.width() < DEGENERATE_WIDTH || iz.width() < DEGENERATE_WIDTH {
        return Err(Error::DegenerateBox);
    }
    let (x, y, z) = (ix, iy, iz);
    let table = if x.hi <= 0.0 {
        &FACETS_NONPOSITIVE_X
    } else if x.hi * y.lo * z.lo + x.lo * y.hi * z.hi <= x.hi * y.hi * z.lo + x.lo * y.lo * z.hi {
        &FACETS_MIXED_X_LOW
    } else {
        &FACETS_MIXED_X_HIGH
    };
    let b = [ix, iy, iz];
    let mut acc = TrilinearBound { coeffs: [0.0; 3], constant: 0.0 };
    for corners in table {
        let f = interpolate_facet(&b, corners)?;
        for k in 0..3 {
            acc.coeffs[k] += f.coeffs[k] / 6.0;
        }
        acc.constant += f.constant / 6.0;
    }
    Ok(acc)
}

/// Least-squares plane through the eight vertex values, shifted down so it
/// lies below `xyz` at every vertex. Since `xyz - plane` is multilinear its
/// minimum over the box sits at a vertex, so the result is valid everywhere.
pub fn trilinear_lower_generic(ix: Interval, iy: Interval, iz: Interval) -> TrilinearBound {
    let b = [ix, iy, iz];
    let mid = [ix.mid(), iy.mid(), iz.mid()];
    let half = [0.5 * ix.width(), 0.5 * iy.width(), 0.5 * iz.width()];
    let mut values = [0.0; 8];
    let mut mean = 0.0;
    let mut slope = [0.0; 3];
    for (k, value) in values.iter_mut().enumerate() {
        let c = [(k >> 2) as u8 & 1, (k >> 1) as u8 & 1, k as u8 & 1];
        let p = corner_point(&b, c);
        *value = p[0] * p[1] * p[2];
        mean += *value / 8.0;
        for d in 0..3 {
            slope[d] += *value * (p[d] - mid[d]);
        }
    }
    // vertex coordinates are ±half about mid, so the normal equations decouple
    for d in 0..3 {
        slope[d] = if half[d] > 0.0 { slope[d] / (8.0 * half[d] * half[d]) } else { 0.0 };
    }
    let mut plane = TrilinearBound {
        coeffs: slope,
        constant: mean - slope[0] * mid[0] - slope[1] * mid[1] - slope[2] * mid[2],
    };
    let mut worst = f64::NEG_INFINITY;
    for (k, value) in values.iter().enumerate() {
        let c = [(k >> 2) as u8 & 1, (k >> 1) as u8 & 1, k as u8 & 1];
        worst = worst.max(plane.eval(&corner_point(&b, c)) - value);
    }
    plane.constant -= worst;
    plane
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [1, 0, 2], [0, 2, 1], [2, 0, 1], [1, 2, 0], [2, 1, 0]];
const EVEN_FLIPS: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0], [-1.0, -1.0, 1.0]];

/// Which construction [`trilinear_lower_with_path`] used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrilinearPath {
    Facets,
    /// One interval is a point, so the monomial is a scaled bilinear term.
    Reduced,
    Generic,
}

/// Underestimator of `xyz`; at least one interval must contain zero.
pub fn trilinear_lower(ix: Interval, iy: Interval, iz: Interval) -> Result<TrilinearBound> {
    trilinear_lower_with_path(ix, iy, iz).map(|(b, _)| b)
}

pub fn trilinear_lower_with_path(ix: Interval, iy: Interval, iz: Interval) -> Result<(TrilinearBound, TrilinearPath)> {
    let vars = [ix, iy, iz];
    if !vars.iter().any(Interval::contains_zero) {
        return Err(Error::NoStraddlingVariable);
    }

    let degenerate: Vec<usize> = (0..3).filter(|&k| vars[k].width() < DEGENERATE_WIDTH).collect();
    match degenerate.len() {
        0 => {}
        1 => return Ok((reduce_to_bilinear(&vars, degenerate[0]), TrilinearPath::Reduced)),
        _ => return Ok((trilinear_lower_generic(ix, iy, iz), TrilinearPath::Generic)),
    }

    for perm in &PERMUTATIONS {
        for flip in &EVEN_FLIPS {
            let u = [0, 1, 2].map(|s| {
                let iv = vars[perm[s]];
                if flip[s] < 0.0 { iv.neg() } else { iv }
            });
            if let Ok(f) = trilinear_lower_facets(u[0], u[1], u[2]) {
                let mut coeffs = [0.0; 3];
                for s in 0..3 {
                    coeffs[perm[s]] += f.coeffs[s] * flip[s];
                }
                return Ok((TrilinearBound { coeffs, constant: f.constant }, TrilinearPath::Facets));
            }
        }
    }
    Ok((trilinear_lower_generic(ix, iy, iz), TrilinearPath::Generic))
}

/// With `vars[fixed]` a point `c`, `xyz = c · (product of the other two)`.
fn reduce_to_bilinear(vars: &[Interval; 3], fixed: usize) -> TrilinearBound {
    let c = vars[fixed].mid();
    let others: Vec<usize> = (0..3).filter(|&k| k != fixed).collect();
    let (a, b) = (others[0], others[1]);
    // c·uv = |c|·(sign(c) u)v
    let sign = if c < 0.0 { -1.0 } else { 1.0 };
    let ia = if sign < 0.0 { vars[a].neg() } else { vars[a] };
    let bl = bilinear_lower(ia, vars[b]);
    let mut coeffs = [0.0; 3];
    coeffs[a] = c.abs() * bl.coeffs[0] * sign;
    coeffs[b] = c.abs() * bl.coeffs[1];
    // absorb the sub-threshold width of the point interval
    let slack = vars[fixed].width() * max_abs_product(vars, fixed);
    TrilinearBound { coeffs, constant: c.abs() * bl.constant - slack }
}

fn max_abs_product(vars: &[Interval; 3], skip: usize) -> f64 {
    (0..3)
        .filter(|&k| k != skip)
        .map(|k| vars[k].lo.abs().max(vars[k].hi.abs()))
        .product()
}
