//! Globally epsilon-optimal registration of partially overlapping point sets.
//!
//! The energy `E(P, T) = sum_ij p_ij |y_j - T(x_i)|^2` over partial
//! correspondences `P` (exactly `n_p` matches) and transform parameters is
//! minimized by a branch and bound that splits only the transform parameter
//! box. Lower bounds come from averaged convex-envelope facets of the
//! bilinear and trilinear monomials in the energy; the relaxed problem then
//! separates into a k-cardinality linear assignment and a small box QP.
//!
//! Two families of transforms are supported:
//!
//! * [`linear`]: 2D transforms that are linear in their parameters
//!   (similarity and affine),
//! * [`rigid`]: 3D rigid motions in angle-axis form.

pub mod assignment;
pub mod bnb;
pub mod boxqp;
pub mod envelope;
pub mod error;
pub mod harness;
pub mod interval;
pub mod linear;
pub mod pointset;
pub mod rigid;
pub mod transform;
pub mod vecmat;

pub use error::{Error, Result};
pub use interval::{Interval, ParamBox};
pub use pointset::{NormInfo, PointSet};
pub use transform::Transform;
