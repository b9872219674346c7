use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// A concrete geometric map in point coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    /// `y = a x + b` in the plane; covers similarity and affine maps.
    Affine2 { a: Matrix2<f64>, b: Vector2<f64> },
    /// `y = r x + t` with `r` in SO(3).
    Rigid3 { r: Matrix3<f64>, t: Vector3<f64> },
}

impl Transform {
    pub fn identity(dim: usize) -> Self {
        match dim {
            2 => Transform::Affine2 { a: Matrix2::identity(), b: Vector2::zeros() },
            _ => Transform::Rigid3 { r: Matrix3::identity(), t: Vector3::zeros() },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Transform::Affine2 { .. } => 2,
            Transform::Rigid3 { .. } => 3,
        }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Transform::Affine2 { a, b } => {
                let v = a * Vector2::new(p[0], p[1]) + b;
                vec![v[0], v[1]]
            }
            Transform::Rigid3 { r, t } => {
                let v = r * Vector3::new(p[0], p[1], p[2]) + t;
                vec![v[0], v[1], v[2]]
            }
        }
    }
}
