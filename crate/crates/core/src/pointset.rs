//! Point sets, normalization, the plain-text point file format and the RMS
//! error metric.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::Transform;

/// Affine map recorded by [`PointSet::normalize`]: `original = scale * p + centroid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormInfo {
    pub centroid: Vec<f64>,
    pub scale: f64,
}

impl NormInfo {
    pub fn identity(dim: usize) -> Self {
        Self { centroid: vec![0.0; dim], scale: 1.0 }
    }

    pub fn to_original(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.centroid).map(|(&v, &c)| self.scale * v + c).collect()
    }

    pub fn to_normalized(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.centroid).map(|(&v, &c)| (v - c) / self.scale).collect()
    }
}

/// Ordered list of points of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    coords: Vec<f64>,
    dim: usize,
    pub norm_info: NormInfo,
}

impl PointSet {
    pub fn new(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Ok(Self { coords, dim, norm_info: NormInfo::identity(dim) })
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { coords, dim, norm_info: NormInfo::identity(dim) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut c = vec![0.0; self.dim];
        for p in self.iter() {
            for (ck, &v) in c.iter_mut().zip(p) {
                *ck += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= n);
        c
    }

    /// Largest Euclidean distance of a point from `center`.
    pub fn radius_about(&self, center: &[f64]) -> f64 {
        self.iter()
            .map(|p| p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn subset(&self, indices: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointSet { coords, dim: self.dim, norm_info: self.norm_info.clone() }
    }

    pub fn map(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> PointSet {
        let coords = self.iter().flat_map(f).collect();
        PointSet { coords, dim: self.dim, norm_info: NormInfo::identity(self.dim) }
    }

    /// Centers at the centroid and scales so the farthest point has norm 1.
    pub fn normalize(&self) -> Result<PointSet> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty point set".into()));
        }
        let centroid = self.centroid();
        let scale = self.radius_about(&centroid);
        if !(scale > 0.0) {
            return Err(Error::DegenerateScale);
        }
        Ok(self.normalize_with(centroid, scale))
    }

    /// Applies `p -> (p - centroid) / scale`; used when two sets must share a scale.
    pub fn normalize_with(&self, centroid: Vec<f64>, scale: f64) -> PointSet {
        let info = NormInfo { centroid, scale };
        let coords = self.iter().flat_map(|p| info.to_normalized(p)).collect();
        PointSet { coords, dim: self.dim, norm_info: info }
    }

    /// Undoes the recorded normalization.
    pub fn denormalize(&self) -> PointSet {
        let coords = self.iter().flat_map(|p| self.norm_info.to_original(p)).collect();
        PointSet { coords, dim: self.dim, norm_info: NormInfo::identity(self.dim) }
    }

    /// Parses the whitespace-separated text format; `#` lines and blank
    /// lines are skipped. With `dim = None` the first data line fixes it.
    pub fn parse(text: &str, dim: Option<usize>) -> Result<PointSet> {
        let mut dim = dim;
        let mut coords = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let d = *dim.get_or_insert(fields.len());
            if fields.len() != d {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("expected {d} fields, found {}", fields.len()),
                });
            }
            for f in fields {
                let v: f64 = f.parse().map_err(|_| Error::Parse {
                    line: ln + 1,
                    msg: format!("not a number: {f:?}"),
                })?;
                coords.push(v);
            }
        }
        let dim = dim.ok_or(Error::Parse { line: 0, msg: "no points".into() })?;
        PointSet::from_flat(dim, coords)
    }

    /// Shortest round-trip formatting, so `parse(to_text())` is bit-exact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in self.iter() {
            let line: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn read(path: impl AsRef<Path>, dim: Option<usize>) -> Result<PointSet> {
        let text = std::fs::read_to_string(path)?;
        PointSet::parse(&text, dim)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// `sqrt(mean_i |T(x_i) - y_i|^2)` over index-aligned inlier pairs.
pub fn rms_error(model_inliers: &PointSet, scene_inliers: &PointSet, transform: &Transform) -> Result<f64> {
    if model_inliers.len() != scene_inliers.len() {
        return Err(Error::CountMismatch(model_inliers.len(), scene_inliers.len()));
    }
    if model_inliers.dim() != transform.dim() || scene_inliers.dim() != transform.dim() {
        return Err(Error::DimensionMismatch { expected: transform.dim(), got: model_inliers.dim() });
    }
    if model_inliers.is_empty() {
        return Err(Error::InvalidArgument("no inliers".into()));
    }
    let sum: f64 = model_inliers
        .iter()
        .zip(scene_inliers.iter())
        .map(|(x, y)| transform.apply(x).iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok((sum / model_inliers.len() as f64).sqrt())
}
