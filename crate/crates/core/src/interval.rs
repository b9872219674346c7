use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed scalar range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// Sign flip: `{-v : v in self}`.
    pub fn neg(&self) -> Self {
        Self { lo: -self.hi, hi: -self.lo }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn shift(&self, by: f64) -> Self {
        Self { lo: self.lo + by, hi: self.hi + by }
    }
}

/// Axis-aligned box over transform parameters; the unit that gets branched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub intervals: Vec<Interval>,
}

impl ParamBox {
    pub fn new(intervals: Vec<Interval>) -> Self {
        Self { intervals }
    }

    /// `[-half, half]^dim`.
    pub fn cube(dim: usize, half: f64) -> Self {
        Self { intervals: vec![Interval { lo: -half, hi: half }; dim] }
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.intervals.iter().map(Interval::width).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.intervals.iter().map(Interval::mid).collect()
    }

    pub fn volume(&self) -> f64 {
        self.intervals.iter().map(Interval::width).product()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim() && self.intervals.iter().zip(v).all(|(iv, &x)| iv.contains(x))
    }

    pub fn is_subset_of(&self, other: &ParamBox) -> bool {
        self.dim() == other.dim()
            && self.intervals.iter().zip(&other.intervals).all(|(a, b)| a.is_subset_of(b))
    }

    pub fn clamp(&self, v: &[f64]) -> Vec<f64> {
        self.intervals.iter().zip(v).map(|(iv, &x)| iv.clamp(x)).collect()
    }

    /// Sub-box over the dimensions `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ParamBox {
        ParamBox { intervals: self.intervals[range].to_vec() }
    }

    /// Splits at the midpoint of the longest edge (lowest index on ties).
    pub fn bisect_longest_edge(&self) -> Result<(ParamBox, ParamBox)> {
        let mut axis = None;
        let mut best = 0.0;
        for (k, iv) in self.intervals.iter().enumerate() {
            if iv.width() > best {
                best = iv.width();
                axis = Some(k);
            }
        }
        let axis = axis.ok_or(Error::ZeroVolumeBox)?;
        let iv = self.intervals[axis];
        let mid = iv.mid();
        let mut left = self.clone();
        let mut right = self.clone();
        left.intervals[axis].hi = mid;
        right.intervals[axis].lo = mid;
        Ok((left, right))
    }
}
