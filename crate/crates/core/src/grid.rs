//! Uniform value grids for discretized errors and levels.
//!
//! All error distributions live on a fixed grid so that transition sums are
//! exact and model states are countable. Grid points are `min + k*step` for
//! `k = 0..len`. Snapping is sign-aware where a process distinguishes the
//! strictly-positive regime from the nonpositive one (zero counts as
//! nonpositive).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializable grid description: `{min, max, step}` with `max = min + k*step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<ValueGrid> {
        ValueGrid::new(self.min, self.max, self.step)
    }
}

/// A validated uniform grid with fast value/index conversions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    min: f64,
    step: f64,
    len: usize,
}

impl ValueGrid {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        if step <= 0.0 || step.is_nan() || !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidInput(format!(
                "grid requires finite min < max and step > 0, got min={min} max={max} step={step}"
            )));
        }
        if min >= max {
            return Err(Error::InvalidInput(format!(
                "grid min {min} must be below max {max}"
            )));
        }
        let span = (max - min) / step;
        let k = span.round();
        if (span - k).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "grid span {} is not an integer multiple of step {step}",
                max - min
            )));
        }
        Ok(Self {
            min,
            step,
            len: k as usize + 1,
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            min: self.min,
            max: self.value(self.len - 1),
            step: self.step,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.value(self.len - 1)
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.min + self.step * idx as f64
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|i| self.value(i))
    }

    /// Exact membership lookup (within a small tolerance of a grid point).
    pub fn index_of(&self, v: f64) -> Option<usize> {
        let k = (v - self.min) / self.step;
        let r = k.round();
        if r < 0.0 || r as usize >= self.len {
            return None;
        }
        if (k - r).abs() * self.step > 1e-6 * self.step.max(1.0) {
            return None;
        }
        Some(r as usize)
    }

    /// Nearest grid index, clamped to the grid range.
    pub fn snap(&self, v: f64) -> usize {
        let k = ((v - self.min) / self.step).round();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.len - 1)
        }
    }

    /// Nearest grid index within a sign regime: strictly positive values when
    /// `positive`, values `<= 0` otherwise. Keeps snapped errors consistent
    /// with the crossing state that emitted them.
    pub fn snap_signed(&self, v: f64, positive: bool) -> usize {
        let idx = self.snap(v);
        let val = self.value(idx);
        if positive {
            if val > 0.0 {
                idx
            } else {
                self.first_positive_index()
            }
        } else if val <= 0.0 {
            idx
        } else {
            self.last_nonpositive_index()
        }
    }

    /// Smallest index whose value is strictly positive.
    pub fn first_positive_index(&self) -> usize {
        let k = (-self.min) / self.step;
        let idx = k.floor() as isize + 1;
        (idx.max(0) as usize).min(self.len - 1)
    }

    /// Largest index whose value is `<= 0`.
    pub fn last_nonpositive_index(&self) -> usize {
        self.first_positive_index().saturating_sub(1)
    }

    /// Whether the grid point at `idx` lies in the given sign regime.
    pub fn sign_matches(&self, idx: usize, positive: bool) -> bool {
        (self.value(idx) > 0.0) == positive
    }
}

/// A probability mass function over a [`ValueGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    pub probs: Vec<f64>,
}

impl Pmf {
    pub fn zeros(len: usize) -> Self {
        Self {
            probs: vec![0.0; len],
        }
    }

    /// Normalized histogram over grid indices.
    pub fn from_counts(counts: &[f64]) -> Option<Self> {
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return None;
        }
        Some(Self {
            probs: counts.iter().map(|c| c / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.total() - 1.0).abs() <= tol && self.probs.iter().all(|p| *p >= 0.0)
    }

    /// Convex combination `w*a + (1-w)*b`.
    pub fn mix(a: &Pmf, b: &Pmf, w: f64) -> Pmf {
        debug_assert_eq!(a.len(), b.len());
        Pmf {
            probs: a
                .probs
                .iter()
                .zip(&b.probs)
                .map(|(x, y)| w * x + (1.0 - w) * y)
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Pmf, w: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (s, o) in self.probs.iter_mut().zip(&other.probs) {
            *s += w * o;
        }
    }

    /// Inverse-CDF sampling given a uniform draw in `[0, 1)`.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Guard against accumulated rounding on normalized inputs.
        self.probs
            .iter()
            .rposition(|p| *p > 0.0)
            .unwrap_or(self.probs.len() - 1)
    }

    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| (i, *p))
    }
}
