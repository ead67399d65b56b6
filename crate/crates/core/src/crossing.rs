//! Crossing-time extraction and quantile quantization.
//!
//! A crossing is a maximal run of periods during which the error from the
//! reference series keeps one sign. Zero errors count as nonpositive, matching
//! the regime indicator `C_t = 1{e_t > 0}`. A segment entered at time `s` and
//! exited before `s + d` has complete duration `d`; the running crossing time
//! starts at 0 on entry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TrainingSeries;

/// Element-wise error `actual - reference`.
pub fn compute_errors(series: &TrainingSeries) -> Result<Vec<f64>> {
    series.validate()?;
    Ok(series
        .actual
        .iter()
        .zip(&series.reference)
        .map(|(a, r)| a - r)
        .collect())
}

/// One maximal constant-sign run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub positive: bool,
    pub start: usize,
    pub len: usize,
}

/// Sign segments plus the up/down switch index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crossings {
    pub segments: Vec<Segment>,
    /// Indices `t` where the error enters the positive regime.
    pub up_indices: Vec<usize>,
    /// Indices `t` where the error enters the nonpositive regime.
    pub down_indices: Vec<usize>,
}

impl Crossings {
    /// Complete durations per sign. The final segment is still running when
    /// the series ends and is excluded.
    pub fn complete_durations(&self) -> (Vec<u32>, Vec<u32>) {
        let mut up = Vec::new();
        let mut down = Vec::new();
        if self.segments.len() < 2 {
            return (up, down);
        }
        for seg in &self.segments[..self.segments.len() - 1] {
            if seg.positive {
                up.push(seg.len as u32);
            } else {
                down.push(seg.len as u32);
            }
        }
        (up, down)
    }

    /// Segment index covering time `t`.
    pub fn segment_at(&self, t: usize) -> usize {
        match self
            .segments
            .binary_search_by(|s| s.start.cmp(&t))
        {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }
}

/// Partition an error sequence into constant-sign segments.
pub fn extract_crossings(errors: &[f64]) -> Crossings {
    assert!(!errors.is_empty(), "extract_crossings needs a nonempty sequence");
    let mut segments = Vec::new();
    let mut up_indices = Vec::new();
    let mut down_indices = Vec::new();
    let mut start = 0usize;
    let mut sign = errors[0] > 0.0;
    for (t, e) in errors.iter().enumerate().skip(1) {
        let s = *e > 0.0;
        if s != sign {
            segments.push(Segment {
                positive: sign,
                start,
                len: t - start,
            });
            if s {
                up_indices.push(t);
            } else {
                down_indices.push(t);
            }
            start = t;
            sign = s;
        }
    }
    segments.push(Segment {
        positive: sign,
        start,
        len: errors.len() - start,
    });
    Crossings {
        segments,
        up_indices,
        down_indices,
    }
}

/// Empirical CDF over integer durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SojournCdf {
    /// Sorted `(duration, F(duration))` pairs; the last F is 1.
    pub points: Vec<(u32, f64)>,
}

impl SojournCdf {
    pub fn from_durations(durations: &[u32]) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::Training("empty duration list".into()));
        }
        let mut sorted = durations.to_vec();
        sorted.sort_unstable();
        let n = sorted.len() as f64;
        let mut points: Vec<(u32, f64)> = Vec::new();
        let mut seen = 0usize;
        let mut i = 0usize;
        while i < sorted.len() {
            let d = sorted[i];
            let mut j = i;
            while j < sorted.len() && sorted[j] == d {
                j += 1;
            }
            seen += j - i;
            points.push((d, seen as f64 / n));
            i = j;
        }
        // Pin the terminal value exactly to 1.
        if let Some(last) = points.last_mut() {
            last.1 = 1.0;
        }
        Ok(Self { points })
    }

    /// `F(tau)`: fraction of complete durations `<= tau`.
    pub fn eval(&self, tau: u32) -> f64 {
        match self.points.binary_search_by(|(d, _)| d.cmp(&tau)) {
            Ok(i) => self.points[i].1,
            Err(0) => 0.0,
            Err(i) => self.points[i - 1].1,
        }
    }

    /// Largest duration with positive mass.
    pub fn tau_max(&self) -> u32 {
        self.points.last().map(|(d, _)| *d).unwrap_or(0)
    }

    /// One-step exit probability given the segment has lasted `occupied`
    /// periods: `P(D = occupied | D >= occupied)`.
    pub fn hazard(&self, occupied: u32) -> f64 {
        let survive_prev = 1.0 - self.eval(occupied.saturating_sub(1));
        if survive_prev <= 0.0 {
            return 1.0;
        }
        ((self.eval(occupied) - self.eval(occupied.saturating_sub(1))) / survive_prev).clamp(0.0, 1.0)
    }

    /// Kolmogorov-Smirnov distance against another duration CDF.
    pub fn ks_distance(&self, other: &SojournCdf) -> f64 {
        let top = self.tau_max().max(other.tau_max());
        let mut ks: f64 = 0.0;
        for d in 0..=top {
            ks = ks.max((self.eval(d) - other.eval(d)).abs());
        }
        ks
    }
}

/// Quantile-binned durations: bin edges plus the per-bin sojourn CDFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedDurations {
    /// `edges[b-1]` is the smallest duration belonging to bin `b`.
    pub edges: Vec<u32>,
    /// One empirical CDF per bin; empty bins fall back to the pooled CDF.
    pub cdfs: Vec<SojournCdf>,
    /// Bins that received no training durations.
    pub empty_bins: Vec<usize>,
}

impl QuantizedDurations {
    /// Bin lookup by edge count; right-closed at the top bin.
    pub fn bin_of(&self, duration: u32) -> usize {
        self.edges.iter().filter(|e| **e <= duration).count()
    }
}

/// Quantile bin index under the left-continuous empirical CDF
/// `F(x) = #{sample < x} / n`, clamped into the top bin.
fn quantile_bin(count_below: usize, n: usize, bins: usize) -> usize {
    let f = count_below as f64 / n as f64;
    ((bins as f64 * f).floor() as usize).min(bins - 1)
}

/// Split complete durations into `m` quantile bins and build per-bin CDFs.
///
/// A duration `d` belongs to bin `b` when `q_b <= F(d) < q_{b+1}` at the
/// quantile points `q_b = b/m`, with the top bin right-closed.
pub fn quantize_durations(durations: &[u32], m: usize) -> Result<QuantizedDurations> {
    if durations.is_empty() {
        return Err(Error::Training(
            "cannot quantize an empty duration list".into(),
        ));
    }
    if m == 0 {
        return Err(Error::InvalidInput("duration bin count must be >= 1".into()));
    }
    let mut sorted = durations.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();

    let mut per_bin: Vec<Vec<u32>> = vec![Vec::new(); m];
    let mut edges: Vec<Option<u32>> = vec![None; m.saturating_sub(1)];
    let mut i = 0usize;
    while i < n {
        let d = sorted[i];
        let bin = quantile_bin(i, n, m);
        let mut j = i;
        while j < n && sorted[j] == d {
            per_bin[bin].push(sorted[j]);
            j += 1;
        }
        if bin >= 1 && edges[bin - 1].is_none() {
            for e in edges[..bin].iter_mut().filter(|e| e.is_none()) {
                *e = Some(d);
            }
        }
        i = j;
    }
    // Bins beyond the largest occupied one never trigger; close their edges
    // just past the observed maximum so lookups stay monotone.
    let top = sorted[n - 1];
    let edges: Vec<u32> = edges
        .into_iter()
        .map(|e| e.unwrap_or(top + 1))
        .collect();

    let pooled = SojournCdf::from_durations(&sorted)?;
    let mut empty_bins = Vec::new();
    let mut cdfs = Vec::with_capacity(m);
    for (b, ds) in per_bin.iter().enumerate() {
        if ds.is_empty() {
            empty_bins.push(b);
            cdfs.push(pooled.clone());
        } else {
            cdfs.push(SojournCdf::from_durations(ds)?);
        }
    }
    Ok(QuantizedDurations {
        edges,
        cdfs,
        empty_bins,
    })
}

/// Empirical complete-crossing CDFs (up, down) of an error path.
pub fn crossing_time_cdf(errors: &[f64]) -> (Option<SojournCdf>, Option<SojournCdf>) {
    let crossings = extract_crossings(errors);
    let (up, down) = crossings.complete_durations();
    (
        SojournCdf::from_durations(&up).ok(),
        SojournCdf::from_durations(&down).ok(),
    )
}

/// Diagnostic: per-segment areas between the error path and zero (energy
/// surplus/deficit per complete crossing), split by sign.
pub fn crossing_areas(errors: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let crossings = extract_crossings(errors);
    let mut up = Vec::new();
    let mut down = Vec::new();
    if crossings.segments.len() < 2 {
        return (up, down);
    }
    for seg in &crossings.segments[..crossings.segments.len() - 1] {
        let area: f64 = errors[seg.start..seg.start + seg.len].iter().sum();
        if seg.positive {
            up.push(area);
        } else {
            down.push(area.abs());
        }
    }
    (up, down)
}
