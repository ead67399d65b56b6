//! The crossing-state hidden semi-Markov model.
//!
//! A crossing state is the pair `(C, B)` of the current sign regime and the
//! quantile bin of the segment's eventual complete duration. Per-state sojourn
//! CDFs drive duration-dependent switch probabilities; conditional error
//! distributions are keyed by crossing state, by the (state-relative) quantile
//! bin of the current error, and, for prices, by a temperature class.
//!
//! The one-step predictive density given the full information state
//! `(i, tau, b)` mixes the stay and entry distributions:
//!
//! ```text
//! P(e' | i, tau, b) = (1 - F_i(tau)) * stay_i(e' | b)
//!                   + F_i(tau) * sum_{i' != i} P(i'|i) * entry_{i'}(e')
//! ```
//!
//! Path sampling advances the hidden segment with the conditional exit hazard
//! `P(D = k | D >= k)` of the per-state sojourn CDF, so simulated complete
//! crossing times reproduce the trained sojourn distributions exactly.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crossing::{
    compute_errors, extract_crossings, quantize_durations, QuantizedDurations,
};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Pmf, ValueGrid};
use crate::price::{seasonal_decompose, temperature_features, PriceModelExtras};
use crate::rng::stream;
use crate::series::TrainingSeries;

/// Bin counts and the error grid for one process model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelHyperparams {
    /// Duration-bin count per sign.
    pub m: usize,
    /// Error-bin count per crossing state.
    pub n: usize,
    /// Error grid.
    pub grid: GridSpec,
}

impl ModelHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidInput(
                "hyperparams require m >= 1 and n >= 1".into(),
            ));
        }
        let grid = self.grid.build()?;
        if grid.min() > 0.0 || grid.max() <= 0.0 {
            return Err(Error::InvalidInput(
                "error grid must span both sign regimes (min <= 0 < max)".into(),
            ));
        }
        Ok(())
    }
}

/// Notes recorded while fitting: empty cells, fallbacks, degenerate bins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub flags: Vec<String>,
    pub complete_up_segments: usize,
    pub complete_down_segments: usize,
}

/// Trained crossing-state model for one process (wind errors or price errors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingStateModel {
    pub hyper: ModelHyperparams,
    pub grid: ValueGrid,
    /// Temperature classes the conditional PMFs are keyed by (1 for wind).
    pub n_classes: usize,
    /// Quantized complete durations per sign: `[down, up]`.
    pub duration_bins: [QuantizedDurations; 2],
    /// Switch transition matrix `P(i'|i)` with zero diagonal.
    pub switch_matrix: Vec<Vec<f64>>,
    /// Compact transition matrix allowing self-transitions.
    pub compact_matrix: Vec<Vec<f64>>,
    /// Per-state n-quantile error-bin edges.
    pub error_edges: Vec<Vec<f64>>,
    /// `stay_pmfs[state][error_bin][class]`: next-error PMF within a segment.
    pub stay_pmfs: Vec<Vec<Vec<Pmf>>>,
    /// `entry_pmfs[state][class]`: first-error PMF after switching into `state`.
    pub entry_pmfs: Vec<Vec<Pmf>>,
    /// Price-only seasonal reference and temperature thresholds.
    pub extras: Option<PriceModelExtras>,
    pub diagnostics: TrainingDiagnostics,
}

/// One simulated path with its hidden trajectory for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub errors: Vec<f64>,
    pub states: Vec<usize>,
    pub taus: Vec<u32>,
}

impl CrossingStateModel {
    pub fn state_count(&self) -> usize {
        2 * self.hyper.m
    }

    pub fn state_id(&self, positive: bool, bin: usize) -> usize {
        (positive as usize) * self.hyper.m + bin
    }

    pub fn state_positive(&self, id: usize) -> bool {
        id >= self.hyper.m
    }

    pub fn state_duration_bin(&self, id: usize) -> usize {
        id % self.hyper.m
    }

    /// Sojourn CDF of crossing state `id`.
    pub fn sojourn(&self, id: usize) -> &crate::crossing::SojournCdf {
        let sign = self.state_positive(id) as usize;
        &self.duration_bins[sign].cdfs[self.state_duration_bin(id)]
    }

    /// Duration-bin lookup for a completed crossing of the given sign.
    pub fn duration_bin(&self, positive: bool, duration: u32) -> usize {
        self.duration_bins[positive as usize].bin_of(duration)
    }

    /// State-relative error bin of a grid value.
    pub fn error_bin(&self, state: usize, error: f64) -> usize {
        self.error_edges[state]
            .iter()
            .filter(|e| **e <= error)
            .count()
    }

    /// Wind models carry a single temperature class.
    pub fn class_at(&self, classes: Option<&[usize]>, t: usize) -> usize {
        match classes {
            Some(c) if !c.is_empty() => c[t % c.len()].min(self.n_classes - 1),
            _ => 0,
        }
    }

    fn switch_mixture(&self, state: usize, class: usize) -> Pmf {
        let mut out = Pmf::zeros(self.grid.len());
        for (next, p) in self.switch_matrix[state].iter().enumerate() {
            if *p > 0.0 {
                out.accumulate(&self.entry_pmfs[next][class], *p);
            }
        }
        out
    }

    /// One-step predictive mixture with an explicit switch weight.
    fn mixture(&self, state: usize, switch_weight: f64, err_bin: usize, class: usize) -> Pmf {
        let stay = &self.stay_pmfs[state][err_bin][class];
        if switch_weight <= 0.0 {
            return stay.clone();
        }
        let sw = self.switch_mixture(state, class);
        Pmf::mix(&sw, stay, switch_weight)
    }

    /// Predictive density of the next error given the full information state
    /// `(i, tau, error_bin)`, mixing stay and switch branches by `F_i(tau)`.
    pub fn predictive_pmf_full(
        &self,
        state: usize,
        tau: u32,
        err_bin: usize,
        class: usize,
    ) -> Pmf {
        let w = self.sojourn(state).eval(tau);
        self.mixture(state, w, err_bin, class)
    }

    /// Predictive density under the compact Markov approximation.
    pub fn predictive_pmf_compact(&self, state: usize, err_bin: usize, class: usize) -> Pmf {
        let row = &self.compact_matrix[state];
        let mut out = Pmf::zeros(self.grid.len());
        out.accumulate(&self.stay_pmfs[state][err_bin][class], row[state]);
        for (next, p) in row.iter().enumerate() {
            if next != state && *p > 0.0 {
                out.accumulate(&self.entry_pmfs[next][class], *p);
            }
        }
        out
    }

    /// Sample one error path with the full semi-Markov mechanism.
    ///
    /// `init` pins the first error (scenario conditioning); without it the
    /// path opens with a fresh entry into a uniformly drawn state. `classes`
    /// supplies per-period temperature classes (cycled) for price models.
    pub fn sample_path(
        &self,
        horizon: usize,
        seed: u64,
        init: Option<f64>,
        classes: Option<&[usize]>,
    ) -> Result<SampledPath> {
        let mut rng = stream(seed, "hsmm-path", 0);
        self.sample_path_rng(&mut rng, horizon, init, classes)
    }

    pub fn sample_path_rng(
        &self,
        rng: &mut ChaCha8Rng,
        horizon: usize,
        init: Option<f64>,
        classes: Option<&[usize]>,
    ) -> Result<SampledPath> {
        if horizon == 0 {
            return Err(Error::InvalidInput("sample horizon must be >= 1".into()));
        }
        let mut errors = Vec::with_capacity(horizon);
        let mut states = Vec::with_capacity(horizon);
        let mut taus = Vec::with_capacity(horizon);

        let mut state;
        let mut tau: u32 = 0;
        match init {
            Some(e0) => {
                let positive = e0 > 0.0;
                let bin = rng.random_range(0..self.hyper.m);
                state = self.state_id(positive, bin);
                errors.push(self.grid.value(self.grid.snap_signed(e0, positive)));
            }
            None => {
                state = rng.random_range(0..self.state_count());
                let class = self.class_at(classes, 0);
                let idx = self.entry_pmfs[state][class].sample_index(rng.random::<f64>());
                errors.push(self.grid.value(idx));
            }
        }
        states.push(state);
        taus.push(tau);

        for t in 1..horizon {
            let class = self.class_at(classes, t);
            let occupied = tau + 1;
            let hazard = self.sojourn(state).hazard(occupied);
            let pmf = if rng.random::<f64>() < hazard {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let row = &self.switch_matrix[state];
                let mut next = state;
                for (j, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        next = j;
                        break;
                    }
                }
                if next == state {
                    next = row
                        .iter()
                        .rposition(|p| *p > 0.0)
                        .unwrap_or((state + self.hyper.m) % self.state_count());
                }
                state = next;
                tau = 0;
                &self.entry_pmfs[state][class]
            } else {
                tau += 1;
                let prev = errors[t - 1];
                let bin = self.error_bin(state, prev);
                &self.stay_pmfs[state][bin][class]
            };
            let idx = pmf.sample_index(rng.random::<f64>());
            errors.push(self.grid.value(idx));
            states.push(state);
            taus.push(tau);
        }
        Ok(SampledPath {
            errors,
            states,
            taus,
        })
    }

    /// Sample a path from the compact Markov approximation (backward-pass
    /// dynamics); used to validate policies against the model they were
    /// optimized for.
    pub fn sample_path_compact_rng(
        &self,
        rng: &mut ChaCha8Rng,
        horizon: usize,
        init: Option<f64>,
        classes: Option<&[usize]>,
    ) -> Result<SampledPath> {
        if horizon == 0 {
            return Err(Error::InvalidInput("sample horizon must be >= 1".into()));
        }
        let mut errors = Vec::with_capacity(horizon);
        let mut states = Vec::with_capacity(horizon);
        let mut state = match init {
            Some(e0) => {
                let positive = e0 > 0.0;
                let bin = rng.random_range(0..self.hyper.m);
                let s = self.state_id(positive, bin);
                errors.push(self.grid.value(self.grid.snap_signed(e0, positive)));
                s
            }
            None => {
                let s = rng.random_range(0..self.state_count());
                let class = self.class_at(classes, 0);
                let idx = self.entry_pmfs[s][class].sample_index(rng.random::<f64>());
                errors.push(self.grid.value(idx));
                s
            }
        };
        states.push(state);
        for t in 1..horizon {
            let class = self.class_at(classes, t);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = state;
            for (j, p) in self.compact_matrix[state].iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            let pmf = if next == state {
                let bin = self.error_bin(state, errors[t - 1]);
                &self.stay_pmfs[state][bin][class]
            } else {
                &self.entry_pmfs[next][class]
            };
            state = next;
            let idx = pmf.sample_index(rng.random::<f64>());
            errors.push(self.grid.value(idx));
            states.push(state);
        }
        let taus = vec![0; horizon];
        Ok(SampledPath {
            errors,
            states,
            taus,
        })
    }

    /// Fit a wind model: the CSV reference column is the forecast.
    pub fn fit_wind(series: &TrainingSeries, hyper: ModelHyperparams) -> Result<Self> {
        hyper.validate()?;
        let errors = compute_errors(series)?;
        fit_crossing_model(&errors, &[], 1, hyper, None)
    }

    /// Fit a price model: the periodic reference is recomputed from the data
    /// and conditional PMFs are additionally keyed by temperature class.
    pub fn fit_price(series: &TrainingSeries, hyper: ModelHyperparams) -> Result<Self> {
        hyper.validate()?;
        let temp = series.temperature.as_ref().ok_or_else(|| {
            Error::InvalidInput("price training data needs a temperature column".into())
        })?;
        let seasonal = seasonal_decompose(series, crate::series::SLOTS_PER_DAY)?;
        let feats = temperature_features(temp)?;
        let classes: Vec<usize> = feats.classes();
        let errors: Vec<f64> = series
            .actual
            .iter()
            .enumerate()
            .map(|(t, p)| p - seasonal.reference[t])
            .collect();
        let extras = PriceModelExtras {
            seasonal: seasonal.seasonal,
            mean_level: seasonal.mean_level,
            h_s_max: feats.h_s_max,
            h_tr_max: feats.h_tr_max,
        };
        fit_crossing_model(&errors, &classes, 6, hyper, Some(extras))
    }
}

/// Estimate `P(i'|i)` from label pairs at sign-switch indices. Rows for
/// states never observed switching fall back to the pooled same-sign row,
/// then to uniform over opposite-sign states.
pub fn fit_switch_matrix(
    labels: &[Option<usize>],
    switch_indices: &[usize],
    m: usize,
) -> (Vec<Vec<f64>>, Vec<String>) {
    let states = 2 * m;
    let mut counts = vec![vec![0.0f64; states]; states];
    for &t in switch_indices {
        if t == 0 {
            continue;
        }
        if let (Some(from), Some(to)) = (labels[t - 1], labels[t]) {
            counts[from][to] += 1.0;
        }
    }
    normalize_rows(counts, m, false)
}

/// Estimate the compact matrix from all consecutive label pairs.
pub fn fit_compact_matrix(labels: &[Option<usize>], m: usize) -> (Vec<Vec<f64>>, Vec<String>) {
    let states = 2 * m;
    let mut counts = vec![vec![0.0f64; states]; states];
    for t in 1..labels.len() {
        if let (Some(from), Some(to)) = (labels[t - 1], labels[t]) {
            counts[from][to] += 1.0;
        }
    }
    normalize_rows(counts, m, true)
}

fn normalize_rows(
    counts: Vec<Vec<f64>>,
    m: usize,
    allow_diag: bool,
) -> (Vec<Vec<f64>>, Vec<String>) {
    let states = 2 * m;
    let mut flags = Vec::new();
    let mut rows = vec![vec![0.0f64; states]; states];
    for i in 0..states {
        let total: f64 = counts[i].iter().sum();
        if total > 0.0 {
            for j in 0..states {
                rows[i][j] = counts[i][j] / total;
            }
            continue;
        }
        flags.push(format!(
            "state {i}: no observed {} transitions; using sign-level fallback",
            if allow_diag { "compact" } else { "switch" }
        ));
        // Pool counts over the same-sign states.
        let sign_lo = (i / m) * m;
        let mut pooled = vec![0.0f64; states];
        for r in sign_lo..sign_lo + m {
            for j in 0..states {
                pooled[j] += counts[r][j];
            }
        }
        let pooled_total: f64 = pooled.iter().sum();
        if pooled_total > 0.0 {
            for j in 0..states {
                rows[i][j] = pooled[j] / pooled_total;
            }
        } else {
            // Uniform over the opposite sign (switches must flip sign).
            let opp_lo = if i < m { m } else { 0 };
            for j in opp_lo..opp_lo + m {
                rows[i][j] = 1.0 / m as f64;
            }
        }
        if !allow_diag && rows[i][i] > 0.0 {
            // Pooled fallback may include a same-sign self entry; strip it.
            let diag = rows[i][i];
            rows[i][i] = 0.0;
            let rest: f64 = rows[i].iter().sum();
            if rest > 0.0 {
                for v in rows[i].iter_mut() {
                    *v /= rest;
                }
            } else {
                let opp_lo = if i < m { m } else { 0 };
                for j in opp_lo..opp_lo + m {
                    rows[i][j] = 1.0 / m as f64;
                }
            }
            let _ = diag;
        }
    }
    (rows, flags)
}

/// Left-continuous quantile edges of a sample: `edges[b-1]` is the smallest
/// sample value whose quantile bin is at least `b`.
fn quantile_edges(mut values: Vec<f64>, n: usize, beyond: f64) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let count = values.len();
    let mut edges: Vec<Option<f64>> = vec![None; n.saturating_sub(1)];
    let mut i = 0usize;
    while i < count {
        let v = values[i];
        let mut j = i;
        while j < count && values[j] == v {
            j += 1;
        }
        let bin = (((n * i) as f64 / count as f64).floor() as usize).min(n - 1);
        if bin >= 1 {
            for e in edges[..bin].iter_mut().filter(|e| e.is_none()) {
                *e = Some(v);
            }
        }
        i = j;
    }
    edges.into_iter().map(|e| e.unwrap_or(beyond)).collect()
}

/// Conditional error PMFs fitted per `(state, error bin, class)`.
pub struct FittedPmfs {
    pub stay: Vec<Vec<Vec<Pmf>>>,
    pub entry: Vec<Vec<Pmf>>,
    pub edges: Vec<Vec<f64>>,
    pub flags: Vec<String>,
}

/// Build the stay/entry PMFs and per-state error-bin edges.
///
/// Empty conditional cells fall back to the state marginal, then the
/// sign-level marginal, then a uniform PMF over the sign-consistent grid.
pub fn fit_error_pmfs(
    errors: &[f64],
    labels: &[Option<usize>],
    switch_indices: &[usize],
    classes: &[usize],
    hyper: &ModelHyperparams,
    n_classes: usize,
    grid: &ValueGrid,
) -> FittedPmfs {
    let m = hyper.m;
    let n = hyper.n;
    let states = 2 * m;
    let switches: BTreeSet<usize> = switch_indices.iter().copied().collect();
    let class_at = |t: usize| -> usize {
        if classes.is_empty() {
            0
        } else {
            classes[t].min(n_classes - 1)
        }
    };
    let mut flags = Vec::new();

    // Per-state error samples for the quantile edges.
    let mut per_state: Vec<Vec<f64>> = vec![Vec::new(); states];
    for (t, lab) in labels.iter().enumerate() {
        if let Some(i) = lab {
            per_state[*i].push(errors[t]);
        }
    }
    let beyond = grid.max() + grid.step();
    let mut edges: Vec<Vec<f64>> = Vec::with_capacity(states);
    for (i, vals) in per_state.iter().enumerate() {
        if vals.is_empty() {
            flags.push(format!("state {i}: no observed errors; sign-level bin edges"));
            let lo = (i / m) * m;
            let pooled: Vec<f64> = (lo..lo + m).flat_map(|s| per_state[s].clone()).collect();
            edges.push(quantile_edges(pooled, n, beyond));
        } else {
            edges.push(quantile_edges(vals.clone(), n, beyond));
        }
    }
    let bin_of = |state: usize, v: f64| -> usize {
        edges[state].iter().filter(|e| **e <= v).count()
    };

    // Histogram counts.
    let glen = grid.len();
    let mut stay_counts = vec![vec![vec![vec![0.0f64; glen]; n_classes]; n]; states];
    let mut entry_counts = vec![vec![vec![0.0f64; glen]; n_classes]; states];
    for t in 0..errors.len().saturating_sub(1) {
        let succ = t + 1;
        let class = class_at(succ);
        if switches.contains(&succ) {
            if let Some(to) = labels[succ] {
                let positive = to >= m;
                let idx = grid.snap_signed(errors[succ], positive);
                entry_counts[to][class][idx] += 1.0;
            }
        } else if let (Some(i), Some(_)) = (labels[t], labels[succ]) {
            let positive = i >= m;
            let idx = grid.snap_signed(errors[succ], positive);
            let b = bin_of(i, errors[t]);
            stay_counts[i][b][class][idx] += 1.0;
        }
    }

    let uniform_signed = |positive: bool| -> Pmf {
        let mut probs = vec![0.0; glen];
        let (lo, hi) = if positive {
            (grid.first_positive_index(), glen - 1)
        } else {
            (0, grid.last_nonpositive_index())
        };
        let w = 1.0 / (hi - lo + 1) as f64;
        for p in probs[lo..=hi].iter_mut() {
            *p = w;
        }
        Pmf { probs }
    };

    let sum_counts = |acc: &mut Vec<f64>, src: &[f64]| {
        for (a, s) in acc.iter_mut().zip(src) {
            *a += s;
        }
    };

    // Stay PMFs with the fallback chain.
    let mut stay: Vec<Vec<Vec<Pmf>>> = Vec::with_capacity(states);
    for i in 0..states {
        let positive = i >= m;
        // State marginal over bins and classes.
        let mut state_marginal = vec![0.0f64; glen];
        for b in 0..n {
            for c in 0..n_classes {
                sum_counts(&mut state_marginal, &stay_counts[i][b][c]);
            }
        }
        // Sign marginal over same-sign states.
        let lo = (i / m) * m;
        let mut sign_marginal = vec![0.0f64; glen];
        for s in lo..lo + m {
            for b in 0..n {
                for c in 0..n_classes {
                    sum_counts(&mut sign_marginal, &stay_counts[s][b][c]);
                }
            }
        }
        let mut rows = Vec::with_capacity(n);
        for b in 0..n {
            // Bin marginal over classes, one level up from the class cell.
            let mut bin_marginal = vec![0.0f64; glen];
            for c in 0..n_classes {
                sum_counts(&mut bin_marginal, &stay_counts[i][b][c]);
            }
            let mut cells = Vec::with_capacity(n_classes);
            for c in 0..n_classes {
                let pmf = Pmf::from_counts(&stay_counts[i][b][c])
                    .or_else(|| Pmf::from_counts(&bin_marginal))
                    .or_else(|| Pmf::from_counts(&state_marginal))
                    .or_else(|| Pmf::from_counts(&sign_marginal))
                    .unwrap_or_else(|| uniform_signed(positive));
                if stay_counts[i][b][c].iter().sum::<f64>() == 0.0 {
                    flags.push(format!("stay cell (state {i}, bin {b}, class {c}) empty"));
                }
                cells.push(pmf);
            }
            rows.push(cells);
        }
        stay.push(rows);
    }

    // Entry PMFs with the same chain.
    let mut entry: Vec<Vec<Pmf>> = Vec::with_capacity(states);
    for i in 0..states {
        let positive = i >= m;
        let mut state_marginal = vec![0.0f64; glen];
        for c in 0..n_classes {
            sum_counts(&mut state_marginal, &entry_counts[i][c]);
        }
        let lo = (i / m) * m;
        let mut sign_marginal = vec![0.0f64; glen];
        for s in lo..lo + m {
            for c in 0..n_classes {
                sum_counts(&mut sign_marginal, &entry_counts[s][c]);
            }
        }
        let mut cells = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let pmf = Pmf::from_counts(&entry_counts[i][c])
                .or_else(|| Pmf::from_counts(&state_marginal))
                .or_else(|| Pmf::from_counts(&sign_marginal))
                .unwrap_or_else(|| uniform_signed(positive));
            if entry_counts[i][c].iter().sum::<f64>() == 0.0 {
                flags.push(format!("entry cell (state {i}, class {c}) empty"));
            }
            cells.push(pmf);
        }
        entry.push(cells);
    }

    FittedPmfs {
        stay,
        entry,
        edges,
        flags,
    }
}

/// Shared fitting pipeline for wind and price crossing models.
fn fit_crossing_model(
    errors: &[f64],
    classes: &[usize],
    n_classes: usize,
    hyper: ModelHyperparams,
    extras: Option<PriceModelExtras>,
) -> Result<CrossingStateModel> {
    let grid = hyper.grid.build()?;
    if errors.len() < 2 {
        return Err(Error::Training("series too short to fit".into()));
    }
    let crossings = extract_crossings(errors);
    let (up_durs, down_durs) = crossings.complete_durations();
    if up_durs.is_empty() && down_durs.is_empty() {
        return Err(Error::Training(
            "no complete crossings in training data (single-regime series)".into(),
        ));
    }
    let mut flags = Vec::new();
    let mut quantize_sign = |durs: &[u32], other: &[u32], name: &str| -> Result<QuantizedDurations> {
        if durs.is_empty() {
            flags.push(format!("no complete {name}-crossings; pooling both signs"));
            quantize_durations(other, hyper.m)
        } else {
            quantize_durations(durs, hyper.m)
        }
    };
    let down_bins = quantize_sign(&down_durs, &up_durs, "down")?;
    let up_bins = quantize_sign(&up_durs, &down_durs, "up")?;
    for (sign, q) in [("down", &down_bins), ("up", &up_bins)] {
        for b in &q.empty_bins {
            flags.push(format!("{sign} duration bin {b} empty; pooled sojourn CDF"));
        }
    }
    let duration_bins = [down_bins, up_bins];

    // Future-peeking labels: each time gets the crossing state of its segment;
    // the final (still running) segment has no complete duration.
    let mut labels: Vec<Option<usize>> = vec![None; errors.len()];
    let last_seg = crossings.segments.len() - 1;
    for (si, seg) in crossings.segments.iter().enumerate() {
        if si == last_seg {
            continue;
        }
        let bin = duration_bins[seg.positive as usize].bin_of(seg.len as u32);
        let id = (seg.positive as usize) * hyper.m + bin;
        for t in seg.start..seg.start + seg.len {
            labels[t] = Some(id);
        }
    }
    let switch_indices: Vec<usize> = crossings
        .up_indices
        .iter()
        .chain(&crossings.down_indices)
        .copied()
        .collect();

    let (switch_matrix, f1) = fit_switch_matrix(&labels, &switch_indices, hyper.m);
    let (compact_matrix, f2) = fit_compact_matrix(&labels, hyper.m);
    let pmfs = fit_error_pmfs(
        errors,
        &labels,
        &switch_indices,
        classes,
        &hyper,
        n_classes,
        &grid,
    );
    flags.extend(f1);
    flags.extend(f2);
    flags.extend(pmfs.flags);

    Ok(CrossingStateModel {
        hyper,
        grid,
        n_classes,
        duration_bins,
        switch_matrix,
        compact_matrix,
        error_edges: pmfs.edges,
        stay_pmfs: pmfs.stay,
        entry_pmfs: pmfs.entry,
        extras,
        diagnostics: TrainingDiagnostics {
            flags,
            complete_up_segments: up_durs.len(),
            complete_down_segments: down_durs.len(),
        },
    })
}

#[cfg(test)]
pub(crate) mod test_models {
    use super::*;
    use crate::crossing::SojournCdf;

    /// Hand-built m=1, n=1 model on the grid {-2,-1,0,1,2}.
    pub fn tiny_m1(stay_down: [f64; 5], stay_up: [f64; 5], entry_down: [f64; 5], entry_up: [f64; 5], sojourn: Vec<(u32, f64)>) -> CrossingStateModel {
        let hyper = ModelHyperparams {
            m: 1,
            n: 1,
            grid: GridSpec { min: -2.0, max: 2.0, step: 1.0 },
        };
        let grid = hyper.grid.build().unwrap();
        let cdf = SojournCdf { points: sojourn };
        let q = QuantizedDurations {
            edges: vec![],
            cdfs: vec![cdf],
            empty_bins: vec![],
        };
        let pmf = |p: [f64; 5]| Pmf { probs: p.to_vec() };
        CrossingStateModel {
            hyper,
            grid,
            n_classes: 1,
            duration_bins: [q.clone(), q],
            switch_matrix: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            compact_matrix: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            error_edges: vec![vec![], vec![]],
            stay_pmfs: vec![vec![vec![pmf(stay_down)]], vec![vec![pmf(stay_up)]]],
            entry_pmfs: vec![vec![pmf(entry_down)], vec![pmf(entry_up)]],
            extras: None,
            diagnostics: TrainingDiagnostics::default(),
        }
    }

    /// Hand-built m=2, n=1 model with disjoint sojourn supports per bin.
    ///
    /// Down bins: {1,2} and {3,4}; up bins: {1} and {2,3}. Grid {-2..2}.
    pub fn toy_two_bin() -> CrossingStateModel {
        let hyper = ModelHyperparams {
            m: 2,
            n: 1,
            grid: GridSpec { min: -2.0, max: 2.0, step: 1.0 },
        };
        let grid = hyper.grid.build().unwrap();
        let down = QuantizedDurations {
            edges: vec![3],
            cdfs: vec![
                SojournCdf { points: vec![(1, 0.5), (2, 1.0)] },
                SojournCdf { points: vec![(3, 0.6), (4, 1.0)] },
            ],
            empty_bins: vec![],
        };
        let up = QuantizedDurations {
            edges: vec![2],
            cdfs: vec![
                SojournCdf { points: vec![(1, 1.0)] },
                SojournCdf { points: vec![(2, 0.4), (3, 1.0)] },
            ],
            empty_bins: vec![],
        };
        let pmf = |p: [f64; 5]| Pmf { probs: p.to_vec() };
        // States: 0=(down,short) 1=(down,long) 2=(up,short) 3=(up,long).
        // Rows are chosen so short bins are entered ~60% of the time, which
        // keeps the refitted quantile boundary away from the 1/2 knife edge.
        CrossingStateModel {
            hyper,
            grid,
            n_classes: 1,
            duration_bins: [down, up],
            switch_matrix: vec![
                vec![0.0, 0.0, 0.7, 0.3],
                vec![0.0, 0.0, 0.45, 0.55],
                vec![0.7, 0.3, 0.0, 0.0],
                vec![0.45, 0.55, 0.0, 0.0],
            ],
            compact_matrix: vec![
                vec![0.6, 0.0, 0.3, 0.1],
                vec![0.0, 0.8, 0.1, 0.1],
                vec![0.25, 0.25, 0.5, 0.0],
                vec![0.1, 0.2, 0.0, 0.7],
            ],
            error_edges: vec![vec![], vec![], vec![], vec![]],
            stay_pmfs: vec![
                vec![vec![pmf([0.5, 0.4, 0.1, 0.0, 0.0])]],
                vec![vec![pmf([0.2, 0.3, 0.5, 0.0, 0.0])]],
                vec![vec![pmf([0.0, 0.0, 0.0, 0.7, 0.3])]],
                vec![vec![pmf([0.0, 0.0, 0.0, 0.35, 0.65])]],
            ],
            entry_pmfs: vec![
                vec![pmf([0.3, 0.5, 0.2, 0.0, 0.0])],
                vec![pmf([0.45, 0.35, 0.2, 0.0, 0.0])],
                vec![pmf([0.0, 0.0, 0.0, 0.8, 0.2])],
                vec![pmf([0.0, 0.0, 0.0, 0.4, 0.6])],
            ],
            extras: None,
            diagnostics: TrainingDiagnostics::default(),
        }
    }
}
