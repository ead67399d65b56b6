//! Comparison models for the forecast-error processes: a first-order
//! autoregressive model, a first-order Markov chain on binned errors, and a
//! mean-reverting jump-diffusion. All of them live on the same value grid as
//! the crossing-state models so the downstream MDP stays discrete.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::error::{Error, Result};
use crate::grid::{Pmf, ValueGrid};
use crate::rng::stream;

/// Lag-1 autoregressive parameters: `e_t = gamma * e_{t-1} + N(0, s^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Params {
    pub gamma: f64,
    pub resid_std: f64,
}

/// Least-squares fit through the origin.
pub fn fit_ar1(errors: &[f64]) -> Result<Ar1Params> {
    if errors.len() < 3 {
        return Err(Error::Training("need at least 3 points to fit AR(1)".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for w in errors.windows(2) {
        num += w[1] * w[0];
        den += w[0] * w[0];
    }
    let gamma = if den > 0.0 { num / den } else { 0.0 };
    let mut ssr = 0.0;
    for w in errors.windows(2) {
        let r = w[1] - gamma * w[0];
        ssr += r * r;
    }
    let resid_std = (ssr / (errors.len() - 1) as f64).sqrt();
    Ok(Ar1Params { gamma, resid_std })
}

/// Sample an AR(1) path, snapping each value onto the grid. The recursion
/// applies to the snapped value so the process stays on the discrete states
/// the dynamic program works with.
pub fn sample_ar1(
    params: &Ar1Params,
    grid: &ValueGrid,
    horizon: usize,
    seed: u64,
    init: f64,
) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidInput("sample horizon must be >= 1".into()));
    }
    let mut rng = ar_noise_stream(seed);
    sample_ar1_rng(params, grid, horizon, &mut rng, init)
}

pub(crate) fn ar_noise_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, "ar-noise", 0)
}

fn sample_ar1_rng(
    params: &Ar1Params,
    grid: &ValueGrid,
    horizon: usize,
    rng: &mut ChaCha8Rng,
    init: f64,
) -> Result<Vec<f64>> {
    let noise = Normal::new(0.0, params.resid_std.max(0.0))
        .map_err(|e| Error::InvalidInput(format!("bad residual std: {e}")))?;
    let mut out = Vec::with_capacity(horizon);
    let mut prev = grid.value(grid.snap(init));
    out.push(prev);
    for _ in 1..horizon {
        let draw = if params.resid_std > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        };
        prev = grid.value(grid.snap(params.gamma * prev + draw));
        out.push(prev);
    }
    Ok(out)
}

/// Grid-cell transition row for an AR(1) state: the Gaussian step integrated
/// over the snap cell of each grid point, tails folded into the end cells.
pub fn ar1_transition_row(params: &Ar1Params, grid: &ValueGrid, from: f64) -> Pmf {
    gaussian_row(grid, params.gamma * from, params.resid_std, None)
}

fn gaussian_row(grid: &ValueGrid, mean: f64, std: f64, extra: Option<(f64, f64)>) -> Pmf {
    let len = grid.len();
    let mut probs = vec![0.0f64; len];
    if std <= 0.0 && extra.is_none() {
        probs[grid.snap(mean)] = 1.0;
        return Pmf { probs };
    }
    let half = grid.step() / 2.0;
    let cell_mass = |lo: f64, hi: f64| -> f64 {
        match extra {
            None => {
                let d = NormalDist::new(mean, std.max(1e-12)).unwrap();
                d.cdf(hi) - d.cdf(lo)
            }
            Some((jump_prob, jump_std)) => {
                let base = NormalDist::new(mean, std.max(1e-12)).unwrap();
                let spike_std = (std * std + jump_std * jump_std).sqrt().max(1e-12);
                let spiked = NormalDist::new(mean, spike_std).unwrap();
                (1.0 - jump_prob) * (base.cdf(hi) - base.cdf(lo))
                    + jump_prob * (spiked.cdf(hi) - spiked.cdf(lo))
            }
        }
    };
    for (k, p) in probs.iter_mut().enumerate() {
        let v = grid.value(k);
        let lo = if k == 0 { f64::NEG_INFINITY } else { v - half };
        let hi = if k == len - 1 { f64::INFINITY } else { v + half };
        *p = cell_mass(lo, hi);
    }
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    Pmf { probs }
}

/// First-order Markov chain on quantile-binned errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChainModel {
    /// Marginal quantile edges of the previous error, length `bins - 1`.
    pub edges: Vec<f64>,
    /// Conditional successor PMFs per bin, on the grid.
    pub rows: Vec<Pmf>,
}

impl MarkovChainModel {
    pub fn bin_of(&self, value: f64) -> usize {
        self.edges.iter().filter(|e| **e <= value).count()
    }

    pub fn transition_row(&self, from: f64) -> &Pmf {
        &self.rows[self.bin_of(from)]
    }
}

/// Bin previous errors into `bins` marginal quantile bins and collect the
/// conditional successor histograms on the grid.
pub fn fit_markov_chain(errors: &[f64], grid: &ValueGrid, bins: usize) -> Result<MarkovChainModel> {
    if bins == 0 {
        return Err(Error::InvalidInput("bin count must be >= 1".into()));
    }
    if errors.len() < 2 {
        return Err(Error::Training("need at least 2 points".into()));
    }
    let mut sorted: Vec<f64> = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut edges: Vec<Option<f64>> = vec![None; bins - 1];
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == v {
            j += 1;
        }
        let bin = (((bins * i) as f64 / n as f64).floor() as usize).min(bins - 1);
        if bin >= 1 {
            for e in edges[..bin].iter_mut().filter(|e| e.is_none()) {
                *e = Some(v);
            }
        }
        i = j;
    }
    let beyond = grid.max() + grid.step();
    let edges: Vec<f64> = edges.into_iter().map(|e| e.unwrap_or(beyond)).collect();
    let bin_of = |v: f64| edges.iter().filter(|e| **e <= v).count();

    let mut counts = vec![vec![0.0f64; grid.len()]; bins];
    for w in errors.windows(2) {
        counts[bin_of(w[0])][grid.snap(w[1])] += 1.0;
    }
    let marginal: Vec<f64> = {
        let mut m = vec![0.0; grid.len()];
        for row in &counts {
            for (a, c) in m.iter_mut().zip(row) {
                *a += c;
            }
        }
        m
    };
    let rows = counts
        .iter()
        .map(|c| {
            Pmf::from_counts(c)
                .or_else(|| Pmf::from_counts(&marginal))
                .expect("nonempty training sample")
        })
        .collect();
    Ok(MarkovChainModel { edges, rows })
}

pub fn sample_markov_chain(
    model: &MarkovChainModel,
    grid: &ValueGrid,
    horizon: usize,
    seed: u64,
    init: f64,
) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidInput("sample horizon must be >= 1".into()));
    }
    let mut rng = stream(seed, "markov-chain", 0);
    let mut out = Vec::with_capacity(horizon);
    let mut prev = grid.value(grid.snap(init));
    out.push(prev);
    for _ in 1..horizon {
        let row = model.transition_row(prev);
        prev = grid.value(row.sample_index(rng.random::<f64>()));
        out.push(prev);
    }
    Ok(out)
}

/// Mean reversion with jump-diffusion:
/// `e_t = gamma * e_{t-1} + N(0, s_base^2) + 1{U < p} N(0, s_jump^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrjdParams {
    pub gamma: f64,
    pub base_std: f64,
    pub jump_std: f64,
    pub jump_prob: f64,
}

impl MrjdParams {
    pub fn validate(&self) -> Result<()> {
        if self.base_std < 0.0 || self.jump_std < 0.0 {
            return Err(Error::InvalidInput("stds must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.jump_prob) {
            return Err(Error::InvalidInput("jump probability must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Fit the MRJD by AR least squares, classifying residuals beyond three
/// standard deviations as spikes.
pub fn fit_mrjd(errors: &[f64]) -> Result<MrjdParams> {
    let ar = fit_ar1(errors)?;
    let residuals: Vec<f64> = errors.windows(2).map(|w| w[1] - ar.gamma * w[0]).collect();
    let threshold = 3.0 * ar.resid_std;
    let (spikes, base): (Vec<f64>, Vec<f64>) =
        residuals.iter().partition(|r| r.abs() > threshold);
    let var = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>() / xs.len().max(1) as f64;
    let base_std = var(&base).sqrt();
    let jump_prob = spikes.len() as f64 / residuals.len() as f64;
    let jump_std = if spikes.is_empty() {
        0.0
    } else {
        (var(&spikes) - base_std * base_std).max(0.0).sqrt()
    };
    Ok(MrjdParams {
        gamma: ar.gamma,
        base_std,
        jump_std,
        jump_prob,
    })
}

/// Sample an MRJD path; also reports which steps carried a jump.
///
/// Base noise and the jump stream are drawn from independent substreams, so
/// `jump_prob = 0` reproduces the AR(1) path for the same seed.
pub fn sample_mrjd_with_flags(
    params: &MrjdParams,
    grid: &ValueGrid,
    horizon: usize,
    seed: u64,
    init: f64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    params.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidInput("sample horizon must be >= 1".into()));
    }
    let mut base_rng = ar_noise_stream(seed);
    let mut jump_rng = stream(seed, "mrjd-jump", 0);
    let base = Normal::new(0.0, params.base_std.max(0.0))
        .map_err(|e| Error::InvalidInput(format!("bad base std: {e}")))?;
    let jump = Normal::new(0.0, params.jump_std.max(0.0))
        .map_err(|e| Error::InvalidInput(format!("bad jump std: {e}")))?;
    let mut out = Vec::with_capacity(horizon);
    let mut flags = Vec::with_capacity(horizon);
    let mut prev = grid.value(grid.snap(init));
    out.push(prev);
    flags.push(false);
    for _ in 1..horizon {
        let mut next = params.gamma * prev;
        if params.base_std > 0.0 {
            next += base.sample(&mut base_rng);
        }
        let jumped = params.jump_prob > 0.0 && jump_rng.random::<f64>() < params.jump_prob;
        if jumped && params.jump_std > 0.0 {
            next += jump.sample(&mut jump_rng);
        }
        prev = grid.value(grid.snap(next));
        out.push(prev);
        flags.push(jumped);
    }
    Ok((out, flags))
}

pub fn sample_mrjd(
    params: &MrjdParams,
    grid: &ValueGrid,
    horizon: usize,
    seed: u64,
    init: f64,
) -> Result<Vec<f64>> {
    sample_mrjd_with_flags(params, grid, horizon, seed, init).map(|(p, _)| p)
}

/// Grid-cell transition row for an MRJD state: a two-component Gaussian
/// mixture integrated over snap cells.
pub fn mrjd_transition_row(params: &MrjdParams, grid: &ValueGrid, from: f64) -> Pmf {
    gaussian_row(
        grid,
        params.gamma * from,
        params.base_std,
        Some((params.jump_prob, params.jump_std)),
    )
}
