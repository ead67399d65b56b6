//! Backward ADP with parametric value functions.
//!
//! Each backward step fits a linear-in-parameters surface to the sampled
//! pre-decision values, then computes exact expectations of the fitted
//! surface for every post-decision state. The standard basis is
//!
//! ```text
//! phi = [1, (C_E - 0.5)(B_E + 1), E, E^2, (C_P - 0.5)(B_P + 1), P, P^2,
//!        R, R^2, E*P, E*R, P*R]
//! ```
//!
//! with `E` in MW, `P` in $/MWh and `R` in MWh. Because every basis term is
//! a product of per-process terms and the wind and price transitions are
//! independent, the expected feature vector factorizes into per-process
//! means, making the expectation step closed-form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{CompactSpace, ScenarioConfig};
use crate::process::{Models, ProcessModel};
use crate::rng::stream;

use super::{
    check_budget, progress_line, terminal_table, DecisionOptions, DynamicsCache, LinearForm,
    LinearVfa, SolverConfig,
};

/// Number of features in the standard basis, intercept included.
pub const STANDARD_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// The twelve-term polynomial basis above.
    Standard,
    /// One indicator per compact pre-decision state (exact-recovery tests).
    Saturated,
}

/// Regime term of one process: `(C - 0.5) * (B + 1)` for the crossing model,
/// a sign step for the value-indexed baselines.
pub fn regime_term(model: &ProcessModel, state: usize, value: f64) -> f64 {
    match model {
        ProcessModel::Hsmm(m) => {
            let c = m.state_positive(state) as u8 as f64;
            (c - 0.5) * (m.state_duration_bin(state) as f64 + 1.0)
        }
        _ => ((value > 0.0) as u8 as f64) - 0.5,
    }
}

/// The standard feature vector from scalar components.
pub fn standard_features(
    wind_term: f64,
    e_mw: f64,
    price_term: f64,
    p: f64,
    r_mwh: f64,
) -> [f64; STANDARD_DIM] {
    [
        1.0,
        wind_term,
        e_mw,
        e_mw * e_mw,
        price_term,
        p,
        p * p,
        r_mwh,
        r_mwh * r_mwh,
        e_mw * p,
        e_mw * r_mwh,
        p * r_mwh,
    ]
}

/// Features of a compact pre-decision state.
#[allow(clippy::too_many_arguments)]
pub fn basis_features(
    basis: BasisKind,
    scenario: &ScenarioConfig,
    models: &Models,
    space: &CompactSpace,
    t: usize,
    r_idx: usize,
    wp: usize,
    pp: usize,
) -> Vec<f64> {
    match basis {
        BasisKind::Standard => {
            let (ws, wv) = space.wind_pairs[wp];
            let (ps, pv) = space.price_pairs[pp];
            let wind_raw = models.wind.grid().value(wv);
            let price_raw = models.price.grid().value(pv);
            let e_mw = scenario.wind_value(t, wind_raw) / 1000.0;
            let p = scenario.price_value(t, price_raw);
            let r_mwh = scenario.storage.level_kwh(r_idx) / 1000.0;
            standard_features(
                regime_term(&models.wind, ws, wind_raw),
                e_mw,
                regime_term(&models.price, ps, price_raw),
                p,
                r_mwh,
            )
            .to_vec()
        }
        BasisKind::Saturated => {
            let mut out = vec![0.0; space.pre_count()];
            out[space.pre_index(r_idx, wp, pp)] = 1.0;
            out
        }
    }
}

/// Uniform fitting weights over a sampled set.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Weighted least squares with column standardization and a ridge fallback
/// for singular designs; supports absolute loss through IRLS.
pub fn fit_theta(
    xs: &[Vec<f64>],
    ys: &[f64],
    weights: &[f64],
    loss: super::Loss,
    standardize: bool,
) -> Result<Vec<f64>> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::Training("no samples to fit".into()));
    }
    let dim = xs[0].len();

    let mut mean = vec![0.0; dim];
    let mut std = vec![1.0; dim];
    if standardize {
        for j in 1..dim {
            let mu = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x[j] - mu) * (x[j] - mu)).sum::<f64>() / n as f64;
            mean[j] = mu;
            std[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
    }
    let design = |i: usize, j: usize| (xs[i][j] - mean[j]) / std[j];

    let solve = |w: &[f64]| -> Option<DVector<f64>> {
        let mut a = DMatrix::zeros(n, dim);
        let mut b = DVector::zeros(n);
        for i in 0..n {
            let sw = w[i].max(0.0).sqrt();
            for j in 0..dim {
                a[(i, j)] = sw * design(i, j);
            }
            b[i] = sw * ys[i];
        }
        let svd = a.clone().svd(true, true);
        if let Ok(mut theta) = svd.solve(&b, 1e-12) {
            if theta.iter().all(|v| v.is_finite()) {
                // Two rounds of iterative refinement tighten ill-conditioned
                // polynomial designs to near machine precision.
                for _ in 0..2 {
                    let resid = &b - &a * &theta;
                    if let Ok(delta) = svd.solve(&resid, 1e-12) {
                        theta += delta;
                    }
                }
                return Some(theta);
            }
        }
        // Ridge fallback on the normal equations, sparing the intercept.
        let mut ata = a.transpose() * &a;
        for j in 0..dim {
            if !(standardize && j == 0) {
                ata[(j, j)] += 1e-8;
            } else {
                ata[(j, j)] += 1e-12;
            }
        }
        let atb = a.transpose() * b;
        ata.lu().solve(&atb)
    };

    let mut w = weights.to_vec();
    let mut theta = solve(&w).ok_or_else(|| Error::Training("regression failed".into()))?;
    if loss == super::Loss::Absolute {
        for _ in 0..8 {
            for i in 0..n {
                let pred: f64 = (0..dim).map(|j| theta[j] * design(i, j)).sum();
                w[i] = weights[i] / (ys[i] - pred).abs().max(1e-6);
            }
            let total: f64 = w.iter().sum();
            for wi in w.iter_mut() {
                *wi /= total;
            }
            theta = solve(&w).ok_or_else(|| Error::Training("regression failed".into()))?;
        }
    }

    // Report coefficients in original units.
    let mut out = vec![0.0; dim];
    for j in 1..dim {
        out[j] = theta[j] / std[j];
    }
    out[0] = theta[0] - (1..dim).map(|j| theta[j] * mean[j] / std[j]).sum::<f64>();
    if !standardize {
        out = theta.iter().copied().collect();
    }
    Ok(out)
}

/// Per-process posterior means of the basis terms, one entry per information
/// index, used to assemble exact expected features.
struct ProcessMeans {
    term: Vec<f64>,
    value: Vec<f64>,
    value_sq: Vec<f64>,
}

fn process_means(
    model: &ProcessModel,
    rows: &[Vec<(u32, f64)>],
    pairs: &[(usize, usize)],
    value_of: impl Fn(f64) -> f64,
) -> ProcessMeans {
    let mut term = Vec::with_capacity(rows.len());
    let mut value = Vec::with_capacity(rows.len());
    let mut value_sq = Vec::with_capacity(rows.len());
    for row in rows {
        let mut mass = 0.0;
        let (mut mt, mut mv, mut mv2) = (0.0, 0.0, 0.0);
        for (pair, p) in row {
            let (s, vidx) = pairs[*pair as usize];
            let raw = model.grid().value(vidx);
            let v = value_of(raw);
            mt += p * regime_term(model, s, raw);
            mv += p * v;
            mv2 += p * v * v;
            mass += p;
        }
        term.push(mt / mass);
        value.push(mv / mass);
        value_sq.push(mv2 / mass);
    }
    ProcessMeans {
        term,
        value,
        value_sq,
    }
}

/// Exact expectation of the fitted surface for every post-decision state.
fn expected_post_table(
    basis: BasisKind,
    theta: &[f64],
    scenario: &ScenarioConfig,
    models: &Models,
    space: &CompactSpace,
    cache: &DynamicsCache,
    t_next: usize,
) -> Vec<f64> {
    let class_next = scenario.classes[t_next];
    match basis {
        BasisKind::Standard => {
            let wind = process_means(&models.wind, &cache.wind_rows, &space.wind_pairs, |raw| {
                scenario.wind_value(t_next, raw) / 1000.0
            });
            let price_rows = &cache.price_rows[class_next.min(cache.price_rows.len() - 1)];
            let price = process_means(&models.price, price_rows, &space.price_pairs, |raw| {
                scenario.price_value(t_next, raw)
            });
            let mut out = vec![0.0; space.post_count()];
            for r in 0..space.r_levels {
                let r_mwh = scenario.storage.level_kwh(r) / 1000.0;
                for wi in 0..space.wind_infos {
                    for pi in 0..space.price_infos {
                        let phi = standard_features(
                            wind.term[wi],
                            wind.value[wi],
                            price.term[pi],
                            price.value[pi],
                            r_mwh,
                        );
                        // Second moments replace the squared means.
                        let mut v = 0.0;
                        for (j, th) in theta.iter().enumerate() {
                            let f = match j {
                                3 => wind.value_sq[wi],
                                6 => price.value_sq[pi],
                                _ => phi[j],
                            };
                            v += th * f;
                        }
                        out[space.post_index(r, wi, pi)] = v;
                    }
                }
            }
            out
        }
        BasisKind::Saturated => {
            let wp_n = space.wind_pairs.len();
            let pp_n = space.price_pairs.len();
            let pi_n = space.price_infos;
            let wi_n = space.wind_infos;
            let mut out = vec![0.0; space.post_count()];
            out.par_chunks_mut(pi_n).enumerate().for_each(|(k, chunk)| {
                let r = k / wi_n;
                let wi = k % wi_n;
                for (pi, slot) in chunk.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    let mut norm = 0.0;
                    for (wp, p) in &cache.wind_rows[wi] {
                        let base = (r * wp_n + *wp as usize) * pp_n;
                        for (pp, q) in cache.price_row(class_next, pi) {
                            acc += p * q * theta[base + *pp as usize];
                            norm += p * q;
                        }
                    }
                    *slot = acc / norm;
                }
            });
            out
        }
    }
}

fn sample_uniform(count: usize, want: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<u32> {
    let want = want.clamp(1, count);
    if want == count {
        return (0..count as u32).collect();
    }
    let mut indices: Vec<u32> = (0..count as u32).collect();
    for k in 0..want {
        let j = rng.random_range(k..count);
        indices.swap(k, j);
    }
    indices.truncate(want);
    indices
}

/// Algorithm: backward ADP fitting a parametric surface to sampled
/// pre-decision values at every time step.
pub fn badp_linear(
    scenario: &ScenarioConfig,
    models: &Models,
    cfg: &SolverConfig,
    basis: BasisKind,
) -> Result<LinearVfa> {
    scenario.validate()?;
    cfg.validate()?;
    let space = CompactSpace::build(models, scenario.storage.r_levels);
    check_budget(&space, cfg)?;
    let cache = DynamicsCache::build(models, &space);
    let t_end = scenario.horizon;
    let pre_count = space.pre_count();
    let want = (cfg.alpha * pre_count as f64).ceil() as usize;

    let decode = |idx: u32| {
        let pp_n = space.price_pairs.len();
        let wp_n = space.wind_pairs.len();
        let pp = idx as usize % pp_n;
        let rest = idx as usize / pp_n;
        (rest / wp_n, rest % wp_n, pp)
    };

    let mut thetas: Vec<Vec<f64>> = vec![Vec::new(); t_end + 1];

    // Terminal pre-decision values at a uniform sample of states.
    let terminal = terminal_table(scenario, &space, cfg.terminal);
    let mut rng = stream(cfg.seed, "badp-linear", t_end as u64);
    let mut sampled = sample_uniform(pre_count, want, &mut rng);
    let options_end = DecisionOptions::build(scenario, models, t_end);
    let mut values: Vec<f64> = sampled
        .par_iter()
        .map(|idx| {
            let (r, wp, pp) = decode(*idx);
            super::pre_value(&space, &options_end, &terminal, scenario, models, t_end, r, wp, pp)
        })
        .collect();

    for t in (0..t_end).rev() {
        let started = std::time::Instant::now();
        // Fit the surface for time t+1.
        let xs: Vec<Vec<f64>> = sampled
            .par_iter()
            .map(|idx| {
                let (r, wp, pp) = decode(*idx);
                basis_features(basis, scenario, models, &space, t + 1, r, wp, pp)
            })
            .collect();
        let weights = uniform_weights(xs.len());
        let standardize = basis == BasisKind::Standard;
        thetas[t + 1] = fit_theta(&xs, &values, &weights, cfg.loss, standardize)?;

        // Exact expectation of the fitted surface for every post state.
        let post = expected_post_table(basis, &thetas[t + 1], scenario, models, &space, &cache, t + 1);

        if t > 0 {
            let mut rng = stream(cfg.seed, "badp-linear", t as u64);
            sampled = sample_uniform(pre_count, want, &mut rng);
            let options = DecisionOptions::build(scenario, models, t);
            values = sampled
                .par_iter()
                .map(|idx| {
                    let (r, wp, pp) = decode(*idx);
                    super::pre_value(&space, &options, &post, scenario, models, t, r, wp, pp)
                })
                .collect();
        }
        progress_line(cfg, "badp-linear", t, pre_count, sampled.len(), started.elapsed().as_millis());
    }

    Ok(LinearVfa {
        horizon: t_end,
        basis,
        form: LinearForm::PreExpectation,
        terminal: cfg.terminal,
        thetas,
    })
}

/// Post-decision surface values for a linear VFA at time `t` (expectations
/// of the `t + 1` surface), used by the policy.
pub fn linear_post_table(
    vfa: &LinearVfa,
    scenario: &ScenarioConfig,
    models: &Models,
    space: &CompactSpace,
    cache: &DynamicsCache,
    t: usize,
) -> Vec<f64> {
    if t >= vfa.horizon {
        return terminal_table(scenario, space, vfa.terminal);
    }
    expected_post_table(
        vfa.basis,
        &vfa.thetas[t + 1],
        scenario,
        models,
        space,
        cache,
        t + 1,
    )
}
