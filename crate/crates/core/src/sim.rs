//! Forward simulation of policies over scenario sets and the evaluation
//! metrics built on it.
//!
//! All policies on a set share the same exogenous paths (common random
//! numbers), so performance differences are policy differences. Evaluation
//! paths come from the full semi-Markov dynamics; a separate generator draws
//! from the compact backward-pass approximation for model-consistency
//! checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    check_constraints, contribution, resource_update, shifted_contribution,
    transition_exogenous, Decision, ScenarioConfig, SystemState,
};
use crate::policy::PreparedPolicy;
use crate::process::{Models, ProcessModel};
use crate::rng::stream;

/// Worst-case wind outage window in 5-minute steps: 14:00 to 20:00.
pub const WC_WINDOW: (usize, usize) = (168, 240);

/// Paired wind/price error paths sharing indices across policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub label: String,
    pub seed: u64,
    pub wind_paths: Vec<Vec<f64>>,
    pub price_paths: Vec<Vec<f64>>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.wind_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wind_paths.is_empty()
    }
}

/// Per-step record of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub r_kwh: f64,
    pub e_kw: f64,
    pub price: f64,
    pub decision: Decision,
    pub contribution: f64,
}

/// One simulated day under one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub rows: Vec<TraceRow>,
    /// Belief snapshots (wind, price) at each decision epoch.
    pub beliefs: Vec<(crate::process::BeliefTracker, crate::process::BeliefTracker)>,
    pub total_contribution: f64,
    pub total_shifted: f64,
    /// Zero-likelihood belief resets encountered along the path.
    pub belief_resets: usize,
}

/// Roll a prepared policy over one exogenous path. Fails hard if the policy
/// emits an infeasible decision, dumping the offending step.
pub fn simulate_policy(
    policy: &PreparedPolicy,
    scenario: &ScenarioConfig,
    models: &Models,
    wind_path: &[f64],
    price_path: &[f64],
) -> Result<RolloutTrace> {
    let t_end = scenario.horizon;
    if wind_path.len() != t_end + 1 || price_path.len() != t_end + 1 {
        return Err(Error::InvalidInput(format!(
            "paths must carry horizon + 1 = {} points",
            t_end + 1
        )));
    }
    let mut state = SystemState::initial(scenario, models);
    // Pin the initial errors to the path values.
    if (wind_path[0] - state.wind_belief.last_error(&models.wind)).abs() > 1e-9
        || (price_path[0] - state.price_belief.last_error(&models.price)).abs() > 1e-9
    {
        let mut s0 = scenario.clone();
        s0.e0_error = wind_path[0];
        s0.p0_error = price_path[0];
        state = SystemState::initial(&s0, models);
    }

    let mut rows = Vec::with_capacity(t_end + 1);
    let mut beliefs = Vec::with_capacity(t_end + 1);
    let mut total = 0.0;
    let mut total_shifted = 0.0;
    let mut belief_resets = 0usize;

    for t in 0..=t_end {
        beliefs.push((state.wind_belief.clone(), state.price_belief.clone()));
        let d = policy.decide(scenario, models, &state);
        let load = scenario.load_kwh(t);
        if let Err(msg) = check_constraints(&scenario.storage, state.r_kwh, state.e_kw, load, &d) {
            return Err(Error::Infeasible(format!(
                "policy violated constraints at t={t}: {msg}; state R={} E={} P={} decision={:?}",
                state.r_kwh, state.e_kw, state.price, d
            )));
        }
        let c = contribution(state.price, load, scenario.storage.eta, &d);
        total += c;
        total_shifted += shifted_contribution(state.price, scenario.storage.eta, &d);
        rows.push(TraceRow {
            t,
            r_kwh: state.r_kwh,
            e_kw: state.e_kw,
            price: state.price,
            decision: d,
            contribution: c,
        });
        if t < t_end {
            let r_post = resource_update(&scenario.storage, state.r_kwh, &d)?;
            let (next, reset) = transition_exogenous(
                scenario,
                models,
                &state,
                r_post,
                wind_path[t + 1],
                price_path[t + 1],
            );
            belief_resets += reset as usize;
            state = next;
        }
    }

    Ok(RolloutTrace {
        rows,
        beliefs,
        total_contribution: total,
        total_shifted,
        belief_resets,
    })
}

/// Per-path and mean profits of one policy over a scenario set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfitSummary {
    /// Mean baseline-shifted profit (the policy's value-add).
    pub mean_shifted: f64,
    /// Mean raw cumulative contribution.
    pub mean_total: f64,
    pub per_path_shifted: Vec<f64>,
    pub per_path_total: Vec<f64>,
    pub belief_resets: usize,
}

/// Simulate every path of a set under one policy; paths run in parallel and
/// aggregate in path order.
pub fn evaluate_profit(
    policy: &PreparedPolicy,
    scenario: &ScenarioConfig,
    models: &Models,
    set: &ScenarioSet,
) -> Result<ProfitSummary> {
    let traces: Vec<RolloutTrace> = (0..set.len())
        .into_par_iter()
        .map(|k| simulate_policy(policy, scenario, models, &set.wind_paths[k], &set.price_paths[k]))
        .collect::<Result<Vec<_>>>()?;
    let per_path_shifted: Vec<f64> = traces.iter().map(|t| t.total_shifted).collect();
    let per_path_total: Vec<f64> = traces.iter().map(|t| t.total_contribution).collect();
    let n = traces.len().max(1) as f64;
    Ok(ProfitSummary {
        mean_shifted: per_path_shifted.iter().sum::<f64>() / n,
        mean_total: per_path_total.iter().sum::<f64>() / n,
        per_path_shifted,
        per_path_total,
        belief_resets: traces.iter().map(|t| t.belief_resets).sum(),
    })
}

/// Cumulative contribution of `policy` as a percent of `benchmark` on common
/// paths.
pub fn percent_of_optimal(
    policy: &ProfitSummary,
    benchmark: &ProfitSummary,
) -> f64 {
    let num: f64 = policy.per_path_total.iter().sum();
    let den: f64 = benchmark.per_path_total.iter().sum();
    100.0 * num / den
}

/// Paired-difference standard error of the percent-of-optimal gap between
/// two policies sharing the benchmark and paths.
pub fn percent_gap_stats(
    a: &ProfitSummary,
    b: &ProfitSummary,
    benchmark: &ProfitSummary,
) -> (f64, f64) {
    let n = a.per_path_total.len();
    let den: f64 = benchmark.per_path_total.iter().sum::<f64>() / n as f64;
    let diffs: Vec<f64> = a
        .per_path_total
        .iter()
        .zip(&b.per_path_total)
        .map(|(x, y)| (x - y) / den * 100.0)
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Sample `count` paired paths from the full model dynamics.
pub fn build_typical_set(
    scenario: &ScenarioConfig,
    models: &Models,
    count: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    let horizon = scenario.horizon + 1;
    let mut wind_paths = Vec::with_capacity(count);
    let mut price_paths = Vec::with_capacity(count);
    for k in 0..count {
        let mut wind_rng = stream(seed, "typ-wind", k as u64);
        let mut price_rng = stream(seed, "typ-price", k as u64);
        wind_paths.push(models.wind.sample_eval_path(
            &mut wind_rng,
            horizon,
            Some(scenario.e0_error),
            None,
        )?);
        price_paths.push(models.price.sample_eval_path(
            &mut price_rng,
            horizon,
            Some(scenario.p0_error),
            Some(&scenario.classes),
        )?);
    }
    Ok(ScenarioSet {
        label: "Typ".into(),
        seed,
        wind_paths,
        price_paths,
    })
}

/// Sample paired paths from the compact Markov approximation (the dynamics
/// the backward pass optimizes against).
pub fn build_compact_set(
    scenario: &ScenarioConfig,
    models: &Models,
    count: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    let horizon = scenario.horizon + 1;
    let mut wind_paths = Vec::with_capacity(count);
    let mut price_paths = Vec::with_capacity(count);
    for k in 0..count {
        let mut wind_rng = stream(seed, "compact-wind", k as u64);
        let mut price_rng = stream(seed, "compact-price", k as u64);
        let wind = match &models.wind {
            ProcessModel::Hsmm(m) => {
                m.sample_path_compact_rng(&mut wind_rng, horizon, Some(scenario.e0_error), None)?
                    .errors
            }
            other => other.sample_eval_path(&mut wind_rng, horizon, Some(scenario.e0_error), None)?,
        };
        let price = match &models.price {
            ProcessModel::Hsmm(m) => {
                m.sample_path_compact_rng(
                    &mut price_rng,
                    horizon,
                    Some(scenario.p0_error),
                    Some(&scenario.classes),
                )?
                .errors
            }
            other => other.sample_eval_path(
                &mut price_rng,
                horizon,
                Some(scenario.p0_error),
                Some(&scenario.classes),
            )?,
        };
        wind_paths.push(wind);
        price_paths.push(price);
    }
    Ok(ScenarioSet {
        label: "Compact".into(),
        seed,
        wind_paths,
        price_paths,
    })
}

/// Build the worst-case set from a typical set: wind output drops to zero
/// over the afternoon window, and price paths are drawn from the highest-mean
/// days of a sampled pool.
pub fn build_worst_case_set(
    scenario: &ScenarioConfig,
    models: &Models,
    typical: &ScenarioSet,
    pool_size: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    let horizon = scenario.horizon + 1;
    let grid = models.wind.grid();
    let wind_paths: Vec<Vec<f64>> = typical
        .wind_paths
        .iter()
        .map(|path| {
            let mut out = path.clone();
            let hi = WC_WINDOW.1.min(out.len());
            for t in WC_WINDOW.0..hi {
                // Zero output: the error cancels the forecast on the grid.
                out[t] = grid.value(grid.snap(-scenario.wind_forecast_kw[t]));
            }
            out
        })
        .collect();

    // Candidate pool ranked by mean price level.
    let pool_size = pool_size.max(5);
    let mut pool = Vec::with_capacity(pool_size);
    for k in 0..pool_size {
        let mut rng = stream(seed, "wc-pool", k as u64);
        let path = models.price.sample_eval_path(
            &mut rng,
            horizon,
            Some(scenario.p0_error),
            Some(&scenario.classes),
        )?;
        let mean: f64 = path
            .iter()
            .enumerate()
            .map(|(t, e)| scenario.price_value(t, *e))
            .sum::<f64>()
            / horizon as f64;
        pool.push((mean, path));
    }
    pool.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let top: Vec<Vec<f64>> = pool.into_iter().take(5).map(|(_, p)| p).collect();
    let price_paths: Vec<Vec<f64>> = (0..typical.len())
        .map(|k| top[k % top.len()].clone())
        .collect();

    Ok(ScenarioSet {
        label: "WC".into(),
        seed,
        wind_paths,
        price_paths,
    })
}
