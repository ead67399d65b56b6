//! Approximate policy iteration, the forward-ADP baseline.
//!
//! A deliberately simple stand-in: iterate greedy rollouts under the current
//! post-decision value surface, regress realized returns-to-go on post-state
//! features, and keep the iterate with the best validation rollout value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{
    check_constraints, contribution, feasible_decisions, transition_resource, Decision,
    ScenarioConfig,
};
use crate::process::{BeliefTracker, Models, ProcessModel};
use crate::rng::stream;

use super::linear::{regime_term, standard_features, uniform_weights, BasisKind, STANDARD_DIM};
use super::{LinearForm, LinearVfa, SolverConfig, TerminalRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApiConfig {
    pub iterations: usize,
    pub rollouts_per_iter: usize,
    pub validation_rollouts: usize,
    /// Wall-clock training budget in seconds.
    pub max_seconds: f64,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            iterations: 8,
            rollouts_per_iter: 32,
            validation_rollouts: 16,
            max_seconds: 600.0,
        }
    }
}

/// Belief-weighted regime term for the post-state features.
fn expected_regime_term(model: &ProcessModel, tracker: &BeliefTracker) -> f64 {
    match (model, tracker) {
        (ProcessModel::Hsmm(_), BeliefTracker::Hsmm(k)) => k
            .probs
            .iter()
            .enumerate()
            .map(|(i, p)| p * regime_term(model, i, k.last_error))
            .sum(),
        _ => regime_term(model, 0, tracker.last_error(model)),
    }
}

pub(crate) fn post_features(
    models: &Models,
    e_kw: f64,
    price: f64,
    r_post_kwh: f64,
    wind_tracker: &BeliefTracker,
    price_tracker: &BeliefTracker,
) -> [f64; STANDARD_DIM] {
    standard_features(
        expected_regime_term(&models.wind, wind_tracker),
        e_kw / 1000.0,
        expected_regime_term(&models.price, price_tracker),
        price,
        r_post_kwh / 1000.0,
    )
}

/// Greedy decision under a post-direct surface; zero coefficients give the
/// myopic policy.
#[allow(clippy::too_many_arguments)]
fn greedy_decision(
    scenario: &ScenarioConfig,
    models: &Models,
    theta: &[f64],
    t: usize,
    r_kwh: f64,
    e_kw: f64,
    price: f64,
    wind_tracker: &BeliefTracker,
    price_tracker: &BeliefTracker,
) -> Decision {
    let load = scenario.load_kwh(t);
    let spec = &scenario.storage;
    let mut best: Option<(f64, Decision)> = None;
    for d in feasible_decisions(spec, r_kwh, e_kw, load) {
        let r_post = transition_resource(spec, r_kwh, &d).expect("emitted decision on grid");
        let mut v = contribution(price, load, spec.eta, &d);
        if !theta.is_empty() {
            let phi = post_features(models, e_kw, price, r_post, wind_tracker, price_tracker);
            v += phi.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
        }
        match &best {
            Some((bv, bd)) if v < *bv || (v == *bv && !d.lex_less(bd)) => {}
            _ => best = Some((v, d)),
        }
    }
    best.expect("feasible set is never empty").1
}

struct RolloutSamples {
    /// Per time step: (features, return-to-go) pairs.
    samples: Vec<Vec<([f64; STANDARD_DIM], f64)>>,
    total: f64,
}

fn rollout(
    scenario: &ScenarioConfig,
    models: &Models,
    thetas: &[Vec<f64>],
    seed: u64,
    path_id: u64,
    collect: bool,
) -> Result<RolloutSamples> {
    let t_end = scenario.horizon;
    let mut wind_rng = stream(seed, "api-wind", path_id);
    let mut price_rng = stream(seed, "api-price", path_id);
    let wind_path =
        models
            .wind
            .sample_eval_path(&mut wind_rng, t_end + 1, Some(scenario.e0_error), None)?;
    let price_path = models.price.sample_eval_path(
        &mut price_rng,
        t_end + 1,
        Some(scenario.p0_error),
        Some(&scenario.classes),
    )?;

    let mut wind_tracker = models.wind.init_tracker(scenario.e0_error);
    let mut price_tracker = models.price.init_tracker(scenario.p0_error);
    let mut r_kwh = scenario.storage.level_kwh(scenario.r0_idx);
    let mut contribs = Vec::with_capacity(t_end + 1);
    let mut feats = Vec::with_capacity(t_end + 1);

    for t in 0..=t_end {
        let e_kw = scenario.wind_value(t, wind_path[t]);
        let price = scenario.price_value(t, price_path[t]);
        let d = greedy_decision(
            scenario,
            models,
            &thetas[t],
            t,
            r_kwh,
            e_kw,
            price,
            &wind_tracker,
            &price_tracker,
        );
        let load = scenario.load_kwh(t);
        debug_assert!(check_constraints(&scenario.storage, r_kwh, e_kw, load, &d).is_ok());
        let r_post = transition_resource(&scenario.storage, r_kwh, &d)?;
        contribs.push(contribution(price, load, scenario.storage.eta, &d));
        if collect {
            feats.push(post_features(
                models, e_kw, price, r_post, &wind_tracker, &price_tracker,
            ));
        }
        if t < t_end {
            let class = scenario.classes[t + 1];
            let (w, _) = models.wind.update_tracker(&wind_tracker, wind_path[t + 1], 0);
            let (p, _) = models
                .price
                .update_tracker(&price_tracker, price_path[t + 1], class);
            wind_tracker = w;
            price_tracker = p;
            r_kwh = r_post;
        }
    }

    let total: f64 = contribs.iter().sum();
    let mut samples = vec![Vec::new(); t_end + 1];
    if collect {
        // Return-to-go excludes the current step's contribution.
        let mut tail = 0.0;
        for t in (0..=t_end).rev() {
            samples[t].push((feats[t], tail));
            tail += contribs[t];
        }
    }
    Ok(RolloutSamples { samples, total })
}

/// Train a post-direct linear surface by approximate policy iteration.
pub fn api_train(
    scenario: &ScenarioConfig,
    models: &Models,
    cfg: &SolverConfig,
    api: &ApiConfig,
) -> Result<LinearVfa> {
    scenario.validate()?;
    let t_end = scenario.horizon;
    let zeros = || vec![Vec::new(); t_end + 1];
    let mut thetas: Vec<Vec<f64>> = zeros();
    let mut best_thetas = thetas.clone();
    let started = std::time::Instant::now();

    let validate = |thetas: &Vec<Vec<f64>>| -> Result<f64> {
        let totals: Vec<f64> = (0..api.validation_rollouts as u64)
            .into_par_iter()
            .map(|j| rollout(scenario, models, thetas, cfg.seed, 1_000_000 + j, false).map(|r| r.total))
            .collect::<Result<Vec<_>>>()?;
        Ok(totals.iter().sum::<f64>() / totals.len().max(1) as f64)
    };
    let mut best_value = if api.iterations == 0 {
        0.0
    } else {
        validate(&thetas)?
    };

    for iter in 0..api.iterations {
        if started.elapsed().as_secs_f64() > api.max_seconds {
            break;
        }
        let results: Vec<RolloutSamples> = (0..api.rollouts_per_iter as u64)
            .into_par_iter()
            .map(|j| {
                rollout(
                    scenario,
                    models,
                    &thetas,
                    cfg.seed,
                    (iter as u64) * 10_000 + j,
                    true,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut next: Vec<Vec<f64>> = zeros();
        let mut diverged = false;
        for t in 0..=t_end {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for r in &results {
                for (phi, g) in &r.samples[t] {
                    xs.push(phi.to_vec());
                    ys.push(*g);
                }
            }
            let w = uniform_weights(xs.len());
            match super::linear::fit_theta(&xs, &ys, &w, cfg.loss, true) {
                Ok(theta) if theta.iter().all(|v| v.is_finite()) => next[t] = theta,
                _ => {
                    diverged = true;
                    break;
                }
            }
        }
        if diverged {
            break;
        }
        thetas = next;
        let value = validate(&thetas)?;
        if value > best_value {
            best_value = value;
            best_thetas = thetas.clone();
        }
        super::progress_line(cfg, "api", iter, api.rollouts_per_iter, 0, started.elapsed().as_millis());
    }

    // Pad untouched steps so the policy can index every t.
    for t in 0..=t_end {
        if best_thetas[t].is_empty() {
            best_thetas[t] = vec![0.0; STANDARD_DIM];
        }
    }
    Ok(LinearVfa {
        horizon: t_end,
        basis: BasisKind::Standard,
        form: LinearForm::PostDirect,
        terminal: TerminalRule::Zero,
        thetas: best_thetas,
    })
}
