//! Knowledge states and their Bayesian update.
//!
//! During forward simulation the sign of the error and the running crossing
//! time are observable, but the duration bin of the current segment is not.
//! The knowledge state carries the posterior over crossing states together
//! with the running crossing time and the last observed error.
//!
//! Two update cases:
//!
//! * same sign: `tau' = tau + 1`; each candidate state is reweighted by the
//!   sojourn survival `1 - F_i(tau')` times the stay likelihood of the
//!   observation given the state-relative bin of the previous error;
//! * sign switch: `tau' = 0`; the completed duration `tau + 1` reveals the
//!   previous state `i*`, and the posterior over new states is proportional
//!   to `P(i | i*) * entry_i(obs)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Pmf;
use crate::hsmm::CrossingStateModel;

/// Posterior over crossing states plus the observable components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeState {
    /// One probability per crossing state id.
    pub probs: Vec<f64>,
    /// Running crossing time (0 on segment entry).
    pub tau: u32,
    /// Last observed error, on the value grid.
    pub last_error: f64,
}

impl KnowledgeState {
    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.probs.iter().sum::<f64>() - 1.0).abs() <= tol
            && self.probs.iter().all(|p| *p >= 0.0)
    }

    /// States inconsistent with the sign of the last error must carry zero
    /// probability.
    pub fn sign_consistent(&self, model: &CrossingStateModel) -> bool {
        let positive = self.last_error > 0.0;
        self.probs
            .iter()
            .enumerate()
            .all(|(i, p)| *p == 0.0 || model.state_positive(i) == positive)
    }
}

/// Result of one filtering step; `reset` marks a zero-likelihood recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefUpdate {
    pub state: KnowledgeState,
    pub reset: bool,
}

/// Uniform belief over the duration bins matching the sign of the initial
/// error, with `tau = 0`.
pub fn init_belief(model: &CrossingStateModel, initial_error: f64) -> KnowledgeState {
    let positive = initial_error > 0.0;
    let m = model.hyper.m;
    let mut probs = vec![0.0; model.state_count()];
    for b in 0..m {
        probs[model.state_id(positive, b)] = 1.0 / m as f64;
    }
    let snapped = model
        .grid
        .value(model.grid.snap_signed(initial_error, positive));
    KnowledgeState {
        probs,
        tau: 0,
        last_error: snapped,
    }
}

/// Belief-weighted predictive density of the next error: the mixture of the
/// full-information predictive densities over the posterior, with the error
/// bin recomputed per candidate state.
pub fn predictive_distribution(
    model: &CrossingStateModel,
    k: &KnowledgeState,
    class: usize,
) -> Pmf {
    let mut out = Pmf::zeros(model.grid.len());
    for (i, p) in k.probs.iter().enumerate() {
        if *p > 0.0 {
            let bin = model.error_bin(i, k.last_error);
            out.accumulate(&model.predictive_pmf_full(i, k.tau, bin, class), *p);
        }
    }
    out
}

/// One Bayesian filtering step after observing the next error.
///
/// A zero normalizer (the observation is impossible under every candidate
/// state, which empirical PMFs permit) resets the belief to the uniform
/// initial distribution on the observed sign; the flag reports it.
pub fn bayes_update(
    model: &CrossingStateModel,
    k: &KnowledgeState,
    observed_error: f64,
    class: usize,
) -> BeliefUpdate {
    let obs_idx = match model.grid.index_of(observed_error) {
        Some(i) => i,
        None => {
            // Off-grid observations cannot be scored; recover via reset.
            let mut state = init_belief(model, observed_error);
            state.last_error = observed_error;
            return BeliefUpdate { state, reset: true };
        }
    };
    let same_sign = (observed_error > 0.0) == (k.last_error > 0.0);
    let mut probs = vec![0.0; model.state_count()];
    if same_sign {
        let tau_next = k.tau + 1;
        for (i, prior) in k.probs.iter().enumerate() {
            if *prior <= 0.0 {
                continue;
            }
            let survive = 1.0 - model.sojourn(i).eval(tau_next);
            if survive <= 0.0 {
                continue;
            }
            let bin = model.error_bin(i, k.last_error);
            probs[i] = prior * survive * model.stay_pmfs[i][bin][class].probs[obs_idx];
        }
        let norm: f64 = probs.iter().sum();
        if norm <= 0.0 {
            return reset_update(model, observed_error);
        }
        for p in probs.iter_mut() {
            *p /= norm;
        }
        BeliefUpdate {
            state: KnowledgeState {
                probs,
                tau: tau_next,
                last_error: observed_error,
            },
            reset: false,
        }
    } else {
        // The completed crossing time (tau + 1 periods) reveals the state the
        // process has just left.
        let prev_positive = k.last_error > 0.0;
        let completed = k.tau + 1;
        let prev_bin = model.duration_bin(prev_positive, completed);
        let star = model.state_id(prev_positive, prev_bin);
        for (i, p) in probs.iter_mut().enumerate() {
            *p = model.switch_matrix[star][i] * model.entry_pmfs[i][class].probs[obs_idx];
        }
        let norm: f64 = probs.iter().sum();
        if norm <= 0.0 {
            return reset_update(model, observed_error);
        }
        for p in probs.iter_mut() {
            *p /= norm;
        }
        BeliefUpdate {
            state: KnowledgeState {
                probs,
                tau: 0,
                last_error: observed_error,
            },
            reset: false,
        }
    }
}

fn reset_update(model: &CrossingStateModel, observed_error: f64) -> BeliefUpdate {
    BeliefUpdate {
        state: init_belief(model, observed_error),
        reset: true,
    }
}

/// Test oracle: enumerate every hidden crossing-state trajectory consistent
/// with the observations, weight it by the semi-Markov transition and
/// emission likelihoods, and marginalize to the final step.
///
/// Transition weights follow the duration-dependent form used by the filter:
/// a segment that has occupied `k` periods survives the next step with weight
/// `1 - F_i(k)` and exits with weight `F_i(k) * P(i'|i)`. Independent of
/// [`bayes_update`]: the recursion never runs here.
pub fn brute_force_posterior(
    model: &CrossingStateModel,
    initial_error: f64,
    observations: &[f64],
    classes: Option<&[usize]>,
) -> Result<KnowledgeState> {
    if observations.len() > 12 {
        return Err(Error::InvalidInput(format!(
            "brute-force enumeration capped at 12 observations, got {}",
            observations.len()
        )));
    }
    #[derive(Clone)]
    struct Trajectory {
        state: usize,
        tau: u32,
        weight: f64,
    }
    let positive0 = initial_error > 0.0;
    let m = model.hyper.m;
    let mut live: Vec<Trajectory> = (0..m)
        .map(|b| Trajectory {
            state: model.state_id(positive0, b),
            tau: 0,
            weight: 1.0 / m as f64,
        })
        .collect();
    let mut prev_error = model
        .grid
        .value(model.grid.snap_signed(initial_error, positive0));

    for (step, obs) in observations.iter().enumerate() {
        let class = classes
            .map(|c| c[step % c.len()])
            .unwrap_or(0)
            .min(model.n_classes - 1);
        let obs_idx = model.grid.index_of(*obs).ok_or_else(|| {
            Error::InvalidInput(format!("observation {obs} is not on the value grid"))
        })?;
        let mut next: Vec<Trajectory> = Vec::new();
        for traj in &live {
            let occupied = traj.tau + 1;
            let exit_mass = model.sojourn(traj.state).eval(occupied);
            // Stay branch.
            let bin = model.error_bin(traj.state, prev_error);
            let stay_like = model.stay_pmfs[traj.state][bin][class].probs[obs_idx];
            let stay_w = traj.weight * (1.0 - exit_mass) * stay_like;
            if stay_w > 0.0 {
                next.push(Trajectory {
                    state: traj.state,
                    tau: traj.tau + 1,
                    weight: stay_w,
                });
            }
            // Switch branches.
            if exit_mass > 0.0 {
                for (to, p) in model.switch_matrix[traj.state].iter().enumerate() {
                    let w = traj.weight
                        * exit_mass
                        * p
                        * model.entry_pmfs[to][class].probs[obs_idx];
                    if w > 0.0 {
                        next.push(Trajectory {
                            state: to,
                            tau: 0,
                            weight: w,
                        });
                    }
                }
            }
        }
        if next.is_empty() {
            return Err(Error::InvalidInput(
                "observation sequence has zero likelihood under the model".into(),
            ));
        }
        live = next;
        prev_error = model.grid.value(obs_idx);
    }

    let mut probs = vec![0.0; model.state_count()];
    let mut tau = 0;
    let mut best = 0.0;
    for traj in &live {
        probs[traj.state] += traj.weight;
        if traj.weight > best {
            best = traj.weight;
            tau = traj.tau;
        }
    }
    let norm: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= norm;
    }
    Ok(KnowledgeState {
        probs,
        tau,
        last_error: prev_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsmm::test_models;
    use rand::Rng;

    /// Sample an observation sequence from the duration-dependent transition
    /// law the filter inverts, so every sequence has positive likelihood.
    fn sample_filter_law(
        model: &CrossingStateModel,
        init: f64,
        len: usize,
        seed: u64,
    ) -> Vec<f64> {
        let mut rng = crate::rng::stream(seed, "filter-law", 0);
        let positive = init > 0.0;
        let mut state = model.state_id(positive, rng.random_range(0..model.hyper.m));
        let mut tau = 0u32;
        let mut prev = model.grid.value(model.grid.snap_signed(init, positive));
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let exit_mass = model.sojourn(state).eval(tau + 1);
            let pmf = if rng.random::<f64>() < exit_mass {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let row = &model.switch_matrix[state];
                let mut to = state;
                for (j, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        to = j;
                        break;
                    }
                }
                state = to;
                tau = 0;
                &model.entry_pmfs[state][0]
            } else {
                tau += 1;
                let bin = model.error_bin(state, prev);
                &model.stay_pmfs[state][bin][0]
            };
            let idx = pmf.sample_index(rng.random());
            prev = model.grid.value(idx);
            out.push(prev);
        }
        out
    }

    #[test]
    fn init_is_degenerate_for_single_bin() {
        let model = test_models::tiny_m1(
            [0.5, 0.5, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.5, 0.5],
            [0.2, 0.6, 0.2, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.6, 0.4],
            vec![(2, 1.0)],
        );
        let k = init_belief(&model, 1.0);
        assert_eq!(k.probs, vec![0.0, 1.0]);
        assert_eq!(k.tau, 0);
    }

    #[test]
    fn init_is_uniform_over_matching_bins() {
        let model = test_models::toy_two_bin();
        let k = init_belief(&model, 2.0);
        assert_eq!(k.probs, vec![0.0, 0.0, 0.5, 0.5]);
        // Zero initial error counts as nonpositive.
        let k = init_belief(&model, 0.0);
        assert_eq!(k.probs, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn predictive_of_degenerate_belief_is_the_state_predictive() {
        let model = test_models::toy_two_bin();
        let mut k = init_belief(&model, -1.0);
        k.probs = vec![0.0, 1.0, 0.0, 0.0];
        let got = predictive_distribution(&model, &k, 0);
        let expected = model.predictive_pmf_full(1, 0, 0, 0);
        assert_eq!(got, expected);
    }

    #[test]
    fn predictive_is_a_convex_combination() {
        let model = test_models::toy_two_bin();
        let mut k = init_belief(&model, -1.0);
        k.probs = vec![0.3, 0.7, 0.0, 0.0];
        k.tau = 1;
        let got = predictive_distribution(&model, &k, 0);
        for j in 0..model.grid.len() {
            let expected = 0.3 * model.predictive_pmf_full(0, 1, 0, 0).probs[j]
                + 0.7 * model.predictive_pmf_full(1, 1, 0, 0).probs[j];
            assert!((got.probs[j] - expected).abs() < 1e-12);
        }
        assert!(got.is_normalized(1e-9));
    }

    #[test]
    fn single_bin_switch_is_certain() {
        let model = test_models::tiny_m1(
            [0.5, 0.5, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.5, 0.5],
            [0.2, 0.6, 0.2, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.6, 0.4],
            vec![(1, 0.5), (4, 1.0)],
        );
        let k = init_belief(&model, 1.0);
        let up = bayes_update(&model, &k, -1.0, 0);
        assert!(!up.reset);
        assert_eq!(up.state.probs, vec![1.0, 0.0]);
        assert_eq!(up.state.tau, 0);
    }

    #[test]
    fn posterior_matches_hand_computed_bayes_ratio() {
        let model = test_models::toy_two_bin();
        // Start negative, observe one more negative step: tau' = 1.
        let k = init_belief(&model, -1.0);
        let up = bayes_update(&model, &k, -2.0, 0);
        // Hand computation: prior 0.5 each on states 0 and 1.
        // state 0: (1 - F0(1)) * stay0(-2) = 0.5 * 0.5 = 0.25
        // state 1: (1 - F1(1)) * stay1(-2) = 1.0 * 0.2 = 0.2
        let w0 = 0.5 * 0.5 * 0.5;
        let w1 = 0.5 * 1.0 * 0.2;
        assert!((up.state.probs[0] - w0 / (w0 + w1)).abs() < 1e-12);
        assert!((up.state.probs[1] - w1 / (w0 + w1)).abs() < 1e-12);
        assert_eq!(up.state.tau, 1);
    }

    #[test]
    fn posterior_always_normalizes() {
        let model = test_models::toy_two_bin();
        let obs = sample_filter_law(&model, 1.0, 64, 5);
        let mut k = init_belief(&model, 1.0);
        for o in obs {
            let up = bayes_update(&model, &k, o, 0);
            assert!(!up.reset);
            assert!(up.state.is_normalized(1e-12));
            assert!(up.state.sign_consistent(&model));
            k = up.state;
        }
    }

    #[test]
    fn switch_case_ignores_the_prior() {
        let model = test_models::toy_two_bin();
        let mut k = init_belief(&model, -1.0);
        k.tau = 2;
        let a = bayes_update(&model, &k, 1.0, 0);
        k.probs = vec![0.9, 0.1, 0.0, 0.0];
        let b = bayes_update(&model, &k, 1.0, 0);
        assert_eq!(a.state.probs, b.state.probs);
    }

    #[test]
    fn zero_likelihood_resets_with_flag() {
        let model = test_models::toy_two_bin();
        let mut k = init_belief(&model, 1.0);
        k.tau = 10; // beyond every up-state sojourn support
        let up = bayes_update(&model, &k, 1.0, 0);
        assert!(up.reset);
        assert!(up.state.is_normalized(1e-12));
    }

    #[test]
    fn filtering_is_deterministic() {
        let model = test_models::toy_two_bin();
        let obs = sample_filter_law(&model, -1.0, 30, 8);
        let run = || {
            let mut k = init_belief(&model, -1.0);
            for o in &obs {
                k = bayes_update(&model, &k, *o, 0).state;
            }
            k
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn brute_force_length_one_is_a_single_update() {
        let model = test_models::toy_two_bin();
        let k = init_belief(&model, 1.0);
        let recursive = bayes_update(&model, &k, 2.0, 0).state;
        let oracle = brute_force_posterior(&model, 1.0, &[2.0], None).unwrap();
        for i in 0..4 {
            assert!((recursive.probs[i] - oracle.probs[i]).abs() < 1e-12);
        }
        assert_eq!(recursive.tau, oracle.tau);
    }

    #[test]
    fn brute_force_degenerate_model_gives_degenerate_posterior() {
        // Point-mass PMFs and a unit sojourn: the path is forced.
        let model = test_models::tiny_m1(
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0],
            vec![(1, 1.0)],
        );
        let k = brute_force_posterior(&model, 1.0, &[-1.0, 1.0, -1.0], None).unwrap();
        assert_eq!(k.probs, vec![1.0, 0.0]);
    }

    #[test]
    fn recursion_matches_brute_force_on_random_sequences() {
        let model = test_models::toy_two_bin();
        for seq in 0..200 {
            let init = if seq % 2 == 0 { 1.0 } else { -1.0 };
            let obs = sample_filter_law(&model, init, 6, 100 + seq);
            let oracle = brute_force_posterior(&model, init, &obs, None).unwrap();
            let mut k = init_belief(&model, init);
            for o in &obs {
                let up = bayes_update(&model, &k, *o, 0);
                assert!(!up.reset);
                k = up.state;
            }
            for i in 0..4 {
                assert!(
                    (k.probs[i] - oracle.probs[i]).abs() <= 1e-10,
                    "seq {seq} state {i}: {} vs {}",
                    k.probs[i],
                    oracle.probs[i]
                );
            }
            assert_eq!(k.tau, oracle.tau);
        }
    }

    #[test]
    fn brute_force_refuses_long_horizons() {
        let model = test_models::toy_two_bin();
        assert!(brute_force_posterior(&model, 1.0, &[1.0; 13], None).is_err());
    }
}
