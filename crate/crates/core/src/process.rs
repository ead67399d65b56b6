//! A uniform interface over the exogenous process models.
//!
//! The dynamic program and the simulator only need three things from a
//! process model: a discrete set of `(latent state, grid value)` pairs, a
//! transition-sufficient information index per pair, and transition rows over
//! successor pairs. The crossing-state model exposes its compact information
//! states `(C, B, error bin)`; the first-order baselines are value-indexed
//! with a single latent state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    ar1_transition_row, mrjd_transition_row, Ar1Params, MarkovChainModel, MrjdParams,
};
use crate::belief::{bayes_update, init_belief, KnowledgeState};
use crate::error::Result;
use crate::grid::ValueGrid;
use crate::hsmm::CrossingStateModel;

/// Any of the trained error-process models.
///
/// Models are built once and shared by reference; the variant size skew is
/// irrelevant at that usage pattern.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProcessModel {
    Hsmm(CrossingStateModel),
    Ar1 { params: Ar1Params, grid: ValueGrid },
    Markov { model: MarkovChainModel, grid: ValueGrid },
    Mrjd { params: MrjdParams, grid: ValueGrid },
}

/// One transition target: `(latent state, value index, probability)`.
pub type TransitionEntry = (usize, usize, f64);

impl ProcessModel {
    pub fn grid(&self) -> &ValueGrid {
        match self {
            ProcessModel::Hsmm(m) => &m.grid,
            ProcessModel::Ar1 { grid, .. } => grid,
            ProcessModel::Markov { grid, .. } => grid,
            ProcessModel::Mrjd { grid, .. } => grid,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            ProcessModel::Hsmm(m) => m.n_classes,
            _ => 1,
        }
    }

    /// Number of latent states (1 for the value-indexed baselines).
    pub fn latent_count(&self) -> usize {
        match self {
            ProcessModel::Hsmm(m) => m.state_count(),
            _ => 1,
        }
    }

    /// Number of distinct transition-sufficient information indices.
    pub fn info_count(&self) -> usize {
        match self {
            ProcessModel::Hsmm(m) => m.state_count() * m.hyper.n,
            ProcessModel::Ar1 { grid, .. } | ProcessModel::Mrjd { params: _, grid } => grid.len(),
            ProcessModel::Markov { model, .. } => model.rows.len(),
        }
    }

    /// Information index of a `(state, value)` pair.
    pub fn info_of(&self, state: usize, value_idx: usize) -> usize {
        match self {
            ProcessModel::Hsmm(m) => {
                state * m.hyper.n + m.error_bin(state, m.grid.value(value_idx))
            }
            ProcessModel::Ar1 { .. } | ProcessModel::Mrjd { .. } => value_idx,
            ProcessModel::Markov { model, grid } => model.bin_of(grid.value(value_idx)),
        }
    }

    /// All valid `(state, value)` pairs. For the crossing model a pair is
    /// valid when the value's sign matches the state's regime.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match self {
            ProcessModel::Hsmm(m) => {
                let mut out = Vec::new();
                for state in 0..m.state_count() {
                    let positive = m.state_positive(state);
                    for v in 0..m.grid.len() {
                        if m.grid.sign_matches(v, positive) {
                            out.push((state, v));
                        }
                    }
                }
                out
            }
            _ => (0..self.grid().len()).map(|v| (0, v)).collect(),
        }
    }

    /// Transition row for an information index: successor `(state, value)`
    /// pairs with probabilities summing to one.
    pub fn transition_row(&self, info: usize, class: usize) -> Vec<TransitionEntry> {
        match self {
            ProcessModel::Hsmm(m) => {
                let n = m.hyper.n;
                let state = info / n;
                let bin = info % n;
                let mut out = Vec::new();
                for (next, w) in m.compact_matrix[state].iter().enumerate() {
                    if *w <= 0.0 {
                        continue;
                    }
                    let pmf = if next == state {
                        &m.stay_pmfs[state][bin][class]
                    } else {
                        &m.entry_pmfs[next][class]
                    };
                    for (v, p) in pmf.support() {
                        out.push((next, v, w * p));
                    }
                }
                out
            }
            ProcessModel::Ar1 { params, grid } => {
                let row = ar1_transition_row(params, grid, grid.value(info));
                row.support().map(|(v, p)| (0, v, p)).collect()
            }
            ProcessModel::Mrjd { params, grid } => {
                let row = mrjd_transition_row(params, grid, grid.value(info));
                row.support().map(|(v, p)| (0, v, p)).collect()
            }
            ProcessModel::Markov { model, .. } => model.rows[info]
                .support()
                .map(|(v, p)| (0, v, p))
                .collect(),
        }
    }

    /// Sample an evaluation path with the model's own forward dynamics (the
    /// full semi-Markov mechanism for the crossing model).
    pub fn sample_eval_path(
        &self,
        rng: &mut ChaCha8Rng,
        horizon: usize,
        init: Option<f64>,
        classes: Option<&[usize]>,
    ) -> Result<Vec<f64>> {
        match self {
            ProcessModel::Hsmm(m) => Ok(m.sample_path_rng(rng, horizon, init, classes)?.errors),
            ProcessModel::Ar1 { params, grid } => {
                let init = init.unwrap_or(0.0);
                let mut out = Vec::with_capacity(horizon);
                let mut prev = grid.value(grid.snap(init));
                out.push(prev);
                use rand_distr::Distribution;
                let noise = rand_distr::Normal::new(0.0, params.resid_std.max(0.0)).unwrap();
                for _ in 1..horizon {
                    let draw = if params.resid_std > 0.0 { noise.sample(rng) } else { 0.0 };
                    prev = grid.value(grid.snap(params.gamma * prev + draw));
                    out.push(prev);
                }
                Ok(out)
            }
            ProcessModel::Markov { model, grid } => {
                let init = init.unwrap_or(0.0);
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
            ProcessModel::Mrjd { params, grid } => {
                let init = init.unwrap_or(0.0);
                use rand_distr::Distribution;
                let base = rand_distr::Normal::new(0.0, params.base_std.max(0.0)).unwrap();
                let jump = rand_distr::Normal::new(0.0, params.jump_std.max(0.0)).unwrap();
                let mut out = Vec::with_capacity(horizon);
                let mut prev = grid.value(grid.snap(init));
                out.push(prev);
                for _ in 1..horizon {
                    let mut next = params.gamma * prev;
                    if params.base_std > 0.0 {
                        next += base.sample(rng);
                    }
                    if params.jump_prob > 0.0
                        && rng.random::<f64>() < params.jump_prob
                        && params.jump_std > 0.0
                    {
                        next += jump.sample(rng);
                    }
                    prev = grid.value(grid.snap(next));
                    out.push(prev);
                }
                Ok(out)
            }
        }
    }
}

/// Online information tracking during a rollout: a Bayesian knowledge state
/// for the crossing model, or the directly observed value for the first-order
/// baselines.
#[derive(Debug, Clone, PartialEq)]
pub enum BeliefTracker {
    Hsmm(KnowledgeState),
    Known { value_idx: usize },
}

impl BeliefTracker {
    pub fn last_error(&self, model: &ProcessModel) -> f64 {
        match self {
            BeliefTracker::Hsmm(k) => k.last_error,
            BeliefTracker::Known { value_idx } => model.grid().value(*value_idx),
        }
    }
}

impl ProcessModel {
    pub fn init_tracker(&self, initial_error: f64) -> BeliefTracker {
        match self {
            ProcessModel::Hsmm(m) => BeliefTracker::Hsmm(init_belief(m, initial_error)),
            _ => BeliefTracker::Known {
                value_idx: self.grid().snap(initial_error),
            },
        }
    }

    /// Advance the tracker after observing the next error. Returns the new
    /// tracker and whether a zero-likelihood reset fired.
    pub fn update_tracker(
        &self,
        tracker: &BeliefTracker,
        observed: f64,
        class: usize,
    ) -> (BeliefTracker, bool) {
        match (self, tracker) {
            (ProcessModel::Hsmm(m), BeliefTracker::Hsmm(k)) => {
                let up = bayes_update(m, k, observed, class);
                (BeliefTracker::Hsmm(up.state), up.reset)
            }
            _ => (
                BeliefTracker::Known {
                    value_idx: self.grid().snap(observed),
                },
                false,
            ),
        }
    }

    /// Belief weights over information indices for the VFA policy: the
    /// posterior restricted to states consistent with the last error, each
    /// paired with its state-relative error bin.
    pub fn info_weights(&self, tracker: &BeliefTracker) -> Vec<(usize, f64)> {
        match (self, tracker) {
            (ProcessModel::Hsmm(m), BeliefTracker::Hsmm(k)) => {
                let n = m.hyper.n;
                k.probs
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(i, p)| (i * n + m.error_bin(i, k.last_error), *p))
                    .collect()
            }
            (_, BeliefTracker::Known { value_idx }) => vec![(self.info_of(0, *value_idx), 1.0)],
            _ => unreachable!("tracker kind does not match model kind"),
        }
    }
}

/// The pair of trained process models driving the storage problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub wind: ProcessModel,
    pub price: ProcessModel,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsmm::test_models;

    #[test]
    fn hsmm_rows_sum_to_one() {
        let model = ProcessModel::Hsmm(test_models::toy_two_bin());
        for info in 0..model.info_count() {
            let total: f64 = model
                .transition_row(info, 0)
                .iter()
                .map(|(_, _, p)| p)
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "info {info}: {total}");
        }
    }

    #[test]
    fn hsmm_pairs_are_sign_consistent() {
        let m = test_models::toy_two_bin();
        let model = ProcessModel::Hsmm(m.clone());
        for (state, v) in model.pairs() {
            assert!(m.grid.sign_matches(v, m.state_positive(state)));
        }
    }

    #[test]
    fn baseline_rows_cover_all_values() {
        let grid = ValueGrid::new(-4.0, 4.0, 1.0).unwrap();
        let model = ProcessModel::Ar1 {
            params: Ar1Params { gamma: 0.5, resid_std: 1.0 },
            grid,
        };
        assert_eq!(model.info_count(), 9);
        for info in 0..model.info_count() {
            let total: f64 = model
                .transition_row(info, 0)
                .iter()
                .map(|(_, _, p)| p)
                .sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
