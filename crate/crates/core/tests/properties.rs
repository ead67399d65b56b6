//! Property-based checks of the model and MDP invariants.

use proptest::prelude::*;

use crossdp::belief::{bayes_update, init_belief};
use crossdp::crossing::{QuantizedDurations, SojournCdf};
use crossdp::grid::{GridSpec, Pmf};
use crossdp::hsmm::{CrossingStateModel, ModelHyperparams, TrainingDiagnostics};
use crossdp::mdp::{
    check_constraints, contribution, feasible_decisions, transition_resource, StorageSpec,
};

/// Normalize raw weights into a PMF over the five-point grid, restricted to
/// one sign regime (indices 0..=2 nonpositive, 3..=4 positive).
fn signed_pmf(raw: &[f64; 5], positive: bool) -> Pmf {
    let mut probs = vec![0.0; 5];
    let (lo, hi) = if positive { (3, 4) } else { (0, 2) };
    let total: f64 = raw[lo..=hi].iter().map(|w| w.max(1e-3)).sum();
    for k in lo..=hi {
        probs[k] = raw[k].max(1e-3) / total;
    }
    Pmf { probs }
}

fn random_m1_model(
    stay_down: [f64; 5],
    stay_up: [f64; 5],
    entry_down: [f64; 5],
    entry_up: [f64; 5],
    f1: f64,
    diag_down: f64,
    diag_up: f64,
) -> CrossingStateModel {
    let hyper = ModelHyperparams {
        m: 1,
        n: 1,
        grid: GridSpec { min: -2.0, max: 2.0, step: 1.0 },
    };
    let grid = hyper.grid.build().unwrap();
    let q = |points: Vec<(u32, f64)>| QuantizedDurations {
        edges: vec![],
        cdfs: vec![SojournCdf { points }],
        empty_bins: vec![],
    };
    CrossingStateModel {
        hyper,
        grid,
        n_classes: 1,
        duration_bins: [
            q(vec![(2, f1.clamp(0.01, 0.99)), (5, 1.0)]),
            q(vec![(1, 0.3), (4, 1.0)]),
        ],
        switch_matrix: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        compact_matrix: vec![
            vec![diag_down.clamp(0.0, 1.0), 1.0 - diag_down.clamp(0.0, 1.0)],
            vec![1.0 - diag_up.clamp(0.0, 1.0), diag_up.clamp(0.0, 1.0)],
        ],
        error_edges: vec![vec![], vec![]],
        stay_pmfs: vec![
            vec![vec![signed_pmf(&stay_down, false)]],
            vec![vec![signed_pmf(&stay_up, true)]],
        ],
        entry_pmfs: vec![
            vec![signed_pmf(&entry_down, false)],
            vec![signed_pmf(&entry_up, true)],
        ],
        extras: None,
        diagnostics: TrainingDiagnostics::default(),
    }
}

proptest! {
    #[test]
    fn predictive_densities_are_normalized(
        sd in prop::array::uniform5(0.0f64..1.0),
        su in prop::array::uniform5(0.0f64..1.0),
        ed in prop::array::uniform5(0.0f64..1.0),
        eu in prop::array::uniform5(0.0f64..1.0),
        f1 in 0.0f64..1.0,
        dd in 0.0f64..1.0,
        du in 0.0f64..1.0,
        state in 0usize..2,
        tau in 0u32..8,
    ) {
        let model = random_m1_model(sd, su, ed, eu, f1, dd, du);
        let full = model.predictive_pmf_full(state, tau, 0, 0);
        prop_assert!(full.is_normalized(1e-9));
        let compact = model.predictive_pmf_compact(state, 0, 0);
        prop_assert!(compact.is_normalized(1e-9));
    }

    #[test]
    fn belief_updates_stay_normalized_and_sign_consistent(
        sd in prop::array::uniform5(0.0f64..1.0),
        su in prop::array::uniform5(0.0f64..1.0),
        ed in prop::array::uniform5(0.0f64..1.0),
        eu in prop::array::uniform5(0.0f64..1.0),
        f1 in 0.0f64..1.0,
        obs in prop::collection::vec(-2i32..=2, 1..20),
    ) {
        let model = random_m1_model(sd, su, ed, eu, f1, 0.5, 0.5);
        let mut k = init_belief(&model, 1.0);
        for o in obs {
            let up = bayes_update(&model, &k, o as f64, 0);
            prop_assert!(up.state.is_normalized(1e-12));
            prop_assert!(up.state.sign_consistent(&model));
            k = up.state;
        }
    }

    #[test]
    fn emitted_decisions_satisfy_all_constraints(
        r_idx in 0usize..9,
        e_kw in 0.0f64..5000.0,
        load_kw in 100.0f64..5000.0,
        eta in 0.85f64..1.0,
    ) {
        let spec = StorageSpec {
            r_max_kwh: 400.0,
            eta,
            rho_ch_kwh: 150.0,
            rho_dch_kwh: 150.0,
            r_levels: 9,
        };
        let r = spec.level_kwh(r_idx);
        let load = load_kw / 12.0;
        let decisions = feasible_decisions(&spec, r, e_kw, load);
        prop_assert!(!decisions.is_empty());
        for d in decisions {
            prop_assert!(check_constraints(&spec, r, e_kw, load, &d).is_ok());
            let r_post = transition_resource(&spec, r, &d).unwrap();
            prop_assert!((0.0..=spec.r_max_kwh + 1e-9).contains(&r_post));
            let units = r_post / spec.delta();
            prop_assert!((units - units.round()).abs() < 1e-6);
        }
    }

    #[test]
    fn contribution_is_affine_in_decisions(
        price in -50.0f64..300.0,
        load in 50.0f64..400.0,
        eta in 0.8f64..1.0,
        a in prop::array::uniform6(0.0f64..100.0),
        b in prop::array::uniform6(0.0f64..100.0),
    ) {
        let mk = |x: &[f64; 6]| crossdp::mdp::Decision {
            grid_to_load: x[0],
            grid_to_batt: x[1],
            batt_to_grid: x[2],
            wind_to_load: x[3],
            wind_to_batt: x[4],
            batt_to_load: x[5],
        };
        let sum = {
            let mut s = [0.0; 6];
            for i in 0..6 {
                s[i] = a[i] + b[i];
            }
            s
        };
        let base = contribution(price, load, eta, &mk(&[0.0; 6]));
        let ca = contribution(price, load, eta, &mk(&a)) - base;
        let cb = contribution(price, load, eta, &mk(&b)) - base;
        let cs = contribution(price, load, eta, &mk(&sum)) - base;
        prop_assert!((cs - (ca + cb)).abs() < 1e-9);
    }
}
