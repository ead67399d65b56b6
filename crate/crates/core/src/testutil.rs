//! Hand-built instances shared by the solver/policy/simulation unit tests.

use crate::crossing::{QuantizedDurations, SojournCdf};
use crate::grid::{GridSpec, Pmf};
use crate::hsmm::{CrossingStateModel, ModelHyperparams, TrainingDiagnostics};
use crate::mdp::{ScenarioConfig, StorageSpec};
use crate::process::{Models, ProcessModel};

/// m = n = 1 crossing model on a small grid, fully specified by hand.
#[allow(clippy::too_many_arguments)]
pub fn m1_model(
    grid: GridSpec,
    stay_down: Vec<f64>,
    stay_up: Vec<f64>,
    entry_down: Vec<f64>,
    entry_up: Vec<f64>,
    sojourn_down: Vec<(u32, f64)>,
    sojourn_up: Vec<(u32, f64)>,
    compact: [[f64; 2]; 2],
) -> CrossingStateModel {
    let hyper = ModelHyperparams { m: 1, n: 1, grid };
    let built = hyper.grid.build().unwrap();
    let q = |points: Vec<(u32, f64)>| QuantizedDurations {
        edges: vec![],
        cdfs: vec![SojournCdf { points }],
        empty_bins: vec![],
    };
    CrossingStateModel {
        hyper,
        grid: built,
        n_classes: 1,
        duration_bins: [q(sojourn_down), q(sojourn_up)],
        switch_matrix: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        compact_matrix: compact.iter().map(|r| r.to_vec()).collect(),
        error_edges: vec![vec![], vec![]],
        stay_pmfs: vec![
            vec![vec![Pmf { probs: stay_down }]],
            vec![vec![Pmf { probs: stay_up }]],
        ],
        entry_pmfs: vec![
            vec![Pmf { probs: entry_down }],
            vec![Pmf { probs: entry_up }],
        ],
        extras: None,
        diagnostics: TrainingDiagnostics::default(),
    }
}

/// The tiny benchmark: 3 wind values, 3 price values, m = n = 1, five
/// battery levels.
pub fn tiny_models() -> Models {
    let wind = m1_model(
        GridSpec { min: -100.0, max: 100.0, step: 100.0 },
        vec![0.6, 0.4, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![0.7, 0.3, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![(1, 0.4), (3, 1.0)],
        vec![(2, 1.0)],
        [[0.8, 0.2], [0.3, 0.7]],
    );
    let price = m1_model(
        GridSpec { min: -10.0, max: 10.0, step: 10.0 },
        vec![0.5, 0.5, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![0.6, 0.4, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![(2, 1.0)],
        vec![(1, 0.5), (4, 1.0)],
        [[0.7, 0.3], [0.4, 0.6]],
    );
    Models {
        wind: ProcessModel::Hsmm(wind),
        price: ProcessModel::Hsmm(price),
    }
}

pub fn tiny_scenario(horizon: usize) -> ScenarioConfig {
    ScenarioConfig {
        horizon,
        load_kw: vec![1800.0; horizon + 1],
        wind_forecast_kw: vec![1000.0; horizon + 1],
        price_reference: vec![40.0; horizon + 1],
        classes: vec![0; horizon + 1],
        storage: StorageSpec {
            r_max_kwh: 400.0,
            eta: 1.0,
            rho_ch_kwh: 100.0,
            rho_dch_kwh: 100.0,
            r_levels: 5,
        },
        r0_idx: 2,
        e0_error: 100.0,
        p0_error: -10.0,
        e_max_kw: 1100.0,
        p_min: 20.0,
        p_max: 60.0,
    }
}
