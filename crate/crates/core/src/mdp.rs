//! The discretized energy-storage decision problem.
//!
//! Four nodes (wind, grid, battery, load) and six energy allocations per
//! step. Decisions are constrained by:
//!
//! * D1: `x_EL + x_ER <= E_t` (wind energy available this step),
//! * D2: `x_GL + x_EL + eta * x_RL = L_t` (the load is always met),
//! * D3: `x_RG + x_RL <= min(R_t, rho_dch)`,
//! * D4: `x_ER + x_GR <= min(rho_ch, R_max - R_t)`,
//! * D5: all components nonnegative,
//!
//! with the dimensionality reduction `x_EL = min(E, L)` and
//! `x_ER = min(rho_ch, R_max - R, E - x_EL)` (snapped so the battery stays on
//! its grid). The contribution per step is
//! `P_t * (L_t - x_GR - x_GL + eta * x_RG)` with energies in kWh and prices
//! in $/MWh.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{BeliefTracker, Models, ProcessModel};

/// Hours per 5-minute step; converts kW to kWh per step.
pub const STEP_HOURS: f64 = 1.0 / 12.0;

/// Battery parameters and its level grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    /// Capacity in kWh.
    pub r_max_kwh: f64,
    /// Round-trip efficiency in [0, 1].
    pub eta: f64,
    /// Per-step charge limit in kWh.
    pub rho_ch_kwh: f64,
    /// Per-step discharge limit in kWh.
    pub rho_dch_kwh: f64,
    /// Number of evenly spaced battery levels from 0 to capacity.
    pub r_levels: usize,
}

impl StorageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.r_max_kwh < 0.0 || self.r_levels == 0 {
            return Err(Error::InvalidInput("battery needs r_max >= 0 and r_levels >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidInput("eta must lie in [0, 1]".into()));
        }
        if self.rho_ch_kwh < 0.0 || self.rho_dch_kwh < 0.0 {
            return Err(Error::InvalidInput("charge/discharge limits must be >= 0".into()));
        }
        Ok(())
    }

    /// Battery grid increment (and the decision granularity).
    pub fn delta(&self) -> f64 {
        if self.r_levels > 1 {
            self.r_max_kwh / (self.r_levels - 1) as f64
        } else {
            1.0
        }
    }

    pub fn level_kwh(&self, idx: usize) -> f64 {
        self.delta() * idx as f64
    }

    pub fn level_index(&self, r_kwh: f64) -> Result<usize> {
        let k = r_kwh / self.delta();
        let r = k.round();
        if (k - r).abs() > 1e-6 || r < 0.0 || r as usize >= self.r_levels {
            return Err(Error::Infeasible(format!(
                "battery level {r_kwh} kWh is off the {}-level grid",
                self.r_levels
            )));
        }
        Ok(r as usize)
    }

    /// Maximum discharge rate relative to capacity.
    pub fn c_rate(&self) -> f64 {
        self.rho_dch_kwh * 12.0 / self.r_max_kwh
    }
}

/// Six-component energy allocation for one step, in kWh.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Decision {
    pub grid_to_load: f64,
    pub grid_to_batt: f64,
    pub batt_to_grid: f64,
    pub wind_to_load: f64,
    pub wind_to_batt: f64,
    pub batt_to_load: f64,
}

impl Decision {
    /// Components in the conventional order (GL, GR, RG, EL, ER, RL); used
    /// for deterministic lexicographic tie-breaking.
    pub fn as_tuple(&self) -> [f64; 6] {
        [
            self.grid_to_load,
            self.grid_to_batt,
            self.batt_to_grid,
            self.wind_to_load,
            self.wind_to_batt,
            self.batt_to_load,
        ]
    }

    pub fn lex_less(&self, other: &Decision) -> bool {
        let a = self.as_tuple();
        let b = other.as_tuple();
        for i in 0..6 {
            if a[i] < b[i] {
                return true;
            }
            if a[i] > b[i] {
                return false;
            }
        }
        false
    }
}

const TOL: f64 = 1e-9;

/// Wind energy available in one step from an instantaneous power in kW.
pub fn wind_energy_kwh(e_kw: f64) -> f64 {
    e_kw * STEP_HOURS
}

/// The reduced components shared by every feasible decision at `(R, E, L)`.
pub fn reduced_components(spec: &StorageSpec, r_kwh: f64, e_kw: f64, load_kwh: f64) -> (f64, f64) {
    let e_avail = wind_energy_kwh(e_kw);
    let x_el = e_avail.min(load_kwh);
    let headroom = (spec.r_max_kwh - r_kwh).max(0.0);
    let cap_er = spec
        .rho_ch_kwh
        .min(headroom)
        .min((e_avail - x_el).max(0.0));
    // Snap the forced wind charge down so eta * x_ER is a whole number of
    // battery-grid increments; surplus wind beyond it is spilled.
    let delta = spec.delta();
    let x_er = if spec.eta > 0.0 {
        let units = (spec.eta * cap_er / delta + TOL).floor();
        units * delta / spec.eta
    } else {
        0.0
    };
    (x_el, x_er)
}

/// Enumerate the feasible decisions at `(R, E, L)` on the battery-grid
/// increment. The free components are the battery discharges and the grid
/// charge; the wind split is pinned by the reduction and `x_GL` by D2.
pub fn feasible_decisions(
    spec: &StorageSpec,
    r_kwh: f64,
    e_kw: f64,
    load_kwh: f64,
) -> Vec<Decision> {
    let delta = spec.delta();
    let (x_el, x_er) = reduced_components(spec, r_kwh, e_kw, load_kwh);
    let er_units = (spec.eta * x_er / delta).round() as usize;

    let max_dis_units = ((r_kwh.min(spec.rho_dch_kwh)) / delta + TOL).floor() as usize;
    let headroom = (spec.r_max_kwh - r_kwh).max(0.0);
    let max_ch_units = if spec.eta > 0.0 {
        (spec.eta * spec.rho_ch_kwh.min(headroom) / delta + TOL).floor() as usize
    } else {
        0
    };

    let mut out = Vec::new();
    for rl_units in 0..=max_dis_units {
        let x_rl = rl_units as f64 * delta;
        let x_gl = load_kwh - x_el - spec.eta * x_rl;
        if x_gl < -TOL {
            break;
        }
        let x_gl = x_gl.max(0.0);
        for rg_units in 0..=(max_dis_units - rl_units) {
            let x_rg = rg_units as f64 * delta;
            for gr_units in 0..=(max_ch_units.saturating_sub(er_units)) {
                let x_gr = if spec.eta > 0.0 {
                    gr_units as f64 * delta / spec.eta
                } else {
                    0.0
                };
                out.push(Decision {
                    grid_to_load: x_gl,
                    grid_to_batt: x_gr,
                    batt_to_grid: x_rg,
                    wind_to_load: x_el,
                    wind_to_batt: x_er,
                    batt_to_load: x_rl,
                });
            }
        }
    }
    out
}

/// Assert D1-D5 at a tolerance; returns the violated constraint on failure.
pub fn check_constraints(
    spec: &StorageSpec,
    r_kwh: f64,
    e_kw: f64,
    load_kwh: f64,
    d: &Decision,
) -> std::result::Result<(), String> {
    let e_avail = wind_energy_kwh(e_kw);
    let scale = (load_kwh.abs() + spec.r_max_kwh).max(1.0);
    let tol = 1e-9 * scale;
    if d.wind_to_load + d.wind_to_batt > e_avail + tol {
        return Err(format!(
            "D1 violated: EL + ER = {} > E = {e_avail}",
            d.wind_to_load + d.wind_to_batt
        ));
    }
    let supplied = d.grid_to_load + d.wind_to_load + spec.eta * d.batt_to_load;
    if (supplied - load_kwh).abs() > tol {
        return Err(format!("D2 violated: supplied {supplied} != load {load_kwh}"));
    }
    if d.batt_to_grid + d.batt_to_load > r_kwh.min(spec.rho_dch_kwh) + tol {
        return Err(format!(
            "D3 violated: RG + RL = {} > min(R, rho_dch) = {}",
            d.batt_to_grid + d.batt_to_load,
            r_kwh.min(spec.rho_dch_kwh)
        ));
    }
    let ch_cap = spec.rho_ch_kwh.min((spec.r_max_kwh - r_kwh).max(0.0));
    if d.wind_to_batt + d.grid_to_batt > ch_cap + tol {
        return Err(format!(
            "D4 violated: ER + GR = {} > min(rho_ch, R_max - R) = {ch_cap}",
            d.wind_to_batt + d.grid_to_batt
        ));
    }
    for (name, v) in [
        ("GL", d.grid_to_load),
        ("GR", d.grid_to_batt),
        ("RG", d.batt_to_grid),
        ("EL", d.wind_to_load),
        ("ER", d.wind_to_batt),
        ("RL", d.batt_to_load),
    ] {
        if v < -tol {
            return Err(format!("D5 violated: x_{name} = {v} < 0"));
        }
    }
    Ok(())
}

/// Dollars earned this step: `P * (L - x_GR - x_GL + eta * x_RG) / 1000`
/// with `P` in $/MWh and energies in kWh.
pub fn contribution(price: f64, load_kwh: f64, eta: f64, d: &Decision) -> f64 {
    price * (load_kwh - d.grid_to_batt - d.grid_to_load + eta * d.batt_to_grid) / 1000.0
}

/// Baseline-shifted contribution `P * (eta * x_RG - x_GR - x_GL) / 1000`,
/// removing the revenue any feasible policy earns by serving the load.
pub fn shifted_contribution(price: f64, eta: f64, d: &Decision) -> f64 {
    price * (eta * d.batt_to_grid - d.grid_to_batt - d.grid_to_load) / 1000.0
}

/// Post-decision battery level
/// `R + eta * (x_GR + x_ER) - x_RL - x_RG`, bounds-checked.
///
/// Threshold policies move the battery continuously; grid membership is a
/// contract of the solver-facing decisions, enforced by
/// [`transition_resource`].
pub fn resource_update(spec: &StorageSpec, r_kwh: f64, d: &Decision) -> Result<f64> {
    let r_post = r_kwh + spec.eta * (d.grid_to_batt + d.wind_to_batt)
        - d.batt_to_load
        - d.batt_to_grid;
    if r_post < -1e-6 || r_post > spec.r_max_kwh + 1e-6 {
        return Err(Error::Infeasible(format!(
            "post-decision level {r_post} outside [0, {}]",
            spec.r_max_kwh
        )));
    }
    Ok(r_post.clamp(0.0, spec.r_max_kwh))
}

/// [`resource_update`] with the additional contract that the result lands on
/// the battery grid; feasible_decisions must prevent violations.
pub fn transition_resource(spec: &StorageSpec, r_kwh: f64, d: &Decision) -> Result<f64> {
    let r_post = resource_update(spec, r_kwh, d)?;
    let idx = spec.level_index(r_post)?;
    Ok(spec.level_kwh(idx))
}

/// Everything fixed at time zero for one optimization day: profiles,
/// forecasts, references, temperature classes, and initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Horizon `T`; all series carry `T + 1` points for `t = 0..=T`.
    pub horizon: usize,
    /// Load profile in kW.
    pub load_kw: Vec<f64>,
    /// Wind power forecast in kW.
    pub wind_forecast_kw: Vec<f64>,
    /// Periodic price reference in $/MWh.
    pub price_reference: Vec<f64>,
    /// Temperature class per step (flattened `(y_s, y_tr)`).
    pub classes: Vec<usize>,
    pub storage: StorageSpec,
    /// Initial battery level index.
    pub r0_idx: usize,
    /// Initial wind error (kW) and price error ($/MWh), on the model grids.
    pub e0_error: f64,
    pub p0_error: f64,
    /// Wind power clamp bound in kW.
    pub e_max_kw: f64,
    /// Price clamp bounds in $/MWh.
    pub p_min: f64,
    pub p_max: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.storage.validate()?;
        let want = self.horizon + 1;
        for (name, len) in [
            ("load", self.load_kw.len()),
            ("wind forecast", self.wind_forecast_kw.len()),
            ("price reference", self.price_reference.len()),
            ("temperature classes", self.classes.len()),
        ] {
            if len != want {
                return Err(Error::InvalidInput(format!(
                    "{name} series has {len} points, expected horizon + 1 = {want}"
                )));
            }
        }
        if self.load_kw.iter().any(|l| *l <= 0.0) {
            return Err(Error::InvalidInput("load profile must be positive".into()));
        }
        if self.r0_idx >= self.storage.r_levels {
            return Err(Error::InvalidInput("initial battery index out of range".into()));
        }
        Ok(())
    }

    /// Load energy for one step, kWh.
    pub fn load_kwh(&self, t: usize) -> f64 {
        self.load_kw[t] * STEP_HOURS
    }

    /// Wind power value at `t` given the error, clamped to physical range.
    pub fn wind_value(&self, t: usize, error: f64) -> f64 {
        (self.wind_forecast_kw[t] + error).clamp(0.0, self.e_max_kw)
    }

    /// Price value at `t` given the error, clamped to the observed range.
    pub fn price_value(&self, t: usize, error: f64) -> f64 {
        (self.price_reference[t] + error).clamp(self.p_min, self.p_max)
    }
}

/// Pre-decision system state during a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: usize,
    pub r_kwh: f64,
    pub e_kw: f64,
    pub price: f64,
    pub wind_belief: BeliefTracker,
    pub price_belief: BeliefTracker,
}

impl SystemState {
    pub fn initial(scenario: &ScenarioConfig, models: &Models) -> Self {
        let wind_belief = models.wind.init_tracker(scenario.e0_error);
        let price_belief = models.price.init_tracker(scenario.p0_error);
        SystemState {
            t: 0,
            r_kwh: scenario.storage.level_kwh(scenario.r0_idx),
            e_kw: scenario.wind_value(0, wind_belief.last_error(&models.wind)),
            price: scenario.price_value(0, price_belief.last_error(&models.price)),
            wind_belief,
            price_belief,
        }
    }
}

/// Apply the exogenous half of the transition: reconstruct the next wind and
/// price values from the forecasts and advance both beliefs.
pub fn transition_exogenous(
    scenario: &ScenarioConfig,
    models: &Models,
    state: &SystemState,
    r_post_kwh: f64,
    wind_error: f64,
    price_error: f64,
) -> (SystemState, bool) {
    let t_next = state.t + 1;
    let class = scenario.classes[t_next];
    let (wind_belief, reset_w) = models
        .wind
        .update_tracker(&state.wind_belief, wind_error, 0);
    let (price_belief, reset_p) = models
        .price
        .update_tracker(&state.price_belief, price_error, class);
    (
        SystemState {
            t: t_next,
            r_kwh: r_post_kwh,
            e_kw: scenario.wind_value(t_next, wind_error),
            price: scenario.price_value(t_next, price_error),
            wind_belief,
            price_belief,
        },
        reset_w || reset_p,
    )
}

/// Index arithmetic for the compact state spaces the backward pass works on.
///
/// A compact pre-decision state is `(r, wind pair, price pair)` where a pair
/// is `(latent state, value index)`; a compact post-decision state is
/// `(r, wind info, price info)`.
#[derive(Debug, Clone)]
pub struct CompactSpace {
    pub r_levels: usize,
    pub wind_pairs: Vec<(usize, usize)>,
    pub price_pairs: Vec<(usize, usize)>,
    pub wind_pair_of: Vec<Vec<Option<u32>>>,
    pub price_pair_of: Vec<Vec<Option<u32>>>,
    pub wind_infos: usize,
    pub price_infos: usize,
    pub wind_info_of_pair: Vec<u32>,
    pub price_info_of_pair: Vec<u32>,
}

impl CompactSpace {
    pub fn build(models: &Models, r_levels: usize) -> Self {
        let index_pairs = |model: &ProcessModel| {
            let pairs = model.pairs();
            let mut pair_of = vec![vec![None; model.grid().len()]; model.latent_count()];
            let mut info_of_pair = Vec::with_capacity(pairs.len());
            for (k, (s, v)) in pairs.iter().enumerate() {
                pair_of[*s][*v] = Some(k as u32);
                info_of_pair.push(model.info_of(*s, *v) as u32);
            }
            (pairs, pair_of, info_of_pair)
        };
        let (wind_pairs, wind_pair_of, wind_info_of_pair) = index_pairs(&models.wind);
        let (price_pairs, price_pair_of, price_info_of_pair) = index_pairs(&models.price);
        CompactSpace {
            r_levels,
            wind_pairs,
            price_pairs,
            wind_pair_of,
            price_pair_of,
            wind_infos: models.wind.info_count(),
            price_infos: models.price.info_count(),
            wind_info_of_pair,
            price_info_of_pair,
        }
    }

    pub fn pre_count(&self) -> usize {
        self.r_levels * self.wind_pairs.len() * self.price_pairs.len()
    }

    pub fn post_count(&self) -> usize {
        self.r_levels * self.wind_infos * self.price_infos
    }

    pub fn pre_index(&self, r: usize, wp: usize, pp: usize) -> usize {
        (r * self.wind_pairs.len() + wp) * self.price_pairs.len() + pp
    }

    pub fn post_index(&self, r: usize, wi: usize, pi: usize) -> usize {
        (r * self.wind_infos + wi) * self.price_infos + pi
    }

    pub fn post_unpack(&self, idx: usize) -> (usize, usize, usize) {
        let pi = idx % self.price_infos;
        let rest = idx / self.price_infos;
        (rest / self.wind_infos, rest % self.wind_infos, pi)
    }
}

/// Transition probability from a compact post-decision state to a compact
/// next pre-decision state: the product of the battery indicator and the two
/// process factors.
#[allow(clippy::too_many_arguments)]
pub fn compact_transition_prob(
    models: &Models,
    space: &CompactSpace,
    post_r: usize,
    wind_info: usize,
    price_info: usize,
    next_r: usize,
    next_wind_pair: usize,
    next_price_pair: usize,
    class_next: usize,
) -> f64 {
    if next_r != post_r {
        return 0.0;
    }
    let (ws, wv) = space.wind_pairs[next_wind_pair];
    let (ps, pv) = space.price_pairs[next_price_pair];
    let wind_p: f64 = models
        .wind
        .transition_row(wind_info, 0)
        .iter()
        .filter(|(s, v, _)| *s == ws && *v == wv)
        .map(|(_, _, p)| p)
        .sum();
    let price_p: f64 = models
        .price
        .transition_row(price_info, class_next)
        .iter()
        .filter(|(s, v, _)| *s == ps && *v == pv)
        .map(|(_, _, p)| p)
        .sum();
    wind_p * price_p
}
