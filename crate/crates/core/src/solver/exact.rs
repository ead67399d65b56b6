//! Exact backward induction over the compact MDP.

use rayon::prelude::*;

use crate::error::Result;
use crate::mdp::{CompactSpace, ScenarioConfig};
use crate::process::Models;

use super::{
    check_budget, progress_line, terminal_table, DecisionOptions, DynamicsCache, LookupVfa,
    SolverConfig,
};

/// Compute pre-decision values for every compact pre-decision state at time
/// `t` from the post-decision table at the same time.
pub(crate) fn maximize_all(
    space: &CompactSpace,
    options: &DecisionOptions,
    post_table: &[f64],
    scenario: &ScenarioConfig,
    models: &Models,
    t: usize,
) -> Vec<f64> {
    let wp_n = space.wind_pairs.len();
    let pp_n = space.price_pairs.len();
    let price_vals: Vec<f64> = space
        .price_pairs
        .iter()
        .map(|(_, pv)| scenario.price_value(t, models.price.grid().value(*pv)))
        .collect();
    let price_infos: Vec<usize> = (0..pp_n)
        .map(|pp| space.price_info_of_pair[pp] as usize)
        .collect();
    let mut out = vec![0.0f64; space.pre_count()];
    out.par_chunks_mut(pp_n).enumerate().for_each(|(k, chunk)| {
        let r = k / wp_n;
        let wp = k % wp_n;
        let wi = space.wind_info_of_pair[wp] as usize;
        let (_, wv) = space.wind_pairs[wp];
        let opts = &options.opts[r][wv];
        for (pp, slot) in chunk.iter_mut().enumerate() {
            let pi = price_infos[pp];
            let price = price_vals[pp];
            let mut best = f64::NEG_INFINITY;
            for (r_post, slope) in opts {
                let v = price * slope / 1000.0
                    + post_table[space.post_index(*r_post as usize, wi, pi)];
                if v > best {
                    best = v;
                }
            }
            *slot = best;
        }
    });
    out
}

/// Expectation step: post-decision values at `t` as the probability-weighted
/// average of the next pre-decision values, normalized by the row mass.
fn expectation(
    space: &CompactSpace,
    cache: &DynamicsCache,
    class_next: usize,
    v_next: &[f64],
) -> Vec<f64> {
    let wp_n = space.wind_pairs.len();
    let pp_n = space.price_pairs.len();
    let pi_n = space.price_infos;

    // Stage 1: for each (r, wind pair, price info), the price-row partial
    // sums of the next pre-decision values.
    let mut stage: Vec<f64> = vec![0.0; space.r_levels * wp_n * pi_n];
    stage
        .par_chunks_mut(pi_n)
        .enumerate()
        .for_each(|(k, chunk)| {
            let r = k / wp_n;
            let wp = k % wp_n;
            let base = (r * wp_n + wp) * pp_n;
            for (pi, slot) in chunk.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (pp, q) in cache.price_row(class_next, pi) {
                    acc += q * v_next[base + *pp as usize];
                }
                *slot = acc;
            }
        });

    // Price-row masses, accumulated in row order.
    let price_mass: Vec<f64> = (0..pi_n)
        .map(|pi| cache.price_row(class_next, pi).iter().map(|(_, q)| q).sum())
        .collect();

    // Stage 2: fold the wind rows and normalize.
    let wi_n = space.wind_infos;
    let mut post = vec![0.0f64; space.post_count()];
    post.par_chunks_mut(pi_n).enumerate().for_each(|(k, chunk)| {
        let r = k / wi_n;
        let wi = k % wi_n;
        for (pi, slot) in chunk.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (wp, p) in &cache.wind_rows[wi] {
                acc += p * stage[(r * wp_n + *wp as usize) * pi_n + pi];
                norm += p * price_mass[pi];
            }
            *slot = acc / norm;
        }
    });
    post
}

/// Full backward sweep; returns post-decision lookup tables for every `t`.
pub fn exact_backward_dp(
    scenario: &ScenarioConfig,
    models: &Models,
    cfg: &SolverConfig,
) -> Result<LookupVfa> {
    scenario.validate()?;
    cfg.validate()?;
    let space = CompactSpace::build(models, scenario.storage.r_levels);
    check_budget(&space, cfg)?;
    let cache = DynamicsCache::build(models, &space);
    let t_end = scenario.horizon;

    let mut tables: Vec<Vec<f64>> = vec![Vec::new(); t_end + 1];
    tables[t_end] = terminal_table(scenario, &space, cfg.terminal);

    let options_end = DecisionOptions::build(scenario, models, t_end);
    let mut v_next = maximize_all(&space, &options_end, &tables[t_end], scenario, models, t_end);

    for t in (0..t_end).rev() {
        let started = std::time::Instant::now();
        let class_next = scenario.classes[t + 1];
        tables[t] = expectation(&space, &cache, class_next, &v_next);
        if t > 0 {
            let options = DecisionOptions::build(scenario, models, t);
            v_next = maximize_all(&space, &options, &tables[t], scenario, models, t);
        }
        progress_line(
            cfg,
            "exact",
            t,
            space.pre_count(),
            space.pre_count(),
            started.elapsed().as_millis(),
        );
    }

    Ok(LookupVfa {
        horizon: t_end,
        r_levels: space.r_levels,
        wind_infos: space.wind_infos,
        price_infos: space.price_infos,
        tables,
    })
}
