//! Backward ADP with post-decision values in lookup table form.
//!
//! Instead of valuing every next pre-decision state, each post-decision state
//! samples `ceil(alpha * |reachable|)` of its reachable successors into a
//! shared sampled set; sampled states are valued by maximization and the
//! expectation renormalizes the transition weights over the sampled subset.
//! The per-post sampling guarantees every post-decision state keeps at least
//! one successor, so the renormalizer is always positive.

use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::mdp::{CompactSpace, ScenarioConfig};
use crate::process::Models;
use crate::rng::stream;

use super::{
    check_budget, progress_line, terminal_table, DecisionOptions, DynamicsCache, LookupVfa,
    SolverConfig,
};

/// Sample the shared set of time-`t_next` pre-decision states by visiting
/// every post-decision state at `t_next - 1`.
fn sample_mask(
    space: &CompactSpace,
    cache: &DynamicsCache,
    cfg: &SolverConfig,
    t_next: usize,
    class_next: usize,
) -> Vec<bool> {
    let pp_n = space.price_pairs.len();
    let post_count = space.post_count();

    if cfg.alpha >= 1.0 {
        // Every reachable successor of every post-decision state.
        let mut mask = vec![false; space.pre_count()];
        for wi in 0..space.wind_infos {
            for pi in 0..space.price_infos {
                for r in 0..space.r_levels {
                    for (wp, _) in &cache.wind_rows[wi] {
                        let base = (r * space.wind_pairs.len() + *wp as usize) * pp_n;
                        for (pp, _) in cache.price_row(class_next, pi) {
                            mask[base + *pp as usize] = true;
                        }
                    }
                }
            }
        }
        return mask;
    }

    let sampled: Vec<Vec<u32>> = (0..post_count)
        .into_par_iter()
        .map(|post| {
            let (r, wi, pi) = space.post_unpack(post);
            let wind_row = &cache.wind_rows[wi];
            let price_row = cache.price_row(class_next, pi);
            let total = wind_row.len() * price_row.len();
            if total == 0 {
                return Vec::new();
            }
            let want = ((cfg.alpha * total as f64).ceil() as usize).clamp(1, total);
            let mut rng = stream(
                cfg.seed,
                "badp-sample",
                (t_next as u64) << 40 | post as u64,
            );
            let mut indices: Vec<u32> = (0..total as u32).collect();
            let mut out = Vec::with_capacity(want);
            for k in 0..want {
                let j = rng.random_range(k..total);
                indices.swap(k, j);
                let flat = indices[k] as usize;
                let (wp, _) = wind_row[flat / price_row.len()];
                let (pp, _) = price_row[flat % price_row.len()];
                out.push(space.pre_index(r, wp as usize, pp as usize) as u32);
            }
            out
        })
        .collect();

    let mut mask = vec![false; space.pre_count()];
    for list in sampled {
        for idx in list {
            mask[idx as usize] = true;
        }
    }
    mask
}

/// Pre-decision values restricted to the sampled set; unsampled entries stay
/// unvalued.
fn maximize_masked(
    space: &CompactSpace,
    options: &DecisionOptions,
    post_table: &[f64],
    scenario: &ScenarioConfig,
    models: &Models,
    t: usize,
    mask: &[bool],
) -> Vec<f64> {
    let wp_n = space.wind_pairs.len();
    let pp_n = space.price_pairs.len();
    let price_vals: Vec<f64> = space
        .price_pairs
        .iter()
        .map(|(_, pv)| scenario.price_value(t, models.price.grid().value(*pv)))
        .collect();
    let mut out = vec![f64::NAN; space.pre_count()];
    out.par_chunks_mut(pp_n).enumerate().for_each(|(k, chunk)| {
        let r = k / wp_n;
        let wp = k % wp_n;
        let wi = space.wind_info_of_pair[wp] as usize;
        let (_, wv) = space.wind_pairs[wp];
        let opts = &options.opts[r][wv];
        let base = k * pp_n;
        for (pp, slot) in chunk.iter_mut().enumerate() {
            if !mask[base + pp] {
                continue;
            }
            let pi = space.price_info_of_pair[pp] as usize;
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

/// Expectation over the sampled successors with weight renormalization.
fn expectation_sampled(
    space: &CompactSpace,
    cache: &DynamicsCache,
    class_next: usize,
    v_next: &[f64],
    mask: &[bool],
) -> Vec<f64> {
    let wp_n = space.wind_pairs.len();
    let pp_n = space.price_pairs.len();
    let pi_n = space.price_infos;
    let wi_n = space.wind_infos;
    let mut post = vec![0.0f64; space.post_count()];
    post.par_chunks_mut(pi_n).enumerate().for_each(|(k, chunk)| {
        let r = k / wi_n;
        let wi = k % wi_n;
        for (pi, slot) in chunk.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (wp, p) in &cache.wind_rows[wi] {
                let base = (r * wp_n + *wp as usize) * pp_n;
                let mut inner_v = 0.0;
                let mut inner_q = 0.0;
                for (pp, q) in cache.price_row(class_next, pi) {
                    let idx = base + *pp as usize;
                    if mask[idx] {
                        inner_v += q * v_next[idx];
                        inner_q += q;
                    }
                }
                acc += p * inner_v;
                norm += p * inner_q;
            }
            debug_assert!(norm > 0.0, "sampling left a post state without successors");
            *slot = acc / norm;
        }
    });
    post
}

/// Algorithm: backward ADP with lookup-table post-decision values at
/// sampling rate `cfg.alpha`. At `alpha = 1` the sampled set is the full
/// reachable set and the sweep reproduces exact backward induction.
pub fn badp_lookup(
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

    // Sample the terminal pre-decision states from the last post states.
    let mut mask = sample_mask(&space, &cache, cfg, t_end, scenario.classes[t_end]);
    let options_end = DecisionOptions::build(scenario, models, t_end);
    let mut v_next = maximize_masked(
        &space,
        &options_end,
        &tables[t_end],
        scenario,
        models,
        t_end,
        &mask,
    );

    for t in (0..t_end).rev() {
        let started = std::time::Instant::now();
        let class_next = scenario.classes[t + 1];
        tables[t] = expectation_sampled(&space, &cache, class_next, &v_next, &mask);
        let sampled = mask.iter().filter(|m| **m).count();
        if t > 0 {
            mask = sample_mask(&space, &cache, cfg, t, scenario.classes[t]);
            let options = DecisionOptions::build(scenario, models, t);
            v_next = maximize_masked(&space, &options, &tables[t], scenario, models, t, &mask);
        }
        progress_line(cfg, "badp-lookup", t, space.pre_count(), sampled, started.elapsed().as_millis());
    }

    Ok(LookupVfa {
        horizon: t_end,
        r_levels: space.r_levels,
        wind_infos: space.wind_infos,
        price_infos: space.price_infos,
        tables,
    })
}
