use rand::seq::{index, IndexedRandom};
use rand::Rng;

use super::{ElicitationError, Phase, Presentation, Selector, StrategyConfig, UserState};
use crate::catalog::{EmbeddingSet, ItemSpace};

/// k-means++ seeding over the embeddings: uniform first pick, then each pick
/// with probability proportional to its squared distance to the nearest
/// already-chosen item.
pub fn kmeans_pp(
    embeddings: &EmbeddingSet,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, ElicitationError> {
    kmeans_pp_with(embeddings.len(), count, &[], |i, j| embeddings.dist_sq(i, j), rng)
}

/// k-means++ over an arbitrary point set given by `dist_sq`, continuing from
/// `initial` picks. When every remaining item sits at distance 0 from the
/// chosen set the next pick is uniform among the unchosen.
pub fn kmeans_pp_with(
    n_items: usize,
    count: usize,
    initial: &[usize],
    dist_sq: impl Fn(usize, usize) -> f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, ElicitationError> {
    if count > n_items {
        return Err(ElicitationError::NotEnoughItems {
            requested: count,
            available: n_items,
        });
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    let mut min_d2 = vec![f64::INFINITY; n_items];
    let add = |k: usize, chosen: &mut Vec<usize>, min_d2: &mut [f64]| {
        chosen.push(k);
        for (i, m) in min_d2.iter_mut().enumerate() {
            *m = m.min(if i == k { 0.0 } else { dist_sq(i, k) });
        }
    };
    for &k in initial.iter().take(count) {
        if k >= n_items {
            return Err(ElicitationError::ItemOutOfRange(k));
        }
        add(k, &mut chosen, &mut min_d2);
    }
    if chosen.is_empty() && count > 0 {
        let first = rng.random_range(0..n_items);
        add(first, &mut chosen, &mut min_d2);
    }
    while chosen.len() < count {
        let total: f64 = min_d2.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in min_d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            let rest: Vec<usize> = (0..n_items).filter(|&i| !chosen.contains(&i)).collect();
            *rest.choose(rng).expect("count <= n_items")
        };
        add(next, &mut chosen, &mut min_d2);
    }
    Ok(chosen)
}

fn check_fraction(fraction: f64) -> Result<(), ElicitationError> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(ElicitationError::InvalidFraction(fraction))
    }
}

fn target_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(1, n)
}

/// Items at or above the `(1 - fraction)` quantile of `values` (linear
/// interpolation), best first. Ties are resolved by ascending index and the
/// set is capped at `ceil(fraction * n)` items.
pub fn top_fraction(values: &[f64], fraction: f64) -> Result<Vec<usize>, ElicitationError> {
    check_fraction(fraction)?;
    let n = values.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut ascending: Vec<f64> = values.to_vec();
    ascending.sort_by(f64::total_cmp);
    let pos = (1.0 - fraction) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let cut = if pos > lo as f64 { lo + 1 } else { lo };
    let threshold = ascending[cut.min(n - 1)];
    let mut order: Vec<usize> = (0..n).filter(|&i| values[i] >= threshold).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(target_count(n, fraction));
    Ok(order)
}

/// Items at or below the `fraction` quantile, worst first, same tie rule.
pub fn bottom_fraction(values: &[f64], fraction: f64) -> Result<Vec<usize>, ElicitationError> {
    check_fraction(fraction)?;
    let n = values.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut ascending: Vec<f64> = values.to_vec();
    ascending.sort_by(f64::total_cmp);
    let pos = fraction * (n - 1) as f64;
    let threshold = ascending[pos.floor() as usize];
    let mut order: Vec<usize> = (0..n).filter(|&i| values[i] <= threshold).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order.truncate(target_count(n, fraction));
    Ok(order)
}

/// Picks the next presentation for `iteration` (1-based).
///
/// Iterations 1 and 2 are ten-item grids (k-means++ under EE, uniform under
/// RS). Later iterations are pairs: under EE a random not-yet-shown member of
/// the top-preference set followed by a random unexplored item.
pub fn select(
    state: &UserState,
    iteration: u32,
    space: &ItemSpace,
    config: &StrategyConfig,
    rng: &mut impl Rng,
) -> Result<Presentation, ElicitationError> {
    let n = state.len();
    let phase = Phase::for_iteration(iteration);
    let items = match (phase, config.selector) {
        (Phase::Grid10, Selector::Ee) => kmeans_pp(space.embeddings(), phase.size(), rng)?,
        (_, Selector::Rs) => {
            if phase.size() > n {
                return Err(ElicitationError::NotEnoughItems {
                    requested: phase.size(),
                    available: n,
                });
            }
            index::sample(rng, n, phase.size()).into_vec()
        }
        (Phase::Pair, Selector::Ee) => exploit_explore(state, config.fraction, rng)?,
    };
    Ok(Presentation { items, phase })
}

fn exploit_explore(
    state: &UserState,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, ElicitationError> {
    let n = state.len();
    let presented = state.presented_mask();
    let top = top_fraction(state.log_p(), fraction)?;
    let fresh_top: Vec<usize> = top.iter().copied().filter(|&i| !presented[i]).collect();
    let exploit = if let Some(&k) = fresh_top.choose(rng) {
        k
    } else {
        // best not-yet-shown item, else anything from the top set
        let lp = state.log_p();
        (0..n)
            .filter(|&i| !presented[i])
            .max_by(|&a, &b| lp[a].total_cmp(&lp[b]).then(b.cmp(&a)))
            .unwrap_or_else(|| *top.choose(rng).expect("non-empty catalog"))
    };

    let unexplored: Vec<usize> = (0..n).filter(|&i| !state.is_explored(i) && i != exploit).collect();
    let explore = match unexplored.choose(rng) {
        Some(&k) => k,
        None => {
            let stale: Vec<usize> = (0..n)
                .filter(|&i| state.is_explored(i) && !presented[i] && i != exploit)
                .collect();
            match stale.choose(rng) {
                Some(&k) => k,
                None => {
                    let mut k = rng.random_range(0..n - 1);
                    if k >= exploit {
                        k += 1;
                    }
                    k
                }
            }
        }
    };
    Ok(vec![exploit, explore])
}
