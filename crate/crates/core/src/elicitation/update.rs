use super::{normalize_log, ElicitationError, StrategyConfig, Updater, UserState};
use crate::catalog::{EmbeddingSet, ItemSpace, KernelParams, NeighborIndex};

/// Per-item labels: +1 selected, -1 presented but not selected, 0 otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<i8>,
}

impl LabelVector {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> i8 {
        self.labels[i]
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.labels
    }

    /// Nonzero labels in ascending item order.
    pub fn labeled(&self) -> impl Iterator<Item = (usize, i8)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y != 0)
            .map(|(i, &y)| (i, y))
    }
}

pub(crate) fn check_presentation(n: usize, presented: &[usize]) -> Result<(), ElicitationError> {
    let mut seen = vec![false; n];
    for &k in presented {
        if k >= n {
            return Err(ElicitationError::ItemOutOfRange(k));
        }
        if std::mem::replace(&mut seen[k], true) {
            return Err(ElicitationError::DuplicateItem(k));
        }
    }
    Ok(())
}

pub(crate) fn check_selection(presented: &[usize], selected: &[usize]) -> Result<(), ElicitationError> {
    match selected.iter().find(|s| !presented.contains(s)) {
        Some(&bad) => Err(ElicitationError::SelectionNotSubset(bad)),
        None => Ok(()),
    }
}

pub fn label_vector(
    n: usize,
    presented: &[usize],
    selected: &[usize],
) -> Result<LabelVector, ElicitationError> {
    check_presentation(n, presented)?;
    check_selection(presented, selected)?;
    let mut labels = vec![0i8; n];
    for &k in presented {
        labels[k] = -1;
    }
    for &s in selected {
        labels[s] = 1;
    }
    Ok(LabelVector { labels })
}

/// Dense update vector plus the per-source local-graph contributions it sums.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateVector {
    pub values: Vec<f64>,
    /// `(source item, [(target item, w * y)])` in ascending source order.
    pub components: Vec<(usize, Vec<(usize, f64)>)>,
}

/// Spreads each label to the source's radius neighbors: `u_j = Σ_i w_ij y_i`,
/// with `w_ii = 1`. Sources are accumulated in ascending order.
pub fn propagate(labels: &LabelVector, index: &NeighborIndex) -> UpdateVector {
    let mut values = vec![0.0; labels.len()];
    let mut components = Vec::new();
    for (source, y) in labels.labeled() {
        let y = f64::from(y);
        let entries: Vec<(usize, f64)> = index.neighbors(source).map(|(j, w)| (j, w * y)).collect();
        for &(j, v) in &entries {
            values[j] += v;
        }
        components.push((source, entries));
    }
    UpdateVector { values, components }
}

/// The single-pass form: for every item, sum `±w_ij` over presented items
/// (`+` if selected) and test whether any presented item is within the
/// radius. Weights come straight from the embeddings, not from an index.
///
/// Returns the update vector and the newly covered items.
pub fn fused_update_vector(
    embeddings: &EmbeddingSet,
    kernel: &KernelParams,
    presented: &[usize],
    selected: &[usize],
) -> (Vec<f64>, Vec<bool>) {
    let n = embeddings.len();
    let mut shown: Vec<(usize, bool)> = presented.iter().map(|&k| (k, selected.contains(&k))).collect();
    shown.sort_unstable_by_key(|&(k, _)| k);
    let mut u = vec![0.0; n];
    let mut covered = vec![false; n];
    for i in 0..n {
        let mut acc = 0.0;
        let mut near = false;
        for &(j, picked) in &shown {
            let d2 = embeddings.dist_sq(i, j);
            let w = kernel.weight_from_dist_sq(d2);
            acc += if picked { w } else { -w };
            near |= kernel.within(d2);
        }
        u[i] = acc;
        covered[i] = near;
    }
    (u, covered)
}

/// `p_i <- p_i exp(clamp(beta u_i / p_i))`, renormalized, in log space.
pub fn apply_exponentiated_update(state: &mut UserState, u: &[f64], beta: f64, clamp: f64) {
    assert_eq!(u.len(), state.len());
    let mut log_p: Vec<f64> = state
        .log_p()
        .iter()
        .zip(u)
        .map(|(&l, &ui)| {
            if ui == 0.0 || beta == 0.0 {
                return l;
            }
            let p = l.exp();
            let step = (beta * ui / p).clamp(-clamp, clamp);
            l + step
        })
        .collect();
    normalize_log(&mut log_p);
    state.set_log_p(log_p);
}

/// Adds every presented item and all its radius neighbors to the explored set.
pub fn update_explored(state: &mut UserState, presented: &[usize], index: &NeighborIndex) {
    for &k in presented {
        for (j, _) in index.neighbors(k) {
            state.mark_explored(j);
        }
    }
}

/// Mistake-driven perceptron pass over the presented items, in order.
pub fn perceptron_update(
    weights: &[f64],
    presented: &[usize],
    selected: &[usize],
    embeddings: &EmbeddingSet,
) -> Vec<f64> {
    let mut w = weights.to_vec();
    for &i in presented {
        let y = if selected.contains(&i) { 1.0 } else { -1.0 };
        let x = embeddings.row(i);
        let margin: f64 = w.iter().zip(x).map(|(&a, &b)| a * f64::from(b)).sum();
        if y * margin <= 0.0 {
            for (a, &b) in w.iter_mut().zip(x) {
                *a += y * f64::from(b);
            }
        }
    }
    w
}

pub(crate) fn perceptron_scores(weights: &[f64], embeddings: &EmbeddingSet) -> Vec<f64> {
    (0..embeddings.len())
        .map(|i| {
            weights
                .iter()
                .zip(embeddings.row(i))
                .map(|(&a, &b)| a * f64::from(b))
                .sum()
        })
        .collect()
}

/// One user-state update from an answered presentation.
///
/// An empty presentation only advances `t`. With the LE updater this runs
/// the fused single pass, the exponentiated update and the explored-set
/// union; with OP it runs the perceptron and re-derives `p` as the softmax
/// of the perceptron scores.
pub fn update(
    state: &mut UserState,
    presented: &[usize],
    selected: &[usize],
    space: &ItemSpace,
    config: &StrategyConfig,
) -> Result<(), ElicitationError> {
    let n = state.len();
    if n != space.len() {
        return Err(ElicitationError::InvalidState(format!(
            "state covers {n} items, catalog has {}",
            space.len()
        )));
    }
    check_presentation(n, presented)?;
    check_selection(presented, selected)?;
    if presented.is_empty() {
        state.finish_step(presented, selected);
        return Ok(());
    }
    match config.updater {
        Updater::Le => {
            let (u, covered) =
                fused_update_vector(space.embeddings(), &space.kernel(), presented, selected);
            apply_exponentiated_update(state, &u, config.beta_for(n), config.exponent_clamp);
            for (i, c) in covered.into_iter().enumerate() {
                if c {
                    state.mark_explored(i);
                }
            }
        }
        Updater::Op => {
            let dim = space.embeddings().dim();
            let w0 = state
                .perceptron_weights()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; dim]);
            let w = perceptron_update(&w0, presented, selected, space.embeddings());
            let mut log_p = perceptron_scores(&w, space.embeddings());
            normalize_log(&mut log_p);
            state.set_log_p(log_p);
            state.set_perceptron(w);
            update_explored(state, presented, space.index());
        }
    }
    state.finish_step(presented, selected);
    Ok(())
}
