//! Ranking metrics (Recall@K, NDCG@K, MAP@K) and the noise-detection hit
//! ratio used by the controlled experiments.
//!
//! Rankings exclude training positives from the candidate pool; users whose
//! pool is shallower than the requested depth are skipped with a warning.
//! Metrics are macro-averaged over users with nonempty truth sets.

use std::collections::HashSet;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::NoiseLedger;
use crate::denoise::RelabelMatrix;
use crate::error::{Error, Result};
use crate::model::InteractionMatrix;

/// Per-user top-K item rankings (descending score, ties toward the smaller
/// item index), with training positives excluded from the candidates.
#[derive(Debug, Clone)]
pub struct RankedList {
    k: usize,
    /// `None` marks users skipped for having fewer than `k` candidates.
    lists: Vec<Option<Vec<u32>>>,
    skipped: Vec<u32>,
}

impl RankedList {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_users(&self) -> usize {
        self.lists.len()
    }

    /// The user's top-K items, or `None` if the user was skipped.
    pub fn list(&self, user: usize) -> Option<&[u32]> {
        self.lists[user].as_deref()
    }

    pub fn skipped(&self) -> &[u32] {
        &self.skipped
    }
}

/// Ranks each user's items by predicted score, excluding that user's
/// positives in `exclude` (the training fold) from the candidate pool.
pub fn rank_predictions(
    scores: &Array2<f64>,
    exclude: &InteractionMatrix,
    k: usize,
) -> Result<RankedList> {
    if k < 1 {
        return Err(Error::InvalidArgument("ranking depth K must be ≥ 1".into()));
    }
    let (m, n) = scores.dim();
    if (m, n) != (exclude.n_users(), exclude.n_items()) {
        return Err(Error::ShapeMismatch {
            context: "rank_predictions",
            expected: (exclude.n_users(), exclude.n_items()),
            got: (m, n),
        });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            context: "rank_predictions",
            detail: "score matrix contains non-finite entries".into(),
        });
    }
    let lists: Vec<Option<Vec<u32>>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let excluded: HashSet<u32> = exclude.row(i).iter().map(|&(j, _)| j).collect();
            let mut candidates: Vec<u32> = (0..n as u32)
                .filter(|j| !excluded.contains(j))
                .collect();
            if candidates.len() < k {
                return None;
            }
            // Stable sort on descending score keeps ascending-index ties.
            candidates.sort_by(|&a, &b| {
                scores[[i, b as usize]]
                    .partial_cmp(&scores[[i, a as usize]])
                    .unwrap()
            });
            candidates.truncate(k);
            Some(candidates)
        })
        .collect();
    let skipped: Vec<u32> = lists
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_none())
        .map(|(i, _)| i as u32)
        .collect();
    if !skipped.is_empty() {
        log::warn!(
            "{} user(s) skipped from ranking: fewer than {k} candidate items",
            skipped.len()
        );
    }
    Ok(RankedList { k, lists, skipped })
}

/// A macro-averaged metric value and the number of users it averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: f64,
    pub n_users: usize,
}

fn macro_average<F>(ranked: &RankedList, truth: &InteractionMatrix, k: usize, per_user: F) -> Result<MetricValue>
where
    F: Fn(&[u32], &HashSet<u32>) -> f64,
{
    if k < 1 || k > ranked.k() {
        return Err(Error::InvalidArgument(format!(
            "metric K = {k} must lie in [1, ranked depth {}]",
            ranked.k()
        )));
    }
    if truth.n_users() != ranked.n_users() {
        return Err(Error::ShapeMismatch {
            context: "metric evaluation",
            expected: (ranked.n_users(), 0),
            got: (truth.n_users(), 0),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..ranked.n_users() {
        let truth_items: HashSet<u32> = truth.row(i).iter().map(|&(j, _)| j).collect();
        if truth_items.is_empty() {
            continue;
        }
        let Some(list) = ranked.list(i) else {
            continue;
        };
        sum += per_user(&list[..k], &truth_items);
        count += 1;
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(
            "no user has both a ranking and a nonempty truth set".into(),
        ));
    }
    Ok(MetricValue {
        value: sum / count as f64,
        n_users: count,
    })
}

/// Mean over users of `|top-K ∩ truth| / |truth|`.
pub fn recall_at_k(
    ranked: &RankedList,
    truth: &InteractionMatrix,
    k: usize,
) -> Result<MetricValue> {
    macro_average(ranked, truth, k, |list, truth_items| {
        let hits = list.iter().filter(|j| truth_items.contains(j)).count();
        hits as f64 / truth_items.len() as f64
    })
}

/// Binary-relevance NDCG with `1/log₂(rank+1)` gains, ideal DCG truncated at
/// `min(K, |truth|)`.
pub fn ndcg_at_k(
    ranked: &RankedList,
    truth: &InteractionMatrix,
    k: usize,
) -> Result<MetricValue> {
    macro_average(ranked, truth, k, |list, truth_items| {
        let dcg: f64 = list
            .iter()
            .enumerate()
            .filter(|(_, j)| truth_items.contains(j))
            .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
            .sum();
        let ideal: f64 = (0..k.min(truth_items.len()))
            .map(|pos| 1.0 / ((pos + 2) as f64).log2())
            .sum();
        dcg / ideal
    })
}

/// Average precision truncated at K, normalized by `min(K, |truth|)`.
pub fn map_at_k(ranked: &RankedList, truth: &InteractionMatrix, k: usize) -> Result<MetricValue> {
    macro_average(ranked, truth, k, |list, truth_items| {
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (pos, j) in list.iter().enumerate() {
            if truth_items.contains(j) {
                hits += 1;
                precision_sum += hits as f64 / (pos + 1) as f64;
            }
        }
        precision_sum / k.min(truth_items.len()) as f64
    })
}

/// Fraction of injected pairs flagged as noise (`r < 0.5`).
pub fn noise_hit_ratio(relabel: &RelabelMatrix, ledger: &NoiseLedger) -> Result<f64> {
    if ledger.injected.is_empty() {
        return Err(Error::UndefinedMetric(
            "noise hit ratio needs a nonempty injection ledger".into(),
        ));
    }
    let flagged: HashSet<(u32, u32)> = relabel.flagged_pairs().into_iter().collect();
    let hits = ledger
        .injected
        .iter()
        .filter(|pair| flagged.contains(pair))
        .count();
    Ok(hits as f64 / ledger.injected.len() as f64)
}

/// Sensitivity-analysis variant: flag the `|injected|` positives with the
/// lowest relabel values (ties toward ascending `(user, item)`), then report
/// the overlap with the ledger.
pub fn noise_hit_ratio_lowest(relabel: &RelabelMatrix, ledger: &NoiseLedger) -> Result<f64> {
    if ledger.injected.is_empty() {
        return Err(Error::UndefinedMetric(
            "noise hit ratio needs a nonempty injection ledger".into(),
        ));
    }
    let mut entries: Vec<(f64, u32, u32)> =
        relabel.iter().map(|(u, i, r)| (r, u, i)).collect();
    entries.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let flagged: HashSet<(u32, u32)> = entries
        .iter()
        .take(ledger.injected.len())
        .map(|&(_, u, i)| (u, i))
        .collect();
    let hits = ledger
        .injected
        .iter()
        .filter(|pair| flagged.contains(pair))
        .count();
    Ok(hits as f64 / ledger.injected.len() as f64)
}

/// One row of the metric report.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub k: usize,
    pub value: f64,
    pub n_users: usize,
}

/// Computes Recall/NDCG/MAP at each requested K.
pub fn metric_table(
    ranked: &RankedList,
    truth: &InteractionMatrix,
    ks: &[usize],
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(3 * ks.len());
    for &k in ks {
        for (name, value) in [
            ("recall", recall_at_k(ranked, truth, k)?),
            ("ndcg", ndcg_at_k(ranked, truth, k)?),
            ("map", map_at_k(ranked, truth, k)?),
        ] {
            rows.push(MetricRow {
                metric: name.to_string(),
                k,
                value: value.value,
                n_users: value.n_users,
            });
        }
    }
    Ok(rows)
}
