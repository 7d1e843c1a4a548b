//! Turning a transport plan into per-user thresholds, a relabel matrix, and
//! the blended interaction update, plus the global-threshold ablation mode.
//!
//! Per user: normalize the plan row over the scored item set, sort the scores
//! descending, pick the split index κ minimizing the two-segment sum of
//! squared errors (a CART-style regression split), take the κ-th score as the
//! personalized threshold θ, and relabel each original positive with the
//! sigmoid `r = 1 / (1 + exp(-β(ρ - θ)))`. The blend then updates
//! `X ← λX + (1-λ) R ⊙ X` on the original support.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::InteractionMatrix;
use crate::transport::{csv_io_error, TransportPlan};

/// Which items take part in a user's normalization/ranking/split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringScope {
    /// Score only the user's positive items (default: the relabel touches
    /// only positives, and scoring all items would make the split trivially
    /// separate positives from the unobserved mass).
    PositivesOnly,
    /// Score every item.
    AllItems,
}

impl ScoringScope {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoringScope::PositivesOnly => "positives-only",
            ScoringScope::AllItems => "all-items",
        }
    }
}

/// Soft relabel values on the original positive pairs, `r ∈ [0, 1]`.
#[derive(Debug, Clone)]
pub struct RelabelMatrix {
    /// Per user: `(item, r)` sorted by item index; exactly the positives.
    rows: Vec<Vec<(u32, f64)>>,
}

impl RelabelMatrix {
    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, user: usize) -> &[(u32, f64)] {
        &self.rows[user]
    }

    /// Relabel value for a pair, if it was an original positive.
    pub fn get(&self, user: usize, item: usize) -> Option<f64> {
        self.rows[user]
            .binary_search_by_key(&(item as u32), |&(j, _)| j)
            .ok()
            .map(|pos| self.rows[user][pos].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, r)| (i as u32, j, r)))
    }

    /// Total relabel entries (= original positives covered).
    pub fn len(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pairs flagged as suspected noise (`r < 0.5`), row-major order.
    pub fn flagged_pairs(&self) -> Vec<(u32, u32)> {
        self.iter()
            .filter(|&(_, _, r)| r < 0.5)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    pub fn flagged_count(&self) -> usize {
        self.iter().filter(|&(_, _, r)| r < 0.5).count()
    }
}

/// Per-user scoring outcome.
#[derive(Debug, Clone)]
pub struct UserDenoise {
    /// Scored item set, ascending item index.
    pub items: Vec<u32>,
    /// Normalized scores aligned with `items` (sum 1 unless the user was
    /// skipped as degenerate).
    pub scores: Vec<f64>,
    /// Split index κ (1-based count of kept items), when a split was made.
    pub split_index: Option<usize>,
    /// The κ-th largest normalized score.
    pub threshold: Option<f64>,
}

/// Full denoising outcome: per-user scores/thresholds plus the relabel
/// matrix over the original positives.
#[derive(Debug, Clone)]
pub struct DenoiseResult {
    pub users: Vec<UserDenoise>,
    pub relabel: RelabelMatrix,
    /// Users whose scoped plan row summed to zero (left unrelabeled).
    pub skipped_users: Vec<u32>,
}

impl DenoiseResult {
    /// Pass-through result: every positive keeps `r = 1`, no thresholds.
    pub fn identity(x: &InteractionMatrix) -> Self {
        let mut users = Vec::with_capacity(x.n_users());
        let mut rows = Vec::with_capacity(x.n_users());
        for i in 0..x.n_users() {
            let items: Vec<u32> = x.row(i).iter().map(|&(j, _)| j).collect();
            rows.push(items.iter().map(|&j| (j, 1.0)).collect());
            users.push(UserDenoise {
                items,
                scores: Vec::new(),
                split_index: None,
                threshold: None,
            });
        }
        DenoiseResult {
            users,
            relabel: RelabelMatrix { rows },
            skipped_users: Vec::new(),
        }
    }
}

/// Sorts scores descending (stable: ties keep ascending input index) and
/// returns `(sorted scores, permutation)` where `perm[k]` is the input
/// position of the rank-`k` score.
pub fn rank_user(scores: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..scores.len()).collect();
    perm.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let sorted = perm.iter().map(|&i| scores[i]).collect();
    (sorted, perm)
}

/// Split index κ ∈ {1, …, len−1} minimizing the two-segment sum of squared
/// errors over a descending-sorted score vector; ties break toward the
/// smallest κ.
///
/// Runs in one pass over prefix sums of ρ and ρ²; the exhaustive two-segment
/// SSE definition is what the test oracle recomputes naively.
pub fn cart_split(rho: &[f64]) -> Result<usize> {
    let len = rho.len();
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "cart_split needs at least 2 scores, got {len}"
        )));
    }
    if rho.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(
            "cart_split input must be sorted descending".into(),
        ));
    }
    // A constant vector ties every split at equal SSE; resolve to κ = 1
    // directly so float noise in the prefix arithmetic cannot flip the pick.
    if rho.iter().all(|&v| v == rho[0]) {
        return Ok(1);
    }
    let mut s1 = vec![0.0; len + 1];
    let mut s2 = vec![0.0; len + 1];
    for (k, &v) in rho.iter().enumerate() {
        s1[k + 1] = s1[k] + v;
        s2[k + 1] = s2[k] + v * v;
    }
    let mut best_eta = 1;
    let mut best_sse = f64::INFINITY;
    for eta in 1..len {
        let nl = eta as f64;
        let nr = (len - eta) as f64;
        let left = (s2[eta] - s1[eta] * s1[eta] / nl).max(0.0);
        let right_sum = s1[len] - s1[eta];
        let right = (s2[len] - s2[eta] - right_sum * right_sum / nr).max(0.0);
        let sse = left + right;
        if sse < best_sse {
            best_sse = sse;
            best_eta = eta;
        }
    }
    Ok(best_eta)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Personalized denoising: normalize → rank → CART split → sigmoid relabel.
///
/// Relabel values exist only for original positives. Users with fewer than
/// two positives are never relabeled (`r = 1`); users whose scoped plan row
/// sums to zero are skipped with a warning and also keep `r = 1`.
pub fn personalized_denoise(
    plan: &TransportPlan,
    x: &InteractionMatrix,
    scope: ScoringScope,
    beta: f64,
) -> Result<DenoiseResult> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and > 0, got {beta}"
        )));
    }
    if plan.shape() != (x.n_users(), x.n_items()) {
        return Err(Error::ShapeMismatch {
            context: "personalized_denoise",
            expected: (x.n_users(), x.n_items()),
            got: plan.shape(),
        });
    }

    let per_user: Vec<Result<(UserDenoise, Vec<(u32, f64)>, bool)>> = (0..x.n_users())
        .into_par_iter()
        .map(|i| {
            let positives = x.row(i);
            let items: Vec<u32> = match scope {
                ScoringScope::PositivesOnly => positives.iter().map(|&(j, _)| j).collect(),
                ScoringScope::AllItems => (0..x.n_items() as u32).collect(),
            };
            let raw: Vec<f64> = items
                .iter()
                .map(|&j| plan.pi[[i, j as usize]])
                .collect();
            if items.is_empty() {
                return Ok((
                    UserDenoise {
                        items,
                        scores: raw,
                        split_index: None,
                        threshold: None,
                    },
                    Vec::new(),
                    false,
                ));
            }
            let sum: f64 = raw.iter().sum();
            if !(sum.is_finite() && sum > 0.0) {
                // Degenerate scoped row: leave the user untouched.
                let relabel = positives.iter().map(|&(j, _)| (j, 1.0)).collect();
                return Ok((
                    UserDenoise {
                        items,
                        scores: raw,
                        split_index: None,
                        threshold: None,
                    },
                    relabel,
                    true,
                ));
            }
            let scores: Vec<f64> = raw.iter().map(|&v| v / sum).collect();
            let (split_index, threshold) = if scores.len() >= 2 {
                let (rho, _) = rank_user(&scores);
                let kappa = cart_split(&rho)?;
                (Some(kappa), Some(rho[kappa - 1]))
            } else {
                (None, None)
            };
            // Single-positive users are never relabeled: dropping a user's
            // only interaction is catastrophic and the split needs 2 points.
            let relabel: Vec<(u32, f64)> = if positives.len() < 2 || threshold.is_none() {
                positives.iter().map(|&(j, _)| (j, 1.0)).collect()
            } else {
                let theta = threshold.unwrap();
                positives
                    .iter()
                    .map(|&(j, _)| {
                        let rho_ij = match scope {
                            ScoringScope::PositivesOnly => {
                                let pos = items
                                    .binary_search(&j)
                                    .expect("positive belongs to scored set");
                                scores[pos]
                            }
                            ScoringScope::AllItems => scores[j as usize],
                        };
                        (j, sigmoid(beta * (rho_ij - theta)))
                    })
                    .collect()
            };
            Ok((
                UserDenoise {
                    items,
                    scores,
                    split_index,
                    threshold,
                },
                relabel,
                false,
            ))
        })
        .collect();

    let mut users = Vec::with_capacity(x.n_users());
    let mut rows = Vec::with_capacity(x.n_users());
    let mut skipped_users = Vec::new();
    for (i, entry) in per_user.into_iter().enumerate() {
        let (user, relabel, skipped) = entry?;
        if skipped {
            skipped_users.push(i as u32);
        }
        users.push(user);
        rows.push(relabel);
    }
    if !skipped_users.is_empty() {
        log::warn!(
            "{} user(s) had zero scoped plan mass and were skipped",
            skipped_users.len()
        );
    }
    Ok(DenoiseResult {
        users,
        relabel: RelabelMatrix { rows },
        skipped_users,
    })
}

/// Global-threshold ablation: per user, keep the σ highest-scored positives
/// (`r = 1`) and zero out the rest (`r = 0`); ties break toward the smaller
/// item index. σ at or above the positive count keeps everything.
pub fn global_threshold_denoise(
    plan: &TransportPlan,
    x: &InteractionMatrix,
    sigma: usize,
) -> Result<DenoiseResult> {
    if sigma < 1 {
        return Err(Error::InvalidArgument(
            "global threshold sigma must be at least 1".into(),
        ));
    }
    if plan.shape() != (x.n_users(), x.n_items()) {
        return Err(Error::ShapeMismatch {
            context: "global_threshold_denoise",
            expected: (x.n_users(), x.n_items()),
            got: plan.shape(),
        });
    }
    let mut users = Vec::with_capacity(x.n_users());
    let mut rows = Vec::with_capacity(x.n_users());
    let mut skipped_users = Vec::new();
    for i in 0..x.n_users() {
        let items: Vec<u32> = x.row(i).iter().map(|&(j, _)| j).collect();
        let raw: Vec<f64> = items.iter().map(|&j| plan.pi[[i, j as usize]]).collect();
        let sum: f64 = raw.iter().sum();
        let scores = if sum > 0.0 {
            raw.iter().map(|&v| v / sum).collect()
        } else {
            if !items.is_empty() {
                skipped_users.push(i as u32);
            }
            raw.clone()
        };
        let (_, perm) = rank_user(&scores);
        let mut relabel: Vec<(u32, f64)> = items.iter().map(|&j| (j, 0.0)).collect();
        for &k in perm.iter().take(sigma) {
            relabel[k].1 = 1.0;
        }
        users.push(UserDenoise {
            items,
            scores,
            split_index: None,
            threshold: None,
        });
        rows.push(relabel);
    }
    Ok(DenoiseResult {
        users,
        relabel: RelabelMatrix { rows },
        skipped_users,
    })
}

/// Blend update `X ← λX + (1−λ) R ⊙ X` on the original support.
///
/// Zeros stay zero and each positive moves inside `[λ·x, x]`; with `λ = 1`
/// the output equals the input exactly. Pairs without a relabel entry are
/// left unchanged.
pub fn blend(
    x: &InteractionMatrix,
    relabel: &RelabelMatrix,
    lambda: f64,
) -> Result<InteractionMatrix> {
    if !lambda.is_finite() || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    if relabel.n_users() != x.n_users() {
        return Err(Error::ShapeMismatch {
            context: "blend",
            expected: (x.n_users(), 0),
            got: (relabel.n_users(), 0),
        });
    }
    x.map_values(|i, j, v| match relabel.get(i as usize, j as usize) {
        Some(r) => lambda * v + (1.0 - lambda) * r * v,
        None => v,
    })
}

/// Writes `(user, item, score, threshold, r)` rows for every original
/// positive; `score` is the user's normalized plan score for that item, and
/// `threshold`/`score` are blank when the user had none.
pub fn write_denoise_csv<W: Write>(result: &DenoiseResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user", "item", "score", "threshold", "r"])
        .map_err(csv_io_error)?;
    for (i, user) in result.users.iter().enumerate() {
        for &(j, r) in result.relabel.row(i) {
            let score = user
                .items
                .binary_search(&j)
                .ok()
                .and_then(|pos| user.scores.get(pos))
                .map(|s| format!("{s}"))
                .unwrap_or_default();
            let threshold = user.threshold.map(|t| format!("{t}")).unwrap_or_default();
            w.write_record([
                i.to_string(),
                j.to_string(),
                score,
                threshold,
                format!("{r}"),
            ])
            .map_err(csv_io_error)?;
        }
    }
    w.flush()?;
    Ok(())
}
