//! Property-based invariants over random inputs, plus an LP cross-check of
//! the exact transport solver against an independent simplex implementation.

use std::collections::HashSet;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prorec::denoise::{blend, cart_split, personalized_denoise, ScoringScope};
use prorec::eval::{map_at_k, ndcg_at_k, rank_predictions, recall_at_k};
use prorec::model::{CostMatrix, FactorModel, InteractionMatrix};
use prorec::transport::{
    emd_exact_small, relaxed_plan, relaxed_plan_col, relaxed_plan_row, sinkhorn, Marginals,
};
use prorec::{popularity_marginals, split_random, synthetic_dataset};
use prorec::{SplitScheme, SyntheticConfig};

fn rng_cost(m: usize, n: usize, rng: &mut ChaCha8Rng) -> CostMatrix {
    CostMatrix::external(Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0))).unwrap()
}

fn rng_marginal(len: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let mut v = Array1::from_shape_fn(len, |_| rng.gen_range(0.1..1.0));
    let s = v.sum();
    v.mapv_inplace(|x| x / s);
    // Force the sum to 1 exactly enough for Marginals::new's 1e-9 gate.
    let s2 = v.sum();
    v[0] += 1.0 - s2;
    v
}

/// Random binary interaction matrix with at least one positive per row.
fn rng_interactions(m: usize, n: usize, density: f64, rng: &mut ChaCha8Rng) -> InteractionMatrix {
    let mut pairs = Vec::new();
    for i in 0..m {
        let mut any = false;
        for j in 0..n {
            if rng.gen_bool(density) {
                pairs.push((i as u32, j as u32));
                any = true;
            }
        }
        if !any {
            pairs.push((i as u32, rng.gen_range(0..n) as u32));
        }
    }
    InteractionMatrix::from_pairs(m, n, &pairs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The factorization objective only sees UVᵀ and the factor norms, so a
    /// shared orthogonal rotation of both factor spaces leaves it unchanged.
    #[test]
    fn objective_rotation_invariant(seed in any::<u64>(), angle in 0.0..std::f64::consts::TAU) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(2..8), rng.gen_range(2..8));
        let u = Array2::from_shape_fn((m, 2), |_| rng.gen_range(-1.0..1.0));
        let v = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let x = rng_interactions(m, n, 0.4, &mut rng);
        let rot = ndarray::arr2(&[
            [angle.cos(), -angle.sin()],
            [angle.sin(), angle.cos()],
        ]);
        let zeta = 0.05;
        let base = FactorModel::new(u.clone(), v.clone(), zeta).unwrap()
            .objective(&x).unwrap();
        let rotated = FactorModel::new(u.dot(&rot), v.dot(&rot), zeta).unwrap()
            .objective(&x).unwrap();
        prop_assert!(
            (base - rotated).abs() <= 1e-9 * base.abs().max(1.0),
            "objective changed under rotation: {base} vs {rotated}"
        );
    }

    /// The combined relaxed plan dominates both one-sided plans elementwise
    /// and every entry equals one of them.
    #[test]
    fn relaxed_max_dominates_one_sided_plans(seed in any::<u64>(), gamma in 0.05..0.6f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(2..9), rng.gen_range(2..9));
        let cost = rng_cost(m, n, &mut rng);
        let marg = Marginals::new(rng_marginal(n, &mut rng), rng_marginal(m, &mut rng)).unwrap();
        let row = relaxed_plan_row(&cost, &marg.q, gamma).unwrap();
        let col = relaxed_plan_col(&cost, &marg.p, gamma).unwrap();
        let combined = relaxed_plan(&cost, &marg, gamma).unwrap();
        for i in 0..m {
            for j in 0..n {
                let (a, b, c) = (row.pi[[i, j]], col.pi[[i, j]], combined.pi[[i, j]]);
                prop_assert!(c >= a && c >= b, "combined {c} below a side ({a}, {b})");
                prop_assert!(c == a || c == b, "combined {c} matches neither side");
            }
        }
    }

    /// One-sided plans satisfy exactly the marginal they were built from.
    #[test]
    fn relaxed_plans_meet_their_marginal(seed in any::<u64>(), gamma in 0.05..0.6f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(2..9), rng.gen_range(2..9));
        let cost = rng_cost(m, n, &mut rng);
        let q = rng_marginal(m, &mut rng);
        let p = rng_marginal(n, &mut rng);
        let row = relaxed_plan_row(&cost, &q, gamma).unwrap();
        for (i, (have, want)) in row.row_sums().iter().zip(q.iter()).enumerate() {
            prop_assert!((have - want).abs() <= 1e-12, "row {i}: {have} vs {want}");
        }
        let col = relaxed_plan_col(&cost, &p, gamma).unwrap();
        for (j, (have, want)) in col.col_sums().iter().zip(p.iter()).enumerate() {
            prop_assert!((have - want).abs() <= 1e-12, "col {j}: {have} vs {want}");
        }
    }

    /// Converged Sinkhorn plans satisfy both marginals.
    #[test]
    fn sinkhorn_feasible_on_small_instances(seed in any::<u64>(), gamma in 0.1..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(3..9), rng.gen_range(3..9));
        let cost = rng_cost(m, n, &mut rng);
        let marg = Marginals::new(rng_marginal(n, &mut rng), rng_marginal(m, &mut rng)).unwrap();
        let plan = sinkhorn(&cost, &marg, gamma, 20_000, 1e-10).unwrap();
        let row_err: f64 = plan
            .row_sums()
            .iter()
            .zip(marg.q.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let col_err: f64 = plan
            .col_sums()
            .iter()
            .zip(marg.p.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        prop_assert!(row_err < 1e-6, "row L1 error {row_err}");
        prop_assert!(col_err < 1e-6, "col L1 error {col_err}");
    }

    /// Blending never changes the support and moves each positive within
    /// `[λ·x, x]`; λ = 1 is an exact identity.
    #[test]
    fn blend_respects_bounds_and_support(seed in any::<u64>(), lambda in 0.0..=1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(2..9), rng.gen_range(4..12));
        let x = rng_interactions(m, n, 0.3, &mut rng);
        let cost = rng_cost(m, n, &mut rng);
        let marg = popularity_marginals(&x).unwrap();
        let plan = relaxed_plan(&cost, &marg, 0.2).unwrap();
        let result = personalized_denoise(&plan, &x, ScoringScope::PositivesOnly, 20.0).unwrap();
        let blended = blend(&x, &result.relabel, lambda).unwrap();

        let orig: HashSet<(u32, u32)> = x.iter().map(|(i, j, _)| (i, j)).collect();
        let new: HashSet<(u32, u32)> = blended.iter().map(|(i, j, _)| (i, j)).collect();
        prop_assert_eq!(&orig, &new, "support changed");
        for (i, j, v) in blended.iter() {
            let x0 = x.get(i as usize, j as usize);
            prop_assert!(
                v >= lambda * x0 - 1e-15 && v <= x0 + 1e-15,
                "value {v} outside [{}, {}] at ({i}, {j})",
                lambda * x0,
                x0
            );
        }
        if lambda == 1.0 {
            for (i, j, v) in blended.iter() {
                prop_assert!(v == x.get(i as usize, j as usize), "λ=1 not identity");
            }
        }
    }

    /// The prefix-sum CART split agrees with a naive O(len²) scan.
    #[test]
    fn cart_split_matches_naive_scan(
        mut rho in prop::collection::vec(0.0..1.0f64, 2..50),
        constant in any::<bool>(),
    ) {
        if constant {
            let v = rho[0];
            for r in rho.iter_mut() {
                *r = v;
            }
        }
        rho.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let fast = cart_split(&rho).unwrap();

        let naive = {
            if rho.iter().all(|&r| r == rho[0]) {
                1
            } else {
                let sse = |seg: &[f64]| -> f64 {
                    let mean = seg.iter().sum::<f64>() / seg.len() as f64;
                    seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                };
                let mut best = (f64::INFINITY, 1);
                for kappa in 1..rho.len() {
                    let total = sse(&rho[..kappa]) + sse(&rho[kappa..]);
                    if total < best.0 {
                        best = (total, kappa);
                    }
                }
                best.1
            }
        };
        prop_assert_eq!(fast, naive);
    }

    /// Ranking metrics stay in [0, 1] and Recall@K is non-decreasing in K.
    #[test]
    fn metric_ranges_and_recall_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(4..10), rng.gen_range(12..20));
        let scores = Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0));
        let truth = rng_interactions(m, n, 0.25, &mut rng);
        let exclude = InteractionMatrix::from_pairs(m, n, &[]).unwrap();
        let k_max = 8;
        let ranked = rank_predictions(&scores, &exclude, k_max).unwrap();
        let mut prev_recall = 0.0;
        for k in 1..=k_max {
            let r = recall_at_k(&ranked, &truth, k).unwrap().value;
            let g = ndcg_at_k(&ranked, &truth, k).unwrap().value;
            let a = map_at_k(&ranked, &truth, k).unwrap().value;
            for (name, v) in [("recall", r), ("ndcg", g), ("map", a)] {
                prop_assert!((0.0..=1.0).contains(&v), "{name}@{k} = {v} outside [0,1]");
            }
            prop_assert!(r >= prev_recall - 1e-15, "recall fell from {prev_recall} to {r} at k={k}");
            prev_recall = r;
        }
    }

    /// Split folds partition the interaction set exactly.
    #[test]
    fn split_folds_partition_interactions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = SyntheticConfig {
            n_users: rng.gen_range(10..40),
            n_items: rng.gen_range(12..40),
            n_clusters: 2,
            min_degree: 3,
            max_degree: 6,
            in_cluster_prob: 0.8,
            seed,
        };
        let ds = synthetic_dataset(&gen).unwrap();
        let all: HashSet<(u32, u32)> = ds.interactions.iter().map(|(i, j, _)| (i, j)).collect();
        for scheme in [SplitScheme::FourToOne, SplitScheme::FiveTwoThree] {
            let split = split_random(&ds, scheme, seed ^ 0x5eed).unwrap();
            let mut folds: Vec<HashSet<(u32, u32)>> = vec![
                split.train.iter().map(|(i, j, _)| (i, j)).collect(),
            ];
            if let Some(val) = &split.val {
                folds.push(val.iter().map(|(i, j, _)| (i, j)).collect());
            }
            folds.push(split.test.iter().map(|(i, j, _)| (i, j)).collect());
            let total: usize = folds.iter().map(HashSet::len).sum();
            prop_assert_eq!(total, all.len(), "fold sizes do not add up");
            let mut union = HashSet::new();
            for fold in &folds {
                for pair in fold {
                    prop_assert!(union.insert(*pair), "pair {pair:?} in two folds");
                }
            }
            prop_assert_eq!(&union, &all, "folds do not cover the dataset");
        }
    }

    /// Popularity marginals are nonnegative and sum to 1 on each side.
    #[test]
    fn popularity_marginals_are_distributions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(2..20), rng.gen_range(2..20));
        let x = rng_interactions(m, n, 0.2, &mut rng);
        let marg = popularity_marginals(&x).unwrap();
        prop_assert!((marg.p.sum() - 1.0).abs() < 1e-9, "p sums to {}", marg.p.sum());
        prop_assert!((marg.q.sum() - 1.0).abs() < 1e-9, "q sums to {}", marg.q.sum());
        prop_assert!(marg.p.iter().all(|&v| v >= 0.0) && marg.q.iter().all(|&v| v >= 0.0));
    }
}

/// The min-cost-flow solver matches an independent LP simplex solver on the
/// exact feasible set it discretized (its own realized row/column sums).
#[test]
fn emd_matches_lp_oracle() {
    for trial in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + trial);
        let (m, n) = (6, 7);
        let cost = CostMatrix::external(Array2::from_shape_fn((m, n), |_| {
            rng.gen_range(0.0..2.0)
        }))
        .unwrap();
        let marg = Marginals::new(rng_marginal(n, &mut rng), rng_marginal(m, &mut rng)).unwrap();
        let plan = emd_exact_small(&cost, &marg).unwrap();
        let emd_obj = plan.transport_objective(&cost).unwrap();

        // LP over the same discretized marginals the flow solver realized.
        let row_sums = plan.row_sums();
        let col_sums = plan.col_sums();
        let mut problem = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<Vec<_>> = (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| problem.add_var(cost.values[[i, j]], (0.0, f64::INFINITY)))
                    .collect()
            })
            .collect();
        for i in 0..m {
            let terms: Vec<_> = (0..n).map(|j| (vars[i][j], 1.0)).collect();
            problem.add_constraint(&terms, ComparisonOp::Eq, row_sums[i]);
        }
        for j in 0..n {
            let terms: Vec<_> = (0..m).map(|i| (vars[i][j], 1.0)).collect();
            problem.add_constraint(&terms, ComparisonOp::Eq, col_sums[j]);
        }
        let solution = problem.solve().expect("LP solve failed");
        let lp_obj = solution.objective();
        assert!(
            (emd_obj - lp_obj).abs() <= 1e-9 + 1e-6 * lp_obj.abs(),
            "trial {trial}: flow objective {emd_obj} vs LP {lp_obj}"
        );
    }
}
