//! Exact small-instance transport solver.
//!
//! The problem is cast as a min-cost flow on the bipartite source → users →
//! items → sink graph. Marginals are scaled to integer units (scale 1e6,
//! largest-remainder rounding) so capacities are exact integers; successive
//! shortest augmenting paths (SPFA, which tolerates the negative arc costs a
//! learned cost matrix produces) then yield an exact vertex of the scaled
//! transport polytope.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::CostMatrix;
use crate::transport::{Marginals, PlanKind, TransportPlan};

/// Largest instance (in cells) the exact solver accepts.
pub const EMD_CELL_LIMIT: usize = 10_000;

const SCALE: f64 = 1e6;

/// Rounds a nonnegative vector to integers summing exactly to `target`:
/// floors first, then distributes the remainder by descending fractional
/// part (ties toward the smaller index).
fn integer_units(values: &Array1<f64>, target: i64) -> Vec<i64> {
    let scale_sum: f64 = values.sum();
    let mut units: Vec<i64> = Vec::with_capacity(values.len());
    let mut fractions: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    let mut total = 0i64;
    for (idx, &v) in values.iter().enumerate() {
        let raw = v / scale_sum * target as f64;
        let floor = raw.floor().max(0.0) as i64;
        units.push(floor);
        total += floor;
        fractions.push((raw - floor as f64, idx));
    }
    let mut remaining = target - total;
    fractions.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut cursor = 0;
    while remaining > 0 {
        units[fractions[cursor % fractions.len()].1] += 1;
        remaining -= 1;
        cursor += 1;
    }
    units
}

#[derive(Debug, Clone)]
struct FlowEdge {
    to: usize,
    rev: usize,
    cap: i64,
    cost: f64,
}

struct FlowGraph {
    adj: Vec<Vec<FlowEdge>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            adj: vec![Vec::new(); n],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        let rev_from = self.adj[to].len();
        let rev_to = self.adj[from].len();
        self.adj[from].push(FlowEdge {
            to,
            rev: rev_from,
            cap,
            cost,
        });
        self.adj[to].push(FlowEdge {
            to: from,
            rev: rev_to,
            cap: 0,
            cost: -cost,
        });
    }

    /// One SPFA pass; returns per-node (distance, incoming edge) or None when
    /// the sink is unreachable.
    fn shortest_path(
        &self,
        source: usize,
        sink: usize,
    ) -> Option<Vec<(f64, Option<(usize, usize)>)>> {
        let n = self.adj.len();
        let mut state: Vec<(f64, Option<(usize, usize)>)> = vec![(f64::INFINITY, None); n];
        state[source].0 = 0.0;
        let mut in_queue = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(source);
        in_queue[source] = true;
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            let du = state[u].0;
            for (ei, e) in self.adj[u].iter().enumerate() {
                if e.cap <= 0 {
                    continue;
                }
                let cand = du + e.cost;
                // The strict margin keeps float round-off from feeding an
                // endless relaxation loop on near-zero-cost cycles.
                if cand < state[e.to].0 - 1e-12 {
                    state[e.to] = (cand, Some((u, ei)));
                    if !in_queue[e.to] {
                        queue.push_back(e.to);
                        in_queue[e.to] = true;
                    }
                }
            }
        }
        if state[sink].0.is_finite() {
            Some(state)
        } else {
            None
        }
    }
}

/// Exact minimizer of `Σ costᵢⱼ πᵢⱼ` under both marginal constraints.
///
/// Guardrails: at most [`EMD_CELL_LIMIT`] cells, and the two marginals must
/// carry the same total mass.
pub fn emd_exact_small(cost: &CostMatrix, marg: &Marginals) -> Result<TransportPlan> {
    let m = marg.q.len();
    let n = marg.p.len();
    if m * n > EMD_CELL_LIMIT {
        return Err(Error::UnsupportedSize {
            m,
            n,
            limit: EMD_CELL_LIMIT,
        });
    }
    if cost.shape() != (m, n) {
        return Err(Error::ShapeMismatch {
            context: "emd_exact_small",
            expected: (m, n),
            got: cost.shape(),
        });
    }
    let sum_q: f64 = marg.q.sum();
    let sum_p: f64 = marg.p.sum();
    if (sum_q - sum_p).abs() > 1e-9 {
        return Err(Error::Infeasible(format!(
            "marginal totals differ: users {sum_q} vs items {sum_p}"
        )));
    }

    let target = (sum_q * SCALE).round() as i64;
    let supply = integer_units(&marg.q, target);
    let demand = integer_units(&marg.p, target);

    // Node layout: source, users, items, sink.
    let source = 0;
    let sink = m + n + 1;
    let mut graph = FlowGraph::new(m + n + 2);
    for (i, &a) in supply.iter().enumerate() {
        if a > 0 {
            graph.add_edge(source, 1 + i, a, 0.0);
        }
    }
    for i in 0..m {
        if supply[i] == 0 {
            continue;
        }
        for j in 0..n {
            if demand[j] == 0 {
                continue;
            }
            graph.add_edge(1 + i, 1 + m + j, supply[i], cost.values[[i, j]]);
        }
    }
    for (j, &b) in demand.iter().enumerate() {
        if b > 0 {
            graph.add_edge(1 + m + j, sink, b, 0.0);
        }
    }

    let mut pushed = 0i64;
    while pushed < target {
        let state = graph.shortest_path(source, sink).ok_or_else(|| {
            Error::Infeasible("supply cannot be routed to demand".into())
        })?;
        // Bottleneck along the augmenting path.
        let mut bottleneck = target - pushed;
        let mut node = sink;
        while let Some((prev, ei)) = state[node].1 {
            bottleneck = bottleneck.min(graph.adj[prev][ei].cap);
            node = prev;
        }
        // Apply the augmentation.
        let mut node = sink;
        while let Some((prev, ei)) = state[node].1 {
            let rev = graph.adj[prev][ei].rev;
            graph.adj[prev][ei].cap -= bottleneck;
            graph.adj[node][rev].cap += bottleneck;
            node = prev;
        }
        pushed += bottleneck;
    }

    // Flow on user -> item arcs is the reverse capacity accumulated on the
    // paired back edge.
    let mut pi = Array2::zeros((m, n));
    for i in 0..m {
        for e in &graph.adj[1 + i] {
            if e.to >= 1 + m && e.to < 1 + m + n {
                let j = e.to - 1 - m;
                let rev = &graph.adj[e.to][e.rev];
                pi[[i, j]] = rev.cap as f64 / SCALE;
            }
        }
    }
    Ok(TransportPlan {
        pi,
        gamma: 0.0,
        kind: PlanKind::Emd,
        stats: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_marg(m: usize, n: usize) -> Marginals {
        Marginals::uniform(m, n)
    }

    #[test]
    fn zero_cost_diagonal_is_optimal() {
        let cost = CostMatrix::external(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let marg = uniform_marg(2, 2);
        let plan = emd_exact_small(&cost, &marg).unwrap();
        assert!((plan.pi[[0, 0]] - 0.5).abs() < 1e-9);
        assert!((plan.pi[[1, 1]] - 0.5).abs() < 1e-9);
        assert!(plan.pi[[0, 1]].abs() < 1e-9);
        assert!((plan.transport_objective(&cost).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn zero_cost_anti_diagonal_is_optimal() {
        let cost = CostMatrix::external(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let marg = uniform_marg(2, 2);
        let plan = emd_exact_small(&cost, &marg).unwrap();
        assert!((plan.pi[[0, 1]] - 0.5).abs() < 1e-9);
        assert!((plan.pi[[1, 0]] - 0.5).abs() < 1e-9);
        assert!(plan.transport_objective(&cost).unwrap().abs() < 1e-9);
    }

    #[test]
    fn marginals_are_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cost =
            CostMatrix::external(Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0)))
                .unwrap();
        let mut q: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..1.0)).collect();
        let mut p: Vec<f64> = (0..6).map(|_| rng.gen_range(0.5..1.0)).collect();
        let qs: f64 = q.iter().sum();
        let ps: f64 = p.iter().sum();
        q.iter_mut().for_each(|v| *v /= qs);
        p.iter_mut().for_each(|v| *v /= ps);
        let marg = Marginals::new(Array1::from(p.clone()), Array1::from(q.clone())).unwrap();
        let plan = emd_exact_small(&cost, &marg).unwrap();
        for (s, qv) in plan.row_sums().iter().zip(q.iter()) {
            assert!((s - qv).abs() < 2e-6, "{s} vs {qv}");
        }
        for (s, pv) in plan.col_sums().iter().zip(p.iter()) {
            assert!((s - pv).abs() < 2e-6, "{s} vs {pv}");
        }
    }

    #[test]
    fn beats_or_matches_any_feasible_plan() {
        // The optimum must be <= the independent-coupling (outer product)
        // plan's objective on random instances.
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let cost = CostMatrix::external(Array2::from_shape_fn((5, 5), |_| {
                rng.gen_range(-1.0..1.0)
            }))
            .unwrap();
            let marg = uniform_marg(5, 5);
            let plan = emd_exact_small(&cost, &marg).unwrap();
            let opt = plan.transport_objective(&cost).unwrap();
            let mut outer = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    outer += marg.q[i] * marg.p[j] * cost.values[[i, j]];
                }
            }
            assert!(opt <= outer + 1e-9, "seed {seed}: {opt} vs {outer}");
        }
    }

    #[test]
    fn size_guard_rejects_large_instances() {
        let cost = CostMatrix::external(Array2::zeros((101, 101))).unwrap();
        let marg = uniform_marg(101, 101);
        let err = emd_exact_small(&cost, &marg).unwrap_err();
        assert!(matches!(err, Error::UnsupportedSize { .. }), "{err}");
    }

    #[test]
    fn mismatched_totals_are_infeasible() {
        let cost = CostMatrix::external(Array2::zeros((2, 2))).unwrap();
        let mut marg = uniform_marg(2, 2);
        marg.q[0] += 1e-6; // break the total-mass balance beyond tolerance
        let err = emd_exact_small(&cost, &marg).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn one_by_one_instance() {
        let cost = CostMatrix::external(array![[3.5]]).unwrap();
        let marg = uniform_marg(1, 1);
        let plan = emd_exact_small(&cost, &marg).unwrap();
        assert!((plan.pi[[0, 0]] - 1.0).abs() < 1e-9);
        assert!((plan.transport_objective(&cost).unwrap() - 3.5).abs() < 1e-9);
    }

    #[test]
    fn integer_units_hit_target_exactly() {
        let v = Array1::from(vec![1.0, 1.0, 1.0]);
        let units = integer_units(&v, 1_000_000);
        assert_eq!(units.iter().sum::<i64>(), 1_000_000);
        assert_eq!(units, vec![333_334, 333_333, 333_333]);
    }
}
