//! User–item transport plans: iterative Sinkhorn scaling, the relaxed
//! one-sided closed forms and their elementwise-max combination, and an exact
//! small-instance solver (see [`emd`]).
//!
//! Cost conditioning: the optimal plans are invariant under adding per-row or
//! per-column constants to the cost, so all entropic solvers first subtract
//! each row's minimum and then each column's minimum. The reduced cost is
//! nonnegative with a zero in every row and column, which keeps the Gibbs
//! kernel `exp(-cost/γ)` inside `(0, 1]`. Sinkhorn additionally falls back to
//! log-domain updates when a scaling factor leaves `[1e-300, 1e300]`.

pub mod emd;

use std::io::Write;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::CostMatrix;

pub use emd::emd_exact_small;

/// Popularity marginals: `p` over items (length N) and `q` over users
/// (length M), each summing to 1.
#[derive(Debug, Clone)]
pub struct Marginals {
    /// Item marginal, length N.
    pub p: Array1<f64>,
    /// User marginal, length M.
    pub q: Array1<f64>,
    /// Users that had no interactions and received smoothing mass.
    pub smoothed_users: Vec<u32>,
    /// Items that had no interactions and received smoothing mass.
    pub smoothed_items: Vec<u32>,
}

impl Marginals {
    /// Validates and wraps item marginal `p` and user marginal `q`.
    pub fn new(p: Array1<f64>, q: Array1<f64>) -> Result<Self> {
        for (len, sum, side, vec) in [
            (p.len(), p.sum(), "item", &p),
            (q.len(), q.sum(), "user", &q),
        ] {
            if len == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{side} marginal is empty"
                )));
            }
            if let Some(idx) = vec.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{side} marginal entry {idx} is negative or non-finite"
                )));
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "{side} marginal sums to {sum}, expected 1 within 1e-9"
                )));
            }
        }
        Ok(Marginals {
            p,
            q,
            smoothed_users: Vec::new(),
            smoothed_items: Vec::new(),
        })
    }

    /// Uniform marginals for an M×N problem.
    pub fn uniform(n_users: usize, n_items: usize) -> Self {
        Marginals {
            p: Array1::from_elem(n_items, 1.0 / n_items as f64),
            q: Array1::from_elem(n_users, 1.0 / n_users as f64),
            smoothed_users: Vec::new(),
            smoothed_items: Vec::new(),
        }
    }
}

/// How a plan was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    Sinkhorn,
    RelaxedRow,
    RelaxedCol,
    RelaxedMax,
    Emd,
}

impl PlanKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanKind::Sinkhorn => "sinkhorn",
            PlanKind::RelaxedRow => "relaxed-row",
            PlanKind::RelaxedCol => "relaxed-col",
            PlanKind::RelaxedMax => "relaxed-max",
            PlanKind::Emd => "emd",
        }
    }
}

/// Convergence metadata reported by the Sinkhorn solver.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornStats {
    pub iterations: usize,
    pub converged: bool,
    /// L1 distance of the final plan's row sums from `q`.
    pub row_err_l1: f64,
    /// L1 distance of the final plan's column sums from `p`.
    pub col_err_l1: f64,
    /// Whether the log-domain fallback produced the plan.
    pub log_domain: bool,
}

/// Dense nonnegative transport plan with its provenance.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub pi: Array2<f64>,
    /// Entropy weight γ used to build the plan (0.0 for the exact solver).
    pub gamma: f64,
    pub kind: PlanKind,
    pub stats: Option<SinkhornStats>,
}

impl TransportPlan {
    pub fn shape(&self) -> (usize, usize) {
        let s = self.pi.shape();
        (s[0], s[1])
    }

    pub fn row_sums(&self) -> Array1<f64> {
        let (m, n) = self.shape();
        let mut out = Array1::zeros(m);
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..n {
                s += self.pi[[i, j]];
            }
            out[i] = s;
        }
        out
    }

    pub fn col_sums(&self) -> Array1<f64> {
        let (m, n) = self.shape();
        let mut out = Array1::zeros(n);
        for i in 0..m {
            for j in 0..n {
                out[j] += self.pi[[i, j]];
            }
        }
        out
    }

    /// Total transport cost `Σᵢⱼ Mᵢⱼ πᵢⱼ` against a cost matrix.
    pub fn transport_objective(&self, cost: &CostMatrix) -> Result<f64> {
        if cost.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                context: "transport_objective",
                expected: self.shape(),
                got: cost.shape(),
            });
        }
        Ok(self
            .pi
            .iter()
            .zip(cost.values.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Writes the plan as sparse `user,item,value` triplets, keeping entries
    /// with magnitude strictly above `threshold`.
    pub fn write_csv<W: Write>(&self, threshold: f64, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["user", "item", "value"])
            .map_err(csv_io_error)?;
        let (m, n) = self.shape();
        for i in 0..m {
            for j in 0..n {
                let v = self.pi[[i, j]];
                if v.abs() > threshold {
                    w.write_record([i.to_string(), j.to_string(), format!("{v}")])
                        .map_err(csv_io_error)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_io_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

/// Plan entropy `Σᵢⱼ πᵢⱼ (ln πᵢⱼ − 1)` with the `0·ln 0 = 0` convention.
pub fn entropy(plan: &TransportPlan) -> f64 {
    plan.pi
        .iter()
        .map(|&v| if v > 0.0 { v * (v.ln() - 1.0) } else { 0.0 })
        .sum()
}

/// Subtracts each row's minimum, then each column's minimum of the result.
/// The reduced cost is nonnegative and attains 0 in every row and column;
/// entropic plans are unchanged by this shift.
fn reduced_cost(cost: &Array2<f64>) -> Array2<f64> {
    let (m, n) = (cost.nrows(), cost.ncols());
    let mut red = cost.clone();
    for i in 0..m {
        let mut row_min = f64::INFINITY;
        for j in 0..n {
            row_min = row_min.min(red[[i, j]]);
        }
        for j in 0..n {
            red[[i, j]] -= row_min;
        }
    }
    let mut col_min = vec![f64::INFINITY; n];
    for i in 0..m {
        for j in 0..n {
            col_min[j] = col_min[j].min(red[[i, j]]);
        }
    }
    for i in 0..m {
        for j in 0..n {
            red[[i, j]] -= col_min[j];
        }
    }
    red
}

fn validate_entropic_inputs(
    cost: &CostMatrix,
    m: usize,
    n: usize,
    gamma: f64,
    context: &'static str,
) -> Result<()> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{context}: gamma must be finite and > 0, got {gamma}"
        )));
    }
    if cost.shape() != (m, n) {
        return Err(Error::ShapeMismatch {
            context: "transport marginals",
            expected: (m, n),
            got: cost.shape(),
        });
    }
    if cost.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            context: "transport",
            detail: "cost matrix contains non-finite entries".into(),
        });
    }
    Ok(())
}

/// Deterministic parallel matrix–vector product over the rows of `k`.
fn matvec_rows(k: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    let n = k.ncols();
    let flat = k.as_slice().expect("kernel uses standard layout");
    let mut out = vec![0.0; k.nrows()];
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        let row = &flat[i * n..(i + 1) * n];
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x.iter()) {
            s += a * b;
        }
        *o = s;
    });
    out
}

fn in_scaling_range(v: f64) -> bool {
    v.is_finite() && v > 1e-300 && v < 1e300
}

/// Entropy-regularized transport by alternating diagonal scaling of the
/// Gibbs kernel `exp(-cost/γ)`.
///
/// Row sums match `q` and column sums match `p` within `tol` (L1) on
/// convergence; hitting `max_iters` first is reported in the stats rather
/// than as an error. Scaling factors that leave `[1e-300, 1e300]` trigger a
/// log-domain restart.
pub fn sinkhorn(
    cost: &CostMatrix,
    marg: &Marginals,
    gamma: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let m = marg.q.len();
    let n = marg.p.len();
    validate_entropic_inputs(cost, m, n, gamma, "sinkhorn")?;
    if max_iters < 1 {
        return Err(Error::InvalidArgument(
            "sinkhorn: max_iters must be at least 1".into(),
        ));
    }
    if !tol.is_finite() || tol < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sinkhorn: tol must be finite and >= 0, got {tol}"
        )));
    }
    // The scaling updates divide by marginal-derived quantities; a zero
    // marginal entry makes that division degenerate.
    if let Some(i) = marg.q.iter().position(|&v| v <= 0.0) {
        return Err(Error::DegenerateMarginal {
            side: "user",
            index: i,
        });
    }
    if let Some(j) = marg.p.iter().position(|&v| v <= 0.0) {
        return Err(Error::DegenerateMarginal {
            side: "item",
            index: j,
        });
    }

    let red = reduced_cost(&cost.values);
    let kernel = red.mapv(|c| (-c / gamma).exp());
    let kernel_t = kernel.t().as_standard_layout().into_owned();

    let q = marg.q.as_slice().expect("marginal layout");
    let p = marg.p.as_slice().expect("marginal layout");

    let mut u = vec![1.0; m];
    let mut v = vec![1.0; n];
    let mut kv = matvec_rows(&kernel, &v);
    let mut iterations = 0;
    let mut converged = false;
    let mut fall_back = false;

    for iter in 1..=max_iters {
        iterations = iter;
        for i in 0..m {
            u[i] = q[i] / kv[i];
        }
        if !u.iter().all(|&x| in_scaling_range(x)) {
            fall_back = true;
            break;
        }
        let ktu = matvec_rows(&kernel_t, &u);
        for j in 0..n {
            v[j] = p[j] / ktu[j];
        }
        if !v.iter().all(|&x| in_scaling_range(x)) {
            fall_back = true;
            break;
        }
        // Column sums are exact right after the v-update; convergence is
        // decided on the row-sum error, whose matvec is reused next round.
        kv = matvec_rows(&kernel, &v);
        let row_err: f64 = (0..m).map(|i| (u[i] * kv[i] - q[i]).abs()).sum();
        if row_err <= tol {
            converged = true;
            break;
        }
    }

    let (pi, log_domain, log_converged, log_iterations) = if fall_back {
        let (pi, conv, iters) = sinkhorn_log(&red, q, p, gamma, max_iters, tol)?;
        (pi, true, conv, iters)
    } else {
        let mut pi = kernel;
        for i in 0..m {
            for j in 0..n {
                pi[[i, j]] *= u[i] * v[j];
            }
        }
        (pi, false, converged, iterations)
    };

    let plan = TransportPlan {
        pi,
        gamma,
        kind: PlanKind::Sinkhorn,
        stats: None,
    };
    let row_err_l1: f64 = plan
        .row_sums()
        .iter()
        .zip(marg.q.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let col_err_l1: f64 = plan
        .col_sums()
        .iter()
        .zip(marg.p.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(TransportPlan {
        stats: Some(SinkhornStats {
            iterations: log_iterations,
            converged: log_converged,
            row_err_l1,
            col_err_l1,
            log_domain,
        }),
        ..plan
    })
}

/// Log-domain Sinkhorn on the reduced cost: potentials `f`, `g` with
/// `π = exp((f_i + g_j − c_ij)/γ)`, updated through log-sum-exp reductions.
fn sinkhorn_log(
    red: &Array2<f64>,
    q: &[f64],
    p: &[f64],
    gamma: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(Array2<f64>, bool, usize)> {
    let (m, n) = (red.nrows(), red.ncols());
    let mut f = vec![0.0_f64; m];
    let mut g = vec![0.0_f64; n];
    let mut converged = false;
    let mut iterations = 0;

    let lse = |values: &mut dyn Iterator<Item = f64>| -> f64 {
        let vals: Vec<f64> = values.collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return max;
        }
        let s: f64 = vals.iter().map(|v| (v - max).exp()).sum();
        max + s.ln()
    };

    for iter in 1..=max_iters {
        iterations = iter;
        for i in 0..m {
            let l = lse(&mut (0..n).map(|j| (g[j] - red[[i, j]]) / gamma));
            f[i] = gamma * (q[i].ln() - l);
        }
        for j in 0..n {
            let l = lse(&mut (0..m).map(|i| (f[i] - red[[i, j]]) / gamma));
            g[j] = gamma * (p[j].ln() - l);
        }
        if f.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                context: "sinkhorn",
                detail: format!("non-finite potential in log-domain update at iteration {iter}"),
            });
        }
        // Column sums are exact after the g-update; measure the row error.
        let mut row_err = 0.0;
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..n {
                s += ((f[i] + g[j] - red[[i, j]]) / gamma).exp();
            }
            row_err += (s - q[i]).abs();
        }
        if row_err <= tol {
            converged = true;
            break;
        }
    }

    let mut pi = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            pi[[i, j]] = ((f[i] + g[j] - red[[i, j]]) / gamma).exp();
        }
    }
    Ok((pi, converged, iterations))
}

/// Row-constrained relaxed plan: row `i` is `qᵢ · softmax_j(−costᵢⱼ/γ)`, so
/// row sums equal `q` exactly (up to float rounding).
pub fn relaxed_plan_row(cost: &CostMatrix, q: &Array1<f64>, gamma: f64) -> Result<TransportPlan> {
    let (m, n) = cost.shape();
    validate_entropic_inputs(cost, m, n, gamma, "relaxed_plan_row")?;
    if q.len() != m {
        return Err(Error::ShapeMismatch {
            context: "relaxed_plan_row",
            expected: (m, 1),
            got: (q.len(), 1),
        });
    }
    let cost_flat = cost.values.as_slice().expect("cost layout");
    let q_flat = q.as_slice().expect("marginal layout");
    let mut pi = Array2::zeros((m, n));
    let pi_flat = pi.as_slice_mut().expect("plan layout");
    let results: Vec<Result<()>> = pi_flat
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, out)| {
            let row = &cost_flat[i * n..(i + 1) * n];
            let shift = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for (o, &c) in out.iter_mut().zip(row.iter()) {
                let w = (-(c - shift) / gamma).exp();
                *o = w;
                sum += w;
            }
            if !(sum.is_finite() && sum > 0.0) {
                return Err(Error::Numerical {
                    context: "relaxed_plan_row",
                    detail: format!("row {i} softmax normalizer is {sum}"),
                });
            }
            let scale = q_flat[i] / sum;
            for o in out.iter_mut() {
                *o *= scale;
            }
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(TransportPlan {
        pi,
        gamma,
        kind: PlanKind::RelaxedRow,
        stats: None,
    })
}

/// Column-constrained relaxed plan: column `j` carries `pⱼ` distributed by
/// `softmax_i(−costᵢⱼ/γ)`, so column sums equal `p` exactly.
pub fn relaxed_plan_col(cost: &CostMatrix, p: &Array1<f64>, gamma: f64) -> Result<TransportPlan> {
    let (m, n) = cost.shape();
    validate_entropic_inputs(cost, m, n, gamma, "relaxed_plan_col")?;
    if p.len() != n {
        return Err(Error::ShapeMismatch {
            context: "relaxed_plan_col",
            expected: (1, n),
            got: (1, p.len()),
        });
    }
    // Column-stabilized exponentials: subtract each column's minimum cost.
    let mut col_min = vec![f64::INFINITY; n];
    for i in 0..m {
        for j in 0..n {
            col_min[j] = col_min[j].min(cost.values[[i, j]]);
        }
    }
    let mut pi = Array2::zeros((m, n));
    let mut col_sum = vec![0.0_f64; n];
    for i in 0..m {
        for j in 0..n {
            let w = (-(cost.values[[i, j]] - col_min[j]) / gamma).exp();
            pi[[i, j]] = w;
            col_sum[j] += w;
        }
    }
    for (j, &s) in col_sum.iter().enumerate() {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Numerical {
                context: "relaxed_plan_col",
                detail: format!("column {j} softmax normalizer is {s}"),
            });
        }
    }
    let scale: Vec<f64> = (0..n).map(|j| p[j] / col_sum[j]).collect();
    let pi_flat = pi.as_slice_mut().expect("plan layout");
    pi_flat.par_chunks_mut(n).for_each(|row| {
        for (o, s) in row.iter_mut().zip(scale.iter()) {
            *o *= s;
        }
    });
    Ok(TransportPlan {
        pi,
        gamma,
        kind: PlanKind::RelaxedCol,
        stats: None,
    })
}

/// Relaxed plan combining both one-sided solutions by elementwise max.
pub fn relaxed_plan(cost: &CostMatrix, marg: &Marginals, gamma: f64) -> Result<TransportPlan> {
    let row = relaxed_plan_row(cost, &marg.q, gamma)?;
    let col = relaxed_plan_col(cost, &marg.p, gamma)?;
    let mut pi = row.pi;
    pi.zip_mut_with(&col.pi, |a, &b| {
        if b > *a {
            *a = b;
        }
    });
    Ok(TransportPlan {
        pi,
        gamma,
        kind: PlanKind::RelaxedMax,
        stats: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cost_from(values: Array2<f64>) -> CostMatrix {
        CostMatrix::external(values).unwrap()
    }

    fn random_cost(m: usize, n: usize, seed: u64) -> CostMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cost_from(Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0)))
    }

    fn random_marginals(m: usize, n: usize, seed: u64) -> Marginals {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
        let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
        let qs: f64 = q.iter().sum();
        let ps: f64 = p.iter().sum();
        q.iter_mut().for_each(|v| *v /= qs);
        p.iter_mut().for_each(|v| *v /= ps);
        Marginals::new(Array1::from(p), Array1::from(q)).unwrap()
    }

    #[test]
    fn entropy_of_uniform_two_by_two_plan() {
        let plan = TransportPlan {
            pi: Array2::from_elem((2, 2), 0.25),
            gamma: 0.1,
            kind: PlanKind::Sinkhorn,
            stats: None,
        };
        let expected = 4.0 * 0.25 * ((0.25_f64).ln() - 1.0);
        assert!((entropy(&plan) - expected).abs() < 1e-12);
        assert!((expected - (-2.3863)).abs() < 1e-4);
    }

    #[test]
    fn entropy_zero_plan_and_single_unit_entry() {
        let zero = TransportPlan {
            pi: Array2::zeros((2, 3)),
            gamma: 0.1,
            kind: PlanKind::Sinkhorn,
            stats: None,
        };
        assert_eq!(entropy(&zero), 0.0);
        let mut pi = Array2::zeros((2, 2));
        pi[[0, 1]] = 1.0;
        let single = TransportPlan {
            pi,
            gamma: 0.1,
            kind: PlanKind::Sinkhorn,
            stats: None,
        };
        assert_eq!(entropy(&single), -1.0);
    }

    #[test]
    fn sinkhorn_uniform_on_zero_cost() {
        let cost = cost_from(Array2::zeros((2, 2)));
        let marg = Marginals::uniform(2, 2);
        let plan = sinkhorn(&cost, &marg, 0.1, 500, 1e-10).unwrap();
        for &v in plan.pi.iter() {
            assert!((v - 0.25).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn sinkhorn_two_by_two_fixed_point_oracle() {
        // Symmetric ansatz for cost [[0,1],[1,0]], γ=1, uniform marginals:
        // t²(1 + e⁻¹) = 0.5 gives diagonal 0.5e/(1+e), off-diag 0.5/(1+e).
        let cost = cost_from(array![[0.0, 1.0], [1.0, 0.0]]);
        let marg = Marginals::uniform(2, 2);
        let plan = sinkhorn(&cost, &marg, 1.0, 10_000, 1e-12).unwrap();
        let e = std::f64::consts::E;
        let a = 0.5 * e / (1.0 + e);
        let b = 0.5 / (1.0 + e);
        assert!((plan.pi[[0, 0]] - a).abs() < 1e-6, "{}", plan.pi[[0, 0]]);
        assert!((plan.pi[[0, 1]] - b).abs() < 1e-6);
        assert!((plan.pi[[1, 0]] - b).abs() < 1e-6);
        assert!((plan.pi[[1, 1]] - a).abs() < 1e-6);
        assert!((a - 0.3655).abs() < 1e-4 && (b - 0.1345).abs() < 1e-4);
    }

    #[test]
    fn sinkhorn_shift_invariance() {
        let cost = random_cost(6, 9, 31);
        let marg = random_marginals(6, 9, 32);
        let plan = sinkhorn(&cost, &marg, 0.2, 2000, 1e-10).unwrap();
        let shifted = cost_from(cost.values.mapv(|v| v + 3.7));
        let plan_shifted = sinkhorn(&shifted, &marg, 0.2, 2000, 1e-10).unwrap();
        for (a, b) in plan.pi.iter().zip(plan_shifted.pi.iter()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn sinkhorn_feasibility_and_stats() {
        let cost = random_cost(10, 14, 41);
        let marg = random_marginals(10, 14, 42);
        let plan = sinkhorn(&cost, &marg, 0.1, 5000, 1e-8).unwrap();
        let stats = plan.stats.unwrap();
        assert!(stats.converged, "did not converge: {stats:?}");
        assert!(stats.row_err_l1 <= 1e-7);
        assert!(stats.col_err_l1 <= 1e-7);
    }

    #[test]
    fn sinkhorn_large_gamma_approaches_outer_product() {
        let cost = random_cost(5, 7, 51);
        let marg = random_marginals(5, 7, 52);
        let max_abs = cost
            .values
            .iter()
            .fold(0.0_f64, |acc, &v| acc.max(v.abs()));
        let plan = sinkhorn(&cost, &marg, 1e3 * max_abs, 5000, 1e-12).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                let outer = marg.q[i] * marg.p[j];
                assert!(
                    (plan.pi[[i, j]] - outer).abs() < 1e-3,
                    "{} vs {outer}",
                    plan.pi[[i, j]]
                );
            }
        }
    }

    #[test]
    fn sinkhorn_rejects_zero_marginal() {
        let cost = cost_from(Array2::zeros((2, 2)));
        let marg = Marginals::new(
            Array1::from(vec![0.5, 0.5]),
            Array1::from(vec![1.0, 0.0]),
        )
        .unwrap();
        let err = sinkhorn(&cost, &marg, 0.1, 100, 1e-6).unwrap_err();
        assert!(
            matches!(err, Error::DegenerateMarginal { side: "user", index: 1 }),
            "{err}"
        );
    }

    #[test]
    fn sinkhorn_max_iters_reported_without_error() {
        let cost = random_cost(4, 5, 61);
        let marg = random_marginals(4, 5, 62);
        let plan = sinkhorn(&cost, &marg, 0.05, 2, 0.0).unwrap();
        let stats = plan.stats.unwrap();
        assert!(!stats.converged);
        assert_eq!(stats.iterations, 2);
    }

    #[test]
    fn log_domain_matches_fast_path() {
        let cost = random_cost(6, 8, 71);
        let marg = random_marginals(6, 8, 72);
        let gamma = 0.15;
        let fast = sinkhorn(&cost, &marg, gamma, 5000, 1e-10).unwrap();
        let red = reduced_cost(&cost.values);
        let (pi_log, converged, _) = sinkhorn_log(
            &red,
            marg.q.as_slice().unwrap(),
            marg.p.as_slice().unwrap(),
            gamma,
            5000,
            1e-10,
        )
        .unwrap();
        assert!(converged);
        for (a, b) in fast.pi.iter().zip(pi_log.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn tiny_gamma_falls_back_to_log_domain_and_stays_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let cost = cost_from(Array2::from_shape_fn((5, 5), |_| rng.gen_range(0.0..1.0)));
        let marg = random_marginals(5, 5, 74);
        let plan = sinkhorn(&cost, &marg, 1e-4, 50_000, 1e-9).unwrap();
        let stats = plan.stats.unwrap();
        assert!(stats.row_err_l1 <= 1e-8, "{stats:?}");
        assert!(stats.col_err_l1 <= 1e-8, "{stats:?}");
    }

    #[test]
    fn relaxed_row_closed_form_example() {
        // Row cost [0, γ ln 2] with γ=1 and qᵢ=0.5: exponentials [1, 0.5]
        // normalize to [2/3, 1/3], scaled by 0.5 -> [1/3, 1/6].
        let cost = cost_from(array![[0.0, (2.0_f64).ln()]]);
        let q = Array1::from(vec![0.5]);
        let plan = relaxed_plan_row(&cost, &q, 1.0).unwrap();
        assert!((plan.pi[[0, 0]] - 1.0 / 3.0).abs() < 1e-12);
        assert!((plan.pi[[0, 1]] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn relaxed_row_constant_cost_is_uniform() {
        let cost = cost_from(Array2::from_elem((1, 4), 2.5));
        let q = Array1::from(vec![0.4]);
        let plan = relaxed_plan_row(&cost, &q, 0.3).unwrap();
        for &v in plan.pi.iter() {
            assert!((v - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn relaxed_row_sums_exact_and_rank_consistent() {
        let cost = random_cost(8, 6, 81);
        let marg = random_marginals(8, 6, 82);
        let plan = relaxed_plan_row(&cost, &marg.q, 0.1).unwrap();
        let sums = plan.row_sums();
        for (s, qv) in sums.iter().zip(marg.q.iter()) {
            assert!((s - qv).abs() <= 1e-12);
        }
        // Within a row, lower cost must get strictly more mass.
        for i in 0..8 {
            for j in 0..6 {
                for k in 0..6 {
                    if cost.values[[i, j]] < cost.values[[i, k]] {
                        assert!(plan.pi[[i, j]] > plan.pi[[i, k]]);
                    }
                }
            }
        }
    }

    #[test]
    fn relaxed_row_per_row_shift_invariance() {
        let cost = random_cost(4, 5, 83);
        let marg = random_marginals(4, 5, 84);
        let mut shifted = cost.values.clone();
        for j in 0..5 {
            shifted[[2, j]] += 9.0;
        }
        let a = relaxed_plan_row(&cost, &marg.q, 0.2).unwrap();
        let b = relaxed_plan_row(&cost_from(shifted), &marg.q, 0.2).unwrap();
        for j in 0..5 {
            assert!((a.pi[[2, j]] - b.pi[[2, j]]).abs() <= 1e-12);
        }
    }

    #[test]
    fn relaxed_col_constant_column_is_uniform() {
        let cost = cost_from(Array2::from_elem((2, 1), 1.0));
        let p = Array1::from(vec![0.5]);
        let plan = relaxed_plan_col(&cost, &p, 0.7).unwrap();
        assert!((plan.pi[[0, 0]] - 0.25).abs() < 1e-12);
        assert!((plan.pi[[1, 0]] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn relaxed_col_is_transposed_row_on_transposed_cost() {
        let cost = random_cost(8, 6, 91);
        let marg = random_marginals(8, 6, 92);
        let col = relaxed_plan_col(&cost, &marg.p, 0.1).unwrap();
        let cost_t = cost_from(cost.values.t().to_owned());
        let row_t = relaxed_plan_row(&cost_t, &marg.p, 0.1).unwrap();
        for i in 0..8 {
            for j in 0..6 {
                assert!((col.pi[[i, j]] - row_t.pi[[j, i]]).abs() <= 1e-12);
            }
        }
        let sums = col.col_sums();
        for (s, pv) in sums.iter().zip(marg.p.iter()) {
            assert!((s - pv).abs() <= 1e-12);
        }
    }

    #[test]
    fn relaxed_max_components_coincide_on_symmetric_instance() {
        let cost = cost_from(Array2::zeros((2, 2)));
        let marg = Marginals::uniform(2, 2);
        let plan = relaxed_plan(&cost, &marg, 0.1).unwrap();
        for &v in plan.pi.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        assert_eq!(plan.kind, PlanKind::RelaxedMax);
    }

    #[test]
    fn relaxed_max_dominates_both_components() {
        let cost = random_cost(3, 2, 93);
        let p = Array1::from(vec![0.9, 0.1]);
        let q = Array1::from(vec![1.0 / 3.0; 3]);
        let marg = Marginals::new(p, q).unwrap();
        let row = relaxed_plan_row(&cost, &marg.q, 0.1).unwrap();
        let col = relaxed_plan_col(&cost, &marg.p, 0.1).unwrap();
        let max = relaxed_plan(&cost, &marg, 0.1).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let m = max.pi[[i, j]];
                assert!(m >= row.pi[[i, j]] && m >= col.pi[[i, j]]);
                assert!(m == row.pi[[i, j]] || m == col.pi[[i, j]]);
            }
        }
    }

    #[test]
    fn plan_csv_export_filters_by_threshold() {
        let mut pi = Array2::zeros((2, 2));
        pi[[0, 0]] = 0.6;
        pi[[1, 1]] = 0.001;
        let plan = TransportPlan {
            pi,
            gamma: 0.1,
            kind: PlanKind::RelaxedMax,
            stats: None,
        };
        let mut buf = Vec::new();
        plan.write_csv(0.01, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("user,item,value"));
        assert!(text.contains("0,0,0.6"));
        assert!(!text.contains("1,1"));
    }
}
