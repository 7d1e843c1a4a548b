//! End-to-end orchestration: alternate ALS embedding updates with
//! transport-plan computation, per-user thresholding, relabeling, and the
//! λ-blend update of the interaction matrix, tracking the factorization
//! objective across outer iterations.
//!
//! Popularity marginals are computed once from the original binary matrix
//! and held fixed: recomputing them from blended real values would change
//! the transport problem every iteration and void the monotone-decrease
//! argument. The blended (real-valued) matrix feeds ALS directly; it is
//! never re-binarized.

use std::time::Instant;

use serde::Serialize;

use crate::data::popularity_marginals;
use crate::denoise::{
    blend, global_threshold_denoise, personalized_denoise, DenoiseResult, ScoringScope,
};
use crate::error::{Error, Result};
use crate::factorization::{als_epoch, init_model};
use crate::model::{CostMatrix, FactorModel, InteractionMatrix};
use crate::transport::{emd_exact_small, relaxed_plan, sinkhorn, Marginals, TransportPlan};

/// Which transport solver the pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    /// Full two-marginal entropic plan via iterative scaling.
    Sinkhorn,
    /// Elementwise max of the two one-sided closed-form plans (default).
    RelaxedMax,
    /// Exact solver; only for small instances.
    EmdSmall,
}

impl TransportKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransportKind::Sinkhorn => "sinkhorn",
            TransportKind::RelaxedMax => "relaxed-max",
            TransportKind::EmdSmall => "emd-small",
        }
    }
}

/// How per-user thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    /// CART-style per-user split with sigmoid relabels (default).
    Personalized,
    /// Keep the top σ positives per user, drop the rest.
    Global(usize),
    /// No relabeling; the pipeline reduces to plain ALS.
    None,
}

impl ThresholdKind {
    pub fn as_str(&self) -> String {
        match self {
            ThresholdKind::Personalized => "personalized".to_string(),
            ThresholdKind::Global(sigma) => format!("global({sigma})"),
            ThresholdKind::None => "none".to_string(),
        }
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone)]
pub struct ProRecConfig {
    /// Entropy weight γ > 0.
    pub gamma: f64,
    /// Blend weight λ ∈ [0, 1]; 1 keeps X unchanged.
    pub lambda: f64,
    /// Sigmoid sharpness β > 0.
    pub beta: f64,
    /// Ridge weight ζ ≥ 0.
    pub zeta: f64,
    /// Embedding dimension.
    pub d: usize,
    /// Maximum outer iterations.
    pub outer_max: usize,
    /// ALS epochs per outer iteration.
    pub als_epochs_per_outer: usize,
    /// Relative objective-change tolerance for early stopping (0 disables).
    pub rel_tol: f64,
    pub transport: TransportKind,
    pub threshold: ThresholdKind,
    pub scope: ScoringScope,
    pub seed: u64,
    /// Standard deviation of the Gaussian factor initialization.
    pub init_scale: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
}

impl Default for ProRecConfig {
    fn default() -> Self {
        ProRecConfig {
            gamma: 0.1,
            lambda: 0.5,
            beta: 20.0,
            zeta: 0.001,
            d: 64,
            outer_max: 10,
            als_epochs_per_outer: 10,
            rel_tol: 1e-4,
            transport: TransportKind::RelaxedMax,
            threshold: ThresholdKind::Personalized,
            scope: ScoringScope::PositivesOnly,
            seed: 0,
            init_scale: 0.1,
            sinkhorn_max_iters: 500,
            sinkhorn_tol: 1e-6,
        }
    }
}

impl ProRecConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gamma must be finite and > 0, got {}",
                self.gamma
            )));
        }
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "beta must be finite and > 0, got {}",
                self.beta
            )));
        }
        if !self.zeta.is_finite() || self.zeta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "zeta must be finite and ≥ 0, got {}",
                self.zeta
            )));
        }
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be ≥ 1".into()));
        }
        if self.outer_max == 0 {
            return Err(Error::InvalidArgument("outer_max must be ≥ 1".into()));
        }
        if self.als_epochs_per_outer == 0 {
            return Err(Error::InvalidArgument(
                "als_epochs_per_outer must be ≥ 1".into(),
            ));
        }
        if !self.rel_tol.is_finite() || self.rel_tol < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rel_tol must be finite and ≥ 0, got {}",
                self.rel_tol
            )));
        }
        if !self.init_scale.is_finite() || self.init_scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "init_scale must be finite and > 0, got {}",
                self.init_scale
            )));
        }
        if self.sinkhorn_max_iters == 0 {
            return Err(Error::InvalidArgument(
                "sinkhorn_max_iters must be ≥ 1".into(),
            ));
        }
        if !self.sinkhorn_tol.is_finite() || self.sinkhorn_tol < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sinkhorn_tol must be finite and ≥ 0, got {}",
                self.sinkhorn_tol
            )));
        }
        if let ThresholdKind::Global(sigma) = self.threshold {
            if sigma < 1 {
                return Err(Error::InvalidArgument(
                    "global threshold sigma must be ≥ 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One outer iteration of the trace.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    /// 1-based outer iteration number.
    pub iteration: usize,
    /// Factorization objective L(X, U, V) after this iteration's ALS epochs.
    pub objective: f64,
    /// Σ Mᵢⱼ πᵢⱼ of this iteration's plan.
    pub transport_objective: f64,
    /// Positives flagged (r < 0.5) by this iteration's relabel.
    pub relabeled_pairs: usize,
    pub secs_als: f64,
    pub secs_transport: f64,
    pub secs_denoise: f64,
    pub secs_blend: f64,
}

/// Objective trace across outer iterations plus the monotonicity verdict.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineTrace {
    /// Objective of the randomly initialized model, before any ALS epoch.
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    /// Whether the relative-change stopping rule fired before `outer_max`.
    pub converged: bool,
    /// Iterations whose objective rose beyond the 1e-8·L₀ slack.
    pub violations: Vec<usize>,
}

/// Everything a pipeline run produces.
#[derive(Debug)]
pub struct PipelineOutput {
    pub model: FactorModel,
    /// Final (blended) interaction matrix.
    pub x: InteractionMatrix,
    /// Denoise result of the last outer iteration.
    pub denoise: DenoiseResult,
    /// Plan of the last outer iteration.
    pub plan: TransportPlan,
    pub trace: PipelineTrace,
}

fn compute_plan(
    cost: &CostMatrix,
    marg: &Marginals,
    cfg: &ProRecConfig,
) -> Result<TransportPlan> {
    match cfg.transport {
        TransportKind::Sinkhorn => {
            let plan = sinkhorn(
                cost,
                marg,
                cfg.gamma,
                cfg.sinkhorn_max_iters,
                cfg.sinkhorn_tol,
            )?;
            if let Some(stats) = plan.stats {
                if !stats.converged {
                    log::warn!(
                        "sinkhorn hit {} iterations without reaching tol {} (row err {:.3e})",
                        stats.iterations,
                        cfg.sinkhorn_tol,
                        stats.row_err_l1
                    );
                }
            }
            Ok(plan)
        }
        TransportKind::RelaxedMax => relaxed_plan(cost, marg, cfg.gamma),
        TransportKind::EmdSmall => emd_exact_small(cost, marg),
    }
}

/// Runs the full denoising loop on `x0` with fixed marginals `marg`.
///
/// Per outer iteration: ALS epochs on the current X, cost M = −UVᵀ, a
/// transport plan, per-user thresholds/relabels, and the λ-blend
/// `X ← λX + (1−λ) R ⊙ X`. Stops early when the relative objective change
/// drops below `rel_tol`. An objective rise beyond `1e-8·L₀` is recorded in
/// `trace.violations` and warned about, never silently ignored.
pub fn run_prorec(
    x0: &InteractionMatrix,
    marg: &Marginals,
    cfg: &ProRecConfig,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    if x0.nnz() == 0 {
        return Err(Error::EmptyDataset);
    }
    if marg.q.len() != x0.n_users() || marg.p.len() != x0.n_items() {
        return Err(Error::ShapeMismatch {
            context: "run_prorec marginals",
            expected: (x0.n_users(), x0.n_items()),
            got: (marg.q.len(), marg.p.len()),
        });
    }

    let mut model = init_model(
        x0.n_users(),
        x0.n_items(),
        cfg.d,
        cfg.zeta,
        cfg.init_scale,
        cfg.seed,
    )?;
    let mut x = x0.clone();
    let initial_objective = model.objective(&x)?;
    let slack = 1e-8 * initial_objective.abs().max(1e-12);

    let mut records: Vec<IterationRecord> = Vec::with_capacity(cfg.outer_max);
    let mut violations = Vec::new();
    let mut converged = false;
    let mut last_denoise: Option<DenoiseResult> = None;
    let mut last_plan: Option<TransportPlan> = None;
    let mut prev_objective = initial_objective;

    for iteration in 1..=cfg.outer_max {
        let t0 = Instant::now();
        for _ in 0..cfg.als_epochs_per_outer {
            model = als_epoch(model, &x)?;
        }
        let secs_als = t0.elapsed().as_secs_f64();
        let objective = model.objective(&x)?;

        let t1 = Instant::now();
        let cost = model.cost_matrix()?;
        let plan = compute_plan(&cost, marg, cfg)?;
        let secs_transport = t1.elapsed().as_secs_f64();
        let transport_objective = plan.transport_objective(&cost)?;

        let t2 = Instant::now();
        let denoise = match cfg.threshold {
            ThresholdKind::Personalized => {
                personalized_denoise(&plan, &x, cfg.scope, cfg.beta)?
            }
            ThresholdKind::Global(sigma) => global_threshold_denoise(&plan, &x, sigma)?,
            ThresholdKind::None => DenoiseResult::identity(&x),
        };
        let secs_denoise = t2.elapsed().as_secs_f64();
        let relabeled_pairs = denoise.relabel.flagged_count();

        let t3 = Instant::now();
        if cfg.threshold != ThresholdKind::None {
            x = blend(&x, &denoise.relabel, cfg.lambda)?;
        }
        let secs_blend = t3.elapsed().as_secs_f64();

        if objective > prev_objective + slack {
            log::warn!(
                "objective rose at outer iteration {iteration}: {prev_objective} -> {objective} \
                 (slack {slack:.3e})"
            );
            violations.push(iteration);
        }

        records.push(IterationRecord {
            iteration,
            objective,
            transport_objective,
            relabeled_pairs,
            secs_als,
            secs_transport,
            secs_denoise,
            secs_blend,
        });
        last_denoise = Some(denoise);
        last_plan = Some(plan);

        let rel_change =
            (objective - prev_objective).abs() / prev_objective.abs().max(1e-12);
        prev_objective = objective;
        if records.len() >= 2 && rel_change < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    let trace = PipelineTrace {
        initial_objective,
        records,
        converged,
        violations,
    };
    Ok(PipelineOutput {
        model,
        x,
        denoise: last_denoise.expect("outer_max ≥ 1 guarantees one iteration"),
        plan: last_plan.expect("outer_max ≥ 1 guarantees one iteration"),
        trace,
    })
}

/// Convenience wrapper: compute the popularity marginals of `x0` and run.
pub fn run_prorec_auto(x0: &InteractionMatrix, cfg: &ProRecConfig) -> Result<PipelineOutput> {
    let marg = popularity_marginals(x0)?;
    run_prorec(x0, &marg, cfg)
}

/// Converged iff the last two recorded objectives satisfy
/// `|L_t − L_{t−1}| / max(L_{t−1}, ε) < rel_tol`; fewer than two records is
/// never converged.
pub fn convergence_check(trace: &PipelineTrace, rel_tol: f64) -> bool {
    let n = trace.records.len();
    if n < 2 {
        return false;
    }
    let last = trace.records[n - 1].objective;
    let prev = trace.records[n - 2].objective;
    (last - prev).abs() / prev.abs().max(1e-12) < rel_tol
}
