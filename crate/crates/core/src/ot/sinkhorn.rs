//! Log-domain unbalanced Sinkhorn for the KL-relaxed entropic transport
//! objective
//!
//! ```text
//! min_π  Σ π_ij C_ij + ε² KL(π, a⊗b) + ρ² KL(π1, a) + ρ² KL(πᵀ1, b)
//! ```
//!
//! where `KL` is the generalized (mass-aware) Kullback-Leibler divergence.
//! The dual potentials `f, g` parameterize the plan as
//! `π_ij = a_i b_j exp((f_i + g_j − C_ij) / ε²)`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::cost::{cost_matrix, Norm};
use super::problem::Problem;
use crate::error::{invalid, Error, Result};
use crate::points::WeightedPointSet;

/// Solver hyperparameters. `epsilon` and `rho` enter the objective squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub rho: f64,
    pub norm: Norm,
    pub max_iter: usize,
    /// Convergence threshold on the sup-norm potential change, in units of ε².
    pub tol: f64,
    pub debiased: bool,
    /// Warm-start the solve with a geometric ε-scaling schedule.
    pub anneal: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self::keypoint()
    }
}

impl SinkhornConfig {
    /// ε = 0.001, ρ = 0.5 on keypoints normalized to the unit square.
    pub fn keypoint() -> Self {
        Self {
            epsilon: 1e-3,
            rho: 0.5,
            norm: Norm::L2,
            max_iter: 500,
            tol: 1e-6,
            debiased: true,
            anneal: false,
        }
    }

    /// ε = 0.0001, ρ = 0.1 on pooled, coordinate-augmented binary codes.
    pub fn dense() -> Self {
        Self {
            epsilon: 1e-4,
            rho: 0.1,
            ..Self::keypoint()
        }
    }

    pub fn with_eps_rho(mut self, epsilon: f64, rho: f64) -> Self {
        self.epsilon = epsilon;
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    pub(crate) fn eps2(&self) -> f64 {
        self.epsilon * self.epsilon
    }

    pub(crate) fn rho2(&self) -> f64 {
        self.rho * self.rho
    }
}

/// Converged Kantorovich potentials, in cost units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// Objective decomposition evaluated on the plan implied by the potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportSummary {
    /// `Σ π_ij C_ij`
    pub transport_cost: f64,
    /// `ε² KL(π, a⊗b)`
    pub kl_joint: f64,
    /// `ρ² KL(π1, a)`
    pub kl_row: f64,
    /// `ρ² KL(πᵀ1, b)`
    pub kl_col: f64,
    /// Optimal value, evaluated through the dual objective. It matches the
    /// sum of the four parts to solver precision and is markedly less
    /// sensitive to rounding when ε is small.
    pub total: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Everything a gradient computation needs from a solve.
#[derive(Debug, Clone)]
pub struct SolveDetail {
    pub summary: TransportSummary,
    pub potentials: DualPotentials,
    pub cost: Array2<f64>,
    pub plan: Array2<f64>,
    /// `log(Σ_j π_ij / a_i)` per row.
    pub row_log_ratio: Vec<f64>,
    /// `log(Σ_i π_ij / b_j)` per column.
    pub col_log_ratio: Vec<f64>,
}

/// Solves the unbalanced problem between two weighted point sets.
pub fn sinkhorn_unbalanced(
    a: &WeightedPointSet,
    b: &WeightedPointSet,
    cfg: &SinkhornConfig,
) -> Result<(TransportSummary, DualPotentials)> {
    sinkhorn_unbalanced_warm(a, b, cfg, None)
}

/// [`sinkhorn_unbalanced`] started from previous potentials (for example the
/// solution of the previous training step). Mismatched sizes fall back to a
/// cold start.
pub fn sinkhorn_unbalanced_warm(
    a: &WeightedPointSet,
    b: &WeightedPointSet,
    cfg: &SinkhornConfig,
    init: Option<&DualPotentials>,
) -> Result<(TransportSummary, DualPotentials)> {
    let cost = cost_matrix(a, b, cfg.norm)?;
    let a_w = a.weights().to_vec();
    let b_w = b.weights().to_vec();
    solve_cost(cost.view(), &a_w, &b_w, cfg, init)
}

/// Like [`sinkhorn_unbalanced_warm`], but also materializes the plan and the
/// marginal log-ratios.
pub fn sinkhorn_detailed(
    a: &WeightedPointSet,
    b: &WeightedPointSet,
    cfg: &SinkhornConfig,
    init: Option<&DualPotentials>,
) -> Result<SolveDetail> {
    let cost = cost_matrix(a, b, cfg.norm)?;
    let a_w = a.weights().to_vec();
    let b_w = b.weights().to_vec();
    let (summary, potentials) = solve_cost(cost.view(), &a_w, &b_w, cfg, init)?;
    let problem = Problem::new(cost.view(), &a_w, &b_w)?;
    let eps2 = cfg.eps2();
    let plan = problem.plan(&potentials.f, &potentials.g, eps2);
    let row_log_ratio = problem.row_log_ratios(&potentials.f, &potentials.g, eps2);
    let col_log_ratio = problem.col_log_ratios(&potentials.f, &potentials.g, eps2);
    Ok(SolveDetail {
        summary,
        potentials,
        cost,
        plan,
        row_log_ratio,
        col_log_ratio,
    })
}

/// Solves the problem for an explicit cost matrix and marginal weights.
pub fn solve_cost<'a>(
    cost: ArrayView2<'a, f64>,
    a: &'a [f64],
    b: &'a [f64],
    cfg: &SinkhornConfig,
    init: Option<&DualPotentials>,
) -> Result<(TransportSummary, DualPotentials)> {
    cfg.validate()?;
    let problem = Problem::new(cost, a, b)?;
    let (n, m) = (a.len(), b.len());

    let (mut f, mut g) = match init {
        Some(p) if p.f.len() == n && p.g.len() == m => (p.f.clone(), p.g.clone()),
        _ => (vec![0.0; n], vec![0.0; m]),
    };

    let eps2 = cfg.eps2();
    let rho2 = cfg.rho2();
    let mut iterations = 0;

    if cfg.anneal {
        let top = problem.max_cost().sqrt();
        let mut eps = top;
        while eps > 2.0 * cfg.epsilon {
            let stage_eps2 = eps * eps;
            for _ in 0..ANNEAL_STAGE_ITERS {
                iterations += 1;
                let change = problem.sweep(&mut f, &mut g, stage_eps2, rho2);
                if change <= cfg.tol * stage_eps2 {
                    break;
                }
            }
            eps *= ANNEAL_FACTOR;
        }
    }

    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let change = problem.sweep(&mut f, &mut g, eps2, rho2);
        if !change.is_finite() {
            return Err(Error::NonFinite("Sinkhorn potentials diverged".into()));
        }
        if change <= cfg.tol * eps2 {
            converged = true;
            break;
        }
        if iterations >= NEWTON_WARMUP {
            problem.newton_step(&mut f, &mut g, eps2, rho2);
            // Stationary to working precision: further iterations only
            // shuffle rounding noise.
            let (residual, floor) = problem.residual(&f, &g, eps2, rho2);
            if residual <= floor {
                converged = true;
                break;
            }
        }
    }

    let mut summary = problem.evaluate(&f, &g, eps2, rho2);
    summary.iterations = iterations;
    summary.converged = converged;
    if !summary.total.is_finite() {
        return Err(Error::NonFinite("transport objective".into()));
    }
    Ok((summary, DualPotentials { f, g }))
}

const ANNEAL_FACTOR: f64 = 0.5;
const ANNEAL_STAGE_ITERS: usize = 50;
/// Plain sweeps before Newton steps are interleaved.
const NEWTON_WARMUP: usize = 3;

/// Materializes `π_ij = a_i b_j exp((f_i + g_j − C_ij)/ε²)`.
pub fn transport_plan(
    a: &WeightedPointSet,
    b: &WeightedPointSet,
    potentials: &DualPotentials,
    cfg: &SinkhornConfig,
) -> Result<Array2<f64>> {
    if potentials.f.len() != a.len() || potentials.g.len() != b.len() {
        return Err(invalid(format!(
            "potentials of size ({}, {}) do not match a {}x{} problem",
            potentials.f.len(),
            potentials.g.len(),
            a.len(),
            b.len()
        )));
    }
    let cost = cost_matrix(a, b, cfg.norm)?;
    let a_w = a.weights().to_vec();
    let b_w = b.weights().to_vec();
    let problem = Problem::new(cost.view(), &a_w, &b_w)?;
    Ok(problem.plan(&potentials.f, &potentials.g, cfg.eps2()))
}

/// Exact row and column sums of a plan.
pub fn plan_marginals(plan: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let rows = plan.rows().into_iter().map(|r| r.sum()).collect();
    let cols = plan.columns().into_iter().map(|c| c.sum()).collect();
    (rows, cols)
}

/// Direct evaluation of the relaxed objective on an explicit plan.
/// Used to cross-check [`TransportSummary::total`].
pub fn objective_on_plan(
    plan: ArrayView2<'_, f64>,
    cost: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    rho: f64,
) -> f64 {
    use super::kl::generalized_kl;
    let transport: f64 = plan.iter().zip(cost.iter()).map(|(p, c)| p * c).sum();
    let prior: Vec<f64> = a.iter().flat_map(|&ai| b.iter().map(move |&bj| ai * bj)).collect();
    let flat: Vec<f64> = plan.iter().copied().collect();
    let (rows, cols) = plan_marginals(plan);
    transport
        + epsilon * epsilon * generalized_kl(&flat, &prior)
        + rho * rho * (generalized_kl(&rows, a) + generalized_kl(&cols, b))
}

