//! Independent reference solvers for small instances.
//!
//! Neither solver shares code with the Sinkhorn iteration beyond the ground
//! cost: the balanced problem is solved exactly as a linear program, the
//! relaxed problem by primal mirror descent.

mod mirror;
mod simplex;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ot::{cost_matrix, Norm, SinkhornConfig};
use crate::points::WeightedPointSet;

/// Largest side accepted by [`exact_balanced_ot`].
pub const BALANCED_SIZE_CAP: usize = 32;
/// Largest side accepted by [`primal_uot_oracle`].
pub const PRIMAL_SIZE_CAP: usize = 6;
pub const DEFAULT_PRECISION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPlanResult {
    pub value: f64,
    pub plan: Array2<f64>,
    pub iterations: usize,
}

fn check_size(a: &WeightedPointSet, b: &WeightedPointSet, cap: usize) -> Result<()> {
    if a.len() > cap || b.len() > cap {
        return Err(Error::UnsupportedSize {
            rows: a.len(),
            cols: b.len(),
            cap,
        });
    }
    Ok(())
}

/// Minimizes `Σ π_ij C_ij` subject to exact marginals `a` and `b`.
pub fn exact_balanced_ot(a: &WeightedPointSet, b: &WeightedPointSet, norm: Norm) -> Result<ExactPlanResult> {
    check_size(a, b, BALANCED_SIZE_CAP)?;
    let cost = cost_matrix(a, b, norm)?;
    simplex::transportation_simplex(cost.view(), &a.weights().to_vec(), &b.weights().to_vec())
}

/// Minimizes the KL-relaxed entropic objective directly over plans.
/// `precision` bounds the relative objective decrease at termination.
pub fn primal_uot_oracle(
    a: &WeightedPointSet,
    b: &WeightedPointSet,
    cfg: &SinkhornConfig,
    precision: f64,
) -> Result<ExactPlanResult> {
    primal_uot_trace(a, b, cfg, precision).map(|(res, _)| res)
}

/// [`primal_uot_oracle`] plus the objective value after every accepted step.
pub fn primal_uot_trace(
    a: &WeightedPointSet,
    b: &WeightedPointSet,
    cfg: &SinkhornConfig,
    precision: f64,
) -> Result<(ExactPlanResult, Vec<f64>)> {
    check_size(a, b, PRIMAL_SIZE_CAP)?;
    cfg.validate()?;
    let cost = cost_matrix(a, b, cfg.norm)?;
    let a_w = a.weights().to_vec();
    let b_w = b.weights().to_vec();
    let solver = mirror::MirrorDescent {
        cost: cost.view(),
        a: &a_w,
        b: &b_w,
        eps2: cfg.epsilon * cfg.epsilon,
        rho2: cfg.rho * cfg.rho,
    };
    Ok(solver.run(precision))
}
