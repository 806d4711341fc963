//! Entropic unbalanced optimal transport.

pub mod cost;
pub mod kl;
mod linalg;
mod problem;
pub mod sinkhorn;

pub use cost::{cost_matrix, Norm};
pub use sinkhorn::{
    objective_on_plan, plan_marginals, sinkhorn_detailed, sinkhorn_unbalanced,
    sinkhorn_unbalanced_warm, solve_cost, transport_plan, DualPotentials, SinkhornConfig,
    SolveDetail, TransportSummary,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::points::WeightedPointSet;

/// Debiased divergence `OT(a,b) − ½ OT(a,a) − ½ OT(b,b)` with its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebiasedReport {
    pub value: f64,
    pub cross: TransportSummary,
    pub self_a: TransportSummary,
    pub self_b: TransportSummary,
    /// Inputs carried different total masses; no mass correction was applied.
    pub mass_mismatch: bool,
}

impl DebiasedReport {
    pub fn converged(&self) -> bool {
        self.cross.converged && self.self_a.converged && self.self_b.converged
    }
}

/// Sinkhorn divergence between two point sets, see [`DebiasedReport`].
pub fn debiased_divergence(
    a: &WeightedPointSet,
    b: &WeightedPointSet,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    debiased_report(a, b, cfg).map(|r| r.value)
}

pub fn debiased_report(
    a: &WeightedPointSet,
    b: &WeightedPointSet,
    cfg: &SinkhornConfig,
) -> Result<DebiasedReport> {
    let (cross, _) = sinkhorn_unbalanced(a, b, cfg)?;
    let (self_a, _) = sinkhorn_unbalanced(a, a, cfg)?;
    let (self_b, _) = sinkhorn_unbalanced(b, b, cfg)?;
    let (ma, mb) = (a.total_mass(), b.total_mass());
    Ok(DebiasedReport {
        value: cross.total - 0.5 * (self_a.total + self_b.total),
        cross,
        self_a,
        self_b,
        mass_mismatch: (ma - mb).abs() > 1e-9 * ma.max(mb),
    })
}
