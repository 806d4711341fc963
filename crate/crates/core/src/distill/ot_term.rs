//! One transport term between a student cloud and a (constant) teacher cloud,
//! with envelope-theorem gradients with respect to the student's points and
//! normalized weights.

use ndarray::Array2;

use crate::error::Result;
use crate::ot::{sinkhorn_detailed, sinkhorn_unbalanced, DualPotentials, SinkhornConfig, SolveDetail, TransportSummary};
use crate::points::WeightedPointSet;

/// Teacher-side data that does not change while the student trains.
#[derive(Debug, Clone)]
pub(crate) struct TeacherCloud {
    pub set: WeightedPointSet,
    /// `OT(b, b)`, present when debiasing.
    pub self_term: Option<TransportSummary>,
}

impl TeacherCloud {
    pub fn new(set: WeightedPointSet, cfg: &SinkhornConfig) -> Result<Self> {
        let self_term = if cfg.debiased {
            Some(sinkhorn_unbalanced(&set, &set, cfg)?.0)
        } else {
            None
        };
        Ok(Self { set, self_term })
    }
}

/// Potentials of the previous solve, reused as the next starting point.
#[derive(Debug, Clone, Default)]
pub(crate) struct WarmStart {
    pub cross: Option<DualPotentials>,
    pub student_self: Option<DualPotentials>,
}

#[derive(Debug, Clone)]
pub(crate) struct TermValue {
    pub value: f64,
    pub summaries: Vec<TransportSummary>,
    pub converged: bool,
    pub mass_mismatch: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct TermGradient {
    /// `∂/∂x_i`, one row per student point.
    pub d_points: Array2<f64>,
    /// `∂/∂a_i` with respect to the (already prepared) student weights.
    pub d_weights: Vec<f64>,
}

/// Value of the (optionally debiased) term. With `grad`, also the gradient.
pub(crate) fn evaluate_term(
    student: &WeightedPointSet,
    teacher: &TeacherCloud,
    cfg: &SinkhornConfig,
    warm: Option<&mut WarmStart>,
    grad: bool,
) -> Result<(TermValue, Option<TermGradient>)> {
    let mut local = WarmStart::default();
    let warm = warm.unwrap_or(&mut local);

    let cross = sinkhorn_detailed(student, &teacher.set, cfg, warm.cross.as_ref())?;
    let mut value = cross.summary.total;
    let mut summaries = vec![cross.summary];
    let mut converged = cross.summary.converged;
    let mut gradient = grad.then(|| cross_gradient(&cross, student, &teacher.set, cfg));
    warm.cross = Some(cross.potentials.clone());

    if let Some(teacher_self) = teacher.self_term {
        let own = sinkhorn_detailed(student, student, cfg, warm.student_self.as_ref())?;
        value -= 0.5 * (own.summary.total + teacher_self.total);
        converged &= own.summary.converged && teacher_self.converged;
        summaries.push(own.summary);
        summaries.push(teacher_self);
        if let Some(g) = gradient.as_mut() {
            let s = self_gradient(&own, student, cfg);
            g.d_points.scaled_add(-0.5, &s.d_points);
            for (d, s) in g.d_weights.iter_mut().zip(&s.d_weights) {
                *d -= 0.5 * s;
            }
        }
        warm.student_self = Some(own.potentials);
    }
    let (ma, mb) = (student.total_mass(), teacher.set.total_mass());
    Ok((
        TermValue {
            value,
            summaries,
            converged,
            mass_mismatch: (ma - mb).abs() > 1e-9 * ma.max(mb),
        },
        gradient,
    ))
}

/// `∂/∂x_i = Σ_j π_ij ∇_x C(x_i, y_j)` and
/// `∂/∂a_i = ε² (m_b − r_i/a_i) + ρ² (1 − r_i/a_i)` at the optimal plan.
fn cross_gradient(
    detail: &SolveDetail,
    x: &WeightedPointSet,
    y: &WeightedPointSet,
    cfg: &SinkhornConfig,
) -> TermGradient {
    let (eps2, rho2) = (cfg.eps2(), cfg.rho2());
    let mut d_points = Array2::zeros((x.len(), x.dim()));
    let mut d_weights = vec![0.0; x.len()];
    let mb = y.total_mass();
    for i in 0..x.len() {
        if x.weights()[i] == 0.0 {
            continue;
        }
        let mut row = vec![0.0; x.dim()];
        for j in 0..y.len() {
            let p = detail.plan[[i, j]];
            if p > 0.0 {
                cfg.norm.accumulate_gradient(x.point(i), y.point(j), p, &mut row);
            }
        }
        d_points.row_mut(i).assign(&ndarray::Array1::from(row));
        let ratio = detail.row_log_ratio[i].exp();
        d_weights[i] = eps2 * (mb - ratio) + rho2 * (1.0 - ratio);
    }
    TermGradient { d_points, d_weights }
}

/// Gradient of `OT(a, a)`: the student appears on both sides.
fn self_gradient(detail: &SolveDetail, x: &WeightedPointSet, cfg: &SinkhornConfig) -> TermGradient {
    let (eps2, rho2) = (cfg.eps2(), cfg.rho2());
    let n = x.len();
    let mut d_points = Array2::zeros((n, x.dim()));
    let mut d_weights = vec![0.0; n];
    let m = x.total_mass();
    for i in 0..n {
        if x.weights()[i] == 0.0 {
            continue;
        }
        let mut row = vec![0.0; x.dim()];
        for j in 0..n {
            let p = detail.plan[[i, j]] + detail.plan[[j, i]];
            if p > 0.0 && i != j {
                cfg.norm.accumulate_gradient(x.point(i), x.point(j), p, &mut row);
            }
        }
        d_points.row_mut(i).assign(&ndarray::Array1::from(row));
        let r = detail.row_log_ratio[i].exp();
        let c = detail.col_log_ratio[i].exp();
        d_weights[i] = eps2 * (2.0 * m - r - c) + rho2 * (2.0 - r - c);
    }
    TermGradient { d_points, d_weights }
}

/// Chain rule through unit-mass normalization `w_i = s_i / S` over the kept
/// entries: `∂L/∂s_k = (G_k − Σ_i w_i G_i) / S`. Entries that were dropped
/// get zero.
pub(crate) fn chain_unit_mass(grad_w: &[f64], weights: &[f64], kept: &[usize], kept_mass: f64, n: usize) -> Vec<f64> {
    let mean: f64 = grad_w.iter().zip(weights).map(|(g, w)| g * w).sum();
    let mut out = vec![0.0; n];
    for (k, &idx) in kept.iter().enumerate() {
        out[idx] = (grad_w[k] - mean) / kept_mass;
    }
    out
}
