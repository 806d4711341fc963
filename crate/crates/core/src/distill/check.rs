//! Central finite-difference verification of the analytic loss gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loss_gradient, naive_kd_loss_with, DenseObjective, KeypointObjective, LossKind, LossOptions};
use crate::error::{invalid, Result};
use crate::ot::SinkhornConfig;
use crate::prediction::PredictionSet;

/// Step and tolerances of a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSettings {
    /// Central-difference half step.
    pub step: f64,
    pub rel_tol: f64,
    /// Differences below this are accepted regardless of relative size.
    pub abs_floor: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-7,
        }
    }
}

/// The component with the largest error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstComponent {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, abs_floor / rel_tol)`,
    /// which is at most `rel_tol` exactly when every component is within the
    /// relative tolerance or the absolute floor.
    pub max_rel_error: f64,
    pub components: usize,
    pub worst: Option<WorstComponent>,
    pub passed: bool,
    /// Every solve behind the analytic gradient converged.
    pub converged: bool,
}

#[derive(Clone, Copy)]
enum Component {
    Vote { cell: usize, corner: usize, axis: usize },
    Code { cell: usize, channel: usize },
    Score { cell: usize },
}

impl Component {
    fn label(self) -> String {
        match self {
            Component::Vote { cell, corner, axis } => format!("cell {cell} corner {corner} axis {axis}"),
            Component::Code { cell, channel } => format!("cell {cell} channel {channel}"),
            Component::Score { cell } => format!("cell {cell} score"),
        }
    }

    fn perturbed(self, set: &PredictionSet, delta: f64) -> PredictionSet {
        let mut out = set.clone();
        match (self, &mut out) {
            (Component::Vote { cell, corner, axis }, PredictionSet::Keypoints(s)) => {
                s.cells[cell].votes[corner][axis] += delta
            }
            (Component::Code { cell, channel }, PredictionSet::DenseCodes(s)) => s.cells[cell].code[channel] += delta,
            (Component::Score { cell }, PredictionSet::Keypoints(s)) => s.cells[cell].score += delta,
            (Component::Score { cell }, PredictionSet::DenseCodes(s)) => s.cells[cell].score += delta,
            _ => unreachable!("component does not match the prediction kind"),
        }
        out
    }
}

/// Compares [`loss_gradient`] with central differences of the loss, one
/// student parameter at a time.
pub fn gradient_check(
    kind: LossKind,
    student: &PredictionSet,
    teacher: &PredictionSet,
    cfg: &SinkhornConfig,
    options: &LossOptions,
    settings: &GradCheckSettings,
) -> Result<GradCheckReport> {
    if !(settings.step > 0.0 && settings.rel_tol > 0.0 && settings.abs_floor >= 0.0) {
        return Err(invalid("finite-difference step and tolerances must be positive"));
    }
    let analytic = loss_gradient(kind, student, teacher, cfg, options)?;

    let loss: Box<dyn Fn(&PredictionSet) -> Result<f64> + Sync> = match (kind, teacher) {
        (LossKind::OtKeypoint, PredictionSet::Keypoints(t)) => {
            let objective = KeypointObjective::new(t, cfg, options)?;
            Box::new(move |s| match s {
                PredictionSet::Keypoints(s) => objective.loss(s).map(|r| r.total),
                _ => unreachable!(),
            })
        }
        (LossKind::OtDense, PredictionSet::DenseCodes(t)) => {
            let objective = DenseObjective::new(t, cfg, options)?;
            Box::new(move |s| match s {
                PredictionSet::DenseCodes(s) => objective.loss(s).map(|r| r.total),
                _ => unreachable!(),
            })
        }
        (LossKind::Naive, PredictionSet::Keypoints(t)) => {
            let (t, norm, options) = (t.clone(), cfg.norm, *options);
            Box::new(move |s| match s {
                PredictionSet::Keypoints(s) => naive_kd_loss_with(s, &t, norm, &options).map(|r| r.total),
                _ => unreachable!(),
            })
        }
        // loss_gradient has already rejected every other pairing
        _ => unreachable!(),
    };

    let mut components = Vec::new();
    match student {
        PredictionSet::Keypoints(s) => {
            for cell in 0..s.cells.len() {
                for corner in 0..s.num_keypoints {
                    for axis in 0..2 {
                        components.push((
                            Component::Vote { cell, corner, axis },
                            analytic.d_points[[cell, 2 * corner + axis]],
                        ));
                    }
                }
                components.push((Component::Score { cell }, analytic.d_weights[cell]));
            }
        }
        PredictionSet::DenseCodes(s) => {
            for cell in 0..s.cells.len() {
                for channel in 0..s.code_dim {
                    components.push((Component::Code { cell, channel }, analytic.d_points[[cell, channel]]));
                }
                components.push((Component::Score { cell }, analytic.d_weights[cell]));
            }
        }
    }

    let h = settings.step;
    let denom_floor = settings.abs_floor / settings.rel_tol;
    let errors = components
        .par_iter()
        .map(|&(c, a)| {
            let plus = loss(&c.perturbed(student, h))?;
            let minus = loss(&c.perturbed(student, -h))?;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(denom_floor);
            Ok((err, c, a, numeric))
        })
        .collect::<Result<Vec<_>>>()?;

    let worst = errors
        .iter()
        .copied()
        .fold(None::<(f64, Component, f64, f64)>, |best, e| match best {
            Some(b) if b.0 >= e.0 => Some(b),
            _ => Some(e),
        });
    let max_rel_error = worst.map_or(0.0, |w| w.0);
    Ok(GradCheckReport {
        max_rel_error,
        components: errors.len(),
        worst: worst.map(|(_, c, analytic, numeric)| WorstComponent {
            label: c.label(),
            analytic,
            numeric,
        }),
        passed: max_rel_error <= settings.rel_tol && max_rel_error.is_finite(),
        converged: analytic.converged,
    })
}
