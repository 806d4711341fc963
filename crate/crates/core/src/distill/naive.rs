//! Prediction-to-prediction baseline: cells are compared only where both
//! networks are active at the same grid position.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1};

use super::{DistillLossReport, LossGradient, LossOptions};
use crate::error::{invalid, Result};
use crate::ot::Norm;
use crate::prediction::KeypointPredictionSet;

/// `(student cell, teacher cell)` pairs active in both sets, matched on
/// `cell_xy`, in student order. A duplicated position uses its first cell.
fn matched_pairs(
    student: &KeypointPredictionSet,
    teacher: &KeypointPredictionSet,
    threshold: f64,
) -> Vec<(usize, usize)> {
    let mut active: HashMap<[i64; 2], usize> = HashMap::new();
    for (j, cell) in teacher.cells.iter().enumerate() {
        if cell.score >= threshold {
            active.entry(cell.cell_xy).or_insert(j);
        }
    }
    let mut seen = std::collections::HashSet::new();
    student
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.score >= threshold && seen.insert(c.cell_xy))
        .filter_map(|(i, c)| active.get(&c.cell_xy).map(|&j| (i, j)))
        .collect()
}

fn check_inputs(student: &KeypointPredictionSet, teacher: &KeypointPredictionSet, options: &LossOptions) -> Result<()> {
    student.check_shape()?;
    teacher.check_shape()?;
    if student.num_keypoints != teacher.num_keypoints {
        return Err(invalid(format!(
            "student has {} keypoints, teacher {}",
            student.num_keypoints, teacher.num_keypoints
        )));
    }
    for (side, set) in [("student", student), ("teacher", teacher)] {
        let m = set.max_vote_magnitude();
        if m > options.vote_bound {
            return Err(invalid(format!(
                "{side} vote magnitude {m} exceeds {}; normalize keypoints by the image size first",
                options.vote_bound
            )));
        }
    }
    Ok(())
}

/// `Σ_i Σ_k ‖s_ik − t_ik‖_p` over the matched cells. No matched cells is
/// not an error: the loss is zero with `matched_cells = 0`.
pub fn naive_kd_loss(student: &KeypointPredictionSet, teacher: &KeypointPredictionSet, norm: Norm) -> Result<DistillLossReport> {
    naive_kd_loss_with(student, teacher, norm, &LossOptions::default())
}

pub fn naive_kd_loss_with(
    student: &KeypointPredictionSet,
    teacher: &KeypointPredictionSet,
    norm: Norm,
    options: &LossOptions,
) -> Result<DistillLossReport> {
    check_inputs(student, teacher, options)?;
    let pairs = matched_pairs(student, teacher, options.naive_threshold);
    let mut total = 0.0;
    for &(i, j) in &pairs {
        for (s, t) in student.cells[i].votes.iter().zip(&teacher.cells[j].votes) {
            total += norm.distance(ArrayView1::from(s), ArrayView1::from(t));
        }
    }
    Ok(DistillLossReport {
        total,
        per_corner: Vec::new(),
        summaries: Vec::new(),
        matched_cells: pairs.len(),
        converged: true,
        mass_mismatch: false,
    })
}

/// Gradient of [`naive_kd_loss`] with respect to the student votes. The
/// activity threshold is not differentiable, so the score gradient is zero.
pub fn naive_kd_gradient(
    student: &KeypointPredictionSet,
    teacher: &KeypointPredictionSet,
    norm: Norm,
    options: &LossOptions,
) -> Result<LossGradient> {
    check_inputs(student, teacher, options)?;
    let k = student.num_keypoints;
    let mut d_points = Array2::zeros((student.cells.len(), 2 * k));
    for (i, j) in matched_pairs(student, teacher, options.naive_threshold) {
        for (c, (s, t)) in student.cells[i].votes.iter().zip(&teacher.cells[j].votes).enumerate() {
            let mut g = [0.0; 2];
            norm.accumulate_gradient(ArrayView1::from(s), ArrayView1::from(t), 1.0, &mut g);
            d_points[[i, 2 * c]] += g[0];
            d_points[[i, 2 * c + 1]] += g[1];
        }
    }
    Ok(LossGradient {
        d_points,
        d_weights: Array1::zeros(student.cells.len()),
        converged: true,
    })
}
