//! CSV exports of training runs.

use std::io::Write;

use serde::Serialize;

use super::{DistillTrajectory, SyntheticScenario, TrainingRun};
use crate::error::{invalid, Result};
use crate::prediction::KeypointPredictionSet;

fn csv_error(e: impl std::fmt::Display) -> crate::Error {
    invalid(format!("writing CSV: {e}"))
}

/// `step,loss,divergence,corner_error,wallclock_ms`, one row per step.
pub fn write_trajectory_csv<W: Write>(trajectory: &DistillTrajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &trajectory.records {
        w.serialize(r).map_err(csv_error)?;
    }
    if trajectory.records.is_empty() {
        w.write_record(["step", "loss", "divergence", "corner_error", "wallclock_ms"])
            .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

/// One point of a scatter export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    /// `teacher`, `student_init`, `student_final` or `gt`.
    pub role: &'static str,
    pub corner: usize,
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

fn push_set(rows: &mut Vec<ScatterRow>, role: &'static str, set: &KeypointPredictionSet) {
    for k in 0..set.num_keypoints {
        for c in &set.cells {
            rows.push(ScatterRow {
                role,
                corner: k,
                x: c.votes[k][0],
                y: c.votes[k][1],
                weight: c.score,
            });
        }
    }
}

/// Teacher, initial and final student votes and the ground-truth corners as
/// `role,corner,x,y,weight` rows.
pub fn scatter_rows(s: &SyntheticScenario, run: &TrainingRun) -> Result<Vec<ScatterRow>> {
    let mut rows = Vec::new();
    push_set(&mut rows, "teacher", &super::generate_teacher(s)?);
    push_set(&mut rows, "student_init", &run.initial.to_predictions()?);
    push_set(&mut rows, "student_final", &run.final_model.to_predictions()?);
    for (k, gt) in s.gt_corners.iter().enumerate() {
        rows.push(ScatterRow {
            role: "gt",
            corner: k,
            x: gt[0],
            y: gt[1],
            weight: 1.0,
        });
    }
    Ok(rows)
}

pub fn write_scatter_csv<W: Write>(s: &SyntheticScenario, run: &TrainingRun, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in scatter_rows(s, run)? {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}
