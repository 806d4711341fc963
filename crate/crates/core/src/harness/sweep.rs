//! Grid sweeps over loss kind and solver hyperparameters.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_student, SyntheticScenario, TrainOptions};
use crate::distill::LossKind;
use crate::error::{invalid, Result};
use crate::ot::SinkhornConfig;

/// Cartesian grid of training configurations. The baseline loss ignores
/// `epsilons` and `rhos` but still gets one row per combination, so every
/// loss has the same number of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub losses: Vec<LossKind>,
    pub epsilons: Vec<f64>,
    pub rhos: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            losses: vec![LossKind::Naive, LossKind::OtKeypoint],
            epsilons: vec![0.001, 0.01],
            rhos: vec![0.25, 0.5, 1.0],
            step_sizes: vec![super::DEFAULT_STEP_SIZE],
        }
    }
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.losses.len() * self.epsilons.len() * self.rhos.len() * self.step_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn points(&self) -> Vec<(LossKind, f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for &loss in &self.losses {
            for &eps in &self.epsilons {
                for &rho in &self.rhos {
                    for &lr in &self.step_sizes {
                        out.push((loss, eps, rho, lr));
                    }
                }
            }
        }
        out
    }
}

/// Outcome of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub loss: LossKind,
    pub epsilon: f64,
    pub rho: f64,
    pub step_size: f64,
    pub steps: usize,
    pub initial_corner_error: f64,
    pub final_loss: f64,
    pub final_divergence: f64,
    pub final_corner_error: f64,
    /// The run stopped early or could not start.
    pub failed: bool,
    pub message: String,
}

/// Trains one student per grid point (in parallel) and reports the final
/// state of each, in grid order. A failing configuration is reported in its
/// row and does not stop the sweep.
pub fn sweep(s: &SyntheticScenario, grid: &SweepGrid, base: &TrainOptions) -> Result<Vec<SweepRow>> {
    s.validate()?;
    if grid.is_empty() {
        return Err(invalid("sweep grid is empty"));
    }
    Ok(grid
        .points()
        .into_par_iter()
        .map(|(loss, epsilon, rho, step_size)| {
            let cfg = SinkhornConfig::keypoint().with_eps_rho(epsilon, rho);
            let options = TrainOptions { step_size, ..*base };
            let mut row = SweepRow {
                loss,
                epsilon,
                rho,
                step_size,
                steps: 0,
                initial_corner_error: f64::NAN,
                final_loss: f64::NAN,
                final_divergence: f64::NAN,
                final_corner_error: f64::NAN,
                failed: true,
                message: String::new(),
            };
            match train_student(s, loss, &cfg, &options) {
                Ok(run) => {
                    let records = &run.trajectory.records;
                    if let (Some(first), Some(last)) = (records.first(), records.last()) {
                        row.steps = records.len();
                        row.initial_corner_error = first.corner_error;
                        row.final_loss = last.loss;
                        row.final_divergence = last.divergence;
                        row.final_corner_error = last.corner_error;
                    }
                    row.failed = run.failure.is_some() || records.is_empty();
                    row.message = run.failure.unwrap_or_default();
                }
                Err(e) => row.message = e.to_string(),
            }
            row
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| invalid(format!("writing CSV: {e}")))?;
    }
    w.flush().map_err(|e| invalid(format!("writing CSV: {e}")))
}
