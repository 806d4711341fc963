//! Distillation losses between student and teacher predictions: the
//! prediction-to-prediction baseline, the per-corner keypoint transport loss
//! and the pooled dense-code transport loss, with analytic gradients.

mod check;
mod dense;
mod keypoint;
mod naive;
mod ot_term;

pub use check::{gradient_check, GradCheckReport, GradCheckSettings, WorstComponent};
pub use dense::{binary_code_kd_loss, binary_code_kd_loss_with, DenseObjective};
pub use keypoint::{keypoint_kd_loss, keypoint_kd_loss_with, KeypointObjective};
pub use naive::{naive_kd_gradient, naive_kd_loss, naive_kd_loss_with};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ot::{SinkhornConfig, TransportSummary};
use crate::points::{WeightMode, DEFAULT_WEIGHT_FLOOR};
use crate::prediction::{PredictionSet, DEFAULT_VOTE_BOUND};

/// Pooling size for dense binary-code predictions.
pub const DEFAULT_BLOCK: usize = 8;

/// Cells with a score at or above this are active for the baseline loss.
pub const NAIVE_SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Prediction-to-prediction distance over cells active in both sets.
    Naive,
    /// Per-corner transport between keypoint vote clouds.
    OtKeypoint,
    /// Transport between pooled, coordinate-augmented code clouds.
    OtDense,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            LossKind::Naive => "naive",
            LossKind::OtKeypoint => "ot-keypoint",
            LossKind::OtDense => "ot-dense",
        })
    }
}

/// Knobs of the loss pipelines that are not solver hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub weight_mode: WeightMode,
    /// Relative weight below which a cell is dropped (unit-mass mode).
    pub weight_floor: f64,
    /// Keypoint losses reject votes larger than this in absolute value; a
    /// guard against sets that were never normalized by the image size.
    pub vote_bound: f64,
    /// Baseline activity threshold on the score.
    pub naive_threshold: f64,
    /// Dense pooling size.
    pub block: usize,
    /// Scale of the tile-centre coordinate channels relative to the `[0, 1]`
    /// code channels.
    pub coord_scale: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            weight_mode: WeightMode::UnitMass,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            vote_bound: DEFAULT_VOTE_BOUND,
            naive_threshold: NAIVE_SCORE_THRESHOLD,
            block: DEFAULT_BLOCK,
            coord_scale: 1.0,
        }
    }
}

/// Loss value with its per-solve diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillLossReport {
    pub total: f64,
    /// One entry per keypoint (keypoint transport loss only).
    pub per_corner: Vec<f64>,
    /// Every transport solve that entered the value, in order
    /// (cross, student self, teacher self per term when debiased).
    pub summaries: Vec<TransportSummary>,
    /// Number of cells compared (baseline loss only).
    pub matched_cells: usize,
    /// All solves converged.
    pub converged: bool,
    /// Student and teacher masses differ (raw weights); the divergence was
    /// computed without a mass correction.
    pub mass_mismatch: bool,
}

/// Gradient of a loss with respect to the student's raw per-cell outputs.
///
/// For keypoints `d_points` has one row per cell and `2K` columns (corner
/// `k` occupies columns `2k, 2k+1`); for dense codes one row per cell and
/// `code_dim` columns. `d_weights` is with respect to the raw cell scores,
/// i.e. the weight normalization has been chained through.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub d_points: Array2<f64>,
    pub d_weights: Array1<f64>,
    pub converged: bool,
}

/// Named hyperparameter sets for the published configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Keypoints, single-object benchmark.
    LinemodKp,
    /// Keypoints, occluded / multi-object benchmarks.
    OccKp,
    /// Dense binary codes.
    Zebrapose,
}

impl Preset {
    pub fn config(self) -> SinkhornConfig {
        match self {
            Preset::LinemodKp | Preset::OccKp => SinkhornConfig::keypoint(),
            Preset::Zebrapose => SinkhornConfig::dense(),
        }
    }

    /// Weight of the distillation loss against the task losses.
    pub fn loss_weight(self) -> f64 {
        match self {
            Preset::LinemodKp => 5.0,
            Preset::OccKp => 0.1,
            Preset::Zebrapose => 100.0,
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            Preset::LinemodKp | Preset::OccKp => LossKind::OtKeypoint,
            Preset::Zebrapose => LossKind::OtDense,
        }
    }
}

/// Value of `kind` between two prediction sets.
pub fn distill_loss(
    kind: LossKind,
    student: &PredictionSet,
    teacher: &PredictionSet,
    cfg: &SinkhornConfig,
    options: &LossOptions,
) -> Result<DistillLossReport> {
    match (kind, student, teacher) {
        (LossKind::Naive, PredictionSet::Keypoints(s), PredictionSet::Keypoints(t)) => {
            naive_kd_loss_with(s, t, cfg.norm, options)
        }
        (LossKind::OtKeypoint, PredictionSet::Keypoints(s), PredictionSet::Keypoints(t)) => {
            keypoint_kd_loss_with(s, t, cfg, options)
        }
        (LossKind::OtDense, PredictionSet::DenseCodes(s), PredictionSet::DenseCodes(t)) => {
            binary_code_kd_loss_with(s, t, cfg, options)
        }
        _ => Err(kind_error(kind, student, teacher)),
    }
}

/// Gradient of `kind` with respect to the student; the teacher is constant.
pub fn loss_gradient(
    kind: LossKind,
    student: &PredictionSet,
    teacher: &PredictionSet,
    cfg: &SinkhornConfig,
    options: &LossOptions,
) -> Result<LossGradient> {
    match (kind, student, teacher) {
        (LossKind::Naive, PredictionSet::Keypoints(s), PredictionSet::Keypoints(t)) => {
            naive_kd_gradient(s, t, cfg.norm, options)
        }
        (LossKind::OtKeypoint, PredictionSet::Keypoints(s), PredictionSet::Keypoints(t)) => {
            let mut objective = KeypointObjective::new(t, cfg, options)?;
            objective.loss_and_gradient(s).map(|(_, g)| g)
        }
        (LossKind::OtDense, PredictionSet::DenseCodes(s), PredictionSet::DenseCodes(t)) => {
            let mut objective = DenseObjective::new(t, cfg, options)?;
            objective.loss_and_gradient(s).map(|(_, g)| g)
        }
        _ => Err(kind_error(kind, student, teacher)),
    }
}

fn kind_error(kind: LossKind, student: &PredictionSet, teacher: &PredictionSet) -> crate::Error {
    invalid(format!(
        "loss {kind} cannot compare {} (student) with {} (teacher)",
        student.kind_name(),
        teacher.kind_name()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_published_values() {
        let kp = Preset::LinemodKp.config();
        assert_eq!((kp.epsilon, kp.rho), (0.001, 0.5));
        assert_eq!(Preset::LinemodKp.loss_weight(), 5.0);
        assert_eq!(Preset::OccKp.loss_weight(), 0.1);
        let zp = Preset::Zebrapose.config();
        assert_eq!((zp.epsilon, zp.rho), (0.0001, 0.1));
        assert_eq!(Preset::Zebrapose.loss_weight(), 100.0);
    }
}
