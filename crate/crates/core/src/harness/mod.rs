//! Synthetic teacher/student distillation runs: tight teacher vote clusters,
//! a loose free-parameter student, first-order training against either loss,
//! and hyperparameter sweeps.

mod output;
mod random;
mod sweep;

pub use output::{scatter_rows, write_scatter_csv, write_trajectory_csv, ScatterRow};
pub use random::{
    random_dense_set, random_instance, random_keypoint_set, RANDOM_CODE_DIM, RANDOM_GRID, RANDOM_MAX_CELLS,
};
pub use sweep::{sweep, write_sweep_csv, SweepGrid, SweepRow};

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distill::{naive_kd_gradient, naive_kd_loss_with, KeypointObjective, LossKind, LossOptions};
use crate::error::{invalid, Error, Result};
use crate::ot::SinkhornConfig;
use crate::prediction::{KeypointCell, KeypointPredictionSet, BOX_CORNERS};

/// Width of the synthetic cell grid (cells are laid out row-major).
const GRID_WIDTH: i64 = 8;
/// Student cells that do not share a teacher position start at this row.
const DISJOINT_ROW_OFFSET: i64 = 1000;
const MOMENTUM: f64 = 0.9;
/// Halvings of the step size tried before a step is given up.
const MAX_BACKTRACKS: usize = 30;

/// Random-stream identifiers, so that teacher and student draws are
/// independent of each other and of the counts.
const TEACHER_STREAM: u64 = 1;
const STUDENT_STREAM: u64 = 2;

/// Generative description of one synthetic teacher/student pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub seed: u64,
    /// Projected bounding-box corners in `[0, 1]²`.
    pub gt_corners: [[f64; 2]; BOX_CORNERS],
    pub n_teacher: usize,
    pub n_student: usize,
    pub sigma_teacher: f64,
    pub sigma_student_init: f64,
    pub outlier_fraction: f64,
    /// Fraction of student cells placed on teacher grid positions.
    pub cell_overlap: f64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            seed: 0,
            gt_corners: DEFAULT_CORNERS,
            n_teacher: 20,
            n_student: 15,
            sigma_teacher: 0.005,
            sigma_student_init: 0.05,
            outlier_fraction: 0.1,
            cell_overlap: 0.5,
        }
    }
}

/// A box seen slightly from above and to the side.
const DEFAULT_CORNERS: [[f64; 2]; BOX_CORNERS] = [
    [0.30, 0.62],
    [0.58, 0.66],
    [0.60, 0.38],
    [0.32, 0.35],
    [0.40, 0.70],
    [0.70, 0.72],
    [0.71, 0.45],
    [0.42, 0.42],
];

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_teacher > 0.0 && self.sigma_student_init > 0.0) {
            return Err(invalid("vote spreads must be positive"));
        }
        if self.n_teacher == 0 || self.n_student == 0 {
            return Err(invalid("cell counts must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(invalid(format!("outlier fraction {} is outside [0, 1)", self.outlier_fraction)));
        }
        if !(0.0..=1.0).contains(&self.cell_overlap) {
            return Err(invalid(format!("cell overlap {} is outside [0, 1]", self.cell_overlap)));
        }
        if self.gt_corners.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("ground-truth corners must be finite"));
        }
        Ok(())
    }

    /// Number of teacher cells turned into low-confidence outliers.
    pub fn outlier_count(&self) -> usize {
        (self.outlier_fraction * self.n_teacher as f64).floor() as usize
    }

    /// Number of student cells sharing a teacher grid position.
    pub fn shared_cells(&self) -> usize {
        ((self.cell_overlap * self.n_student as f64).round() as usize).min(self.n_teacher)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

fn grid_position(i: usize) -> [i64; 2] {
    [i as i64 % GRID_WIDTH, i as i64 / GRID_WIDTH]
}

/// Teacher predictions: every vote is its ground-truth corner plus isotropic
/// Gaussian noise; scores are drawn in `[0.7, 1]`. A `floor(outlier_fraction
/// · n_teacher)` subset of cells instead votes 10–20 spreads away from the
/// corners with scores in `[0, 0.3]`.
pub fn generate_teacher(s: &SyntheticScenario) -> Result<KeypointPredictionSet> {
    s.validate()?;
    let mut rng = s.rng(TEACHER_STREAM);
    let noise = Normal::new(0.0, s.sigma_teacher).map_err(|e| invalid(e.to_string()))?;
    let mut outlier = vec![false; s.n_teacher];
    for i in sample(&mut rng, s.n_teacher, s.outlier_count()).iter() {
        outlier[i] = true;
    }
    let cells = (0..s.n_teacher)
        .map(|i| {
            let votes = s
                .gt_corners
                .iter()
                .map(|gt| {
                    if outlier[i] {
                        let r = rng.gen_range(10.0..=20.0) * s.sigma_teacher;
                        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                        [gt[0] + r * angle.cos(), gt[1] + r * angle.sin()]
                    } else {
                        [gt[0] + noise.sample(&mut rng), gt[1] + noise.sample(&mut rng)]
                    }
                })
                .collect();
            let score = if outlier[i] {
                rng.gen_range(0.0..=0.3)
            } else {
                rng.gen_range(0.7..=1.0)
            };
            KeypointCell {
                cell_xy: grid_position(i),
                score,
                votes,
            }
        })
        .collect();
    KeypointPredictionSet::new([1.0, 1.0], BOX_CORNERS, cells)
}

/// Free per-cell student parameters: votes and score logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub cell_xy: Vec<[i64; 2]>,
    /// `votes[cell][corner]`.
    pub votes: Vec<Vec<[f64; 2]>>,
    pub score_logits: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl StudentModel {
    /// Votes are the ground-truth corners plus `sigma_student_init` noise;
    /// `shared_cells()` of them sit on teacher grid positions, the rest on
    /// positions the teacher never uses. Initial scores lie in `[0.73, 0.95]`.
    pub fn initialize(s: &SyntheticScenario) -> Result<Self> {
        s.validate()?;
        let mut rng = s.rng(STUDENT_STREAM);
        let noise = Normal::new(0.0, s.sigma_student_init).map_err(|e| invalid(e.to_string()))?;
        let shared = s.shared_cells();
        let positions = sample(&mut rng, s.n_teacher, shared).into_vec();
        let cell_xy = (0..s.n_student)
            .map(|i| match positions.get(i) {
                Some(&p) => grid_position(p),
                None => {
                    let [x, y] = grid_position(i);
                    [x, y + DISJOINT_ROW_OFFSET]
                }
            })
            .collect();
        let votes = (0..s.n_student)
            .map(|_| {
                s.gt_corners
                    .iter()
                    .map(|gt| [gt[0] + noise.sample(&mut rng), gt[1] + noise.sample(&mut rng)])
                    .collect()
            })
            .collect();
        let score_logits = (0..s.n_student).map(|_| rng.gen_range(1.0..=3.0)).collect();
        Ok(Self {
            cell_xy,
            votes,
            score_logits,
        })
    }

    /// A student whose cells, votes and scores copy the given predictions.
    pub fn from_predictions(set: &KeypointPredictionSet) -> Self {
        Self {
            cell_xy: set.cells.iter().map(|c| c.cell_xy).collect(),
            votes: set.cells.iter().map(|c| c.votes.clone()).collect(),
            score_logits: set
                .cells
                .iter()
                .map(|c| {
                    let p = c.score.clamp(1e-12, 1.0 - 1e-12);
                    (p / (1.0 - p)).ln()
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.score_logits.iter().map(|&x| sigmoid(x)).collect()
    }

    pub fn to_predictions(&self) -> Result<KeypointPredictionSet> {
        let k = self.votes.first().map_or(BOX_CORNERS, Vec::len);
        let cells = self
            .cell_xy
            .iter()
            .zip(&self.votes)
            .zip(self.scores())
            .map(|((&cell_xy, votes), score)| KeypointCell {
                cell_xy,
                score,
                votes: votes.clone(),
            })
            .collect();
        KeypointPredictionSet::new([1.0, 1.0], k, cells)
    }

    fn parameters(&self) -> Vec<f64> {
        self.votes
            .iter()
            .flatten()
            .flatten()
            .copied()
            .chain(self.score_logits.iter().copied())
            .collect()
    }

    fn with_parameters(&self, theta: &[f64]) -> Self {
        let mut out = self.clone();
        let mut it = theta.iter();
        for v in out.votes.iter_mut().flatten().flatten() {
            *v = *it.next().expect("parameter length");
        }
        for l in &mut out.score_logits {
            *l = *it.next().expect("parameter length");
        }
        out
    }

    fn is_finite(&self) -> bool {
        self.parameters().iter().all(|x| x.is_finite())
    }
}

/// One training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub loss: f64,
    /// Debiased keypoint divergence to the teacher at the published
    /// keypoint hyperparameters.
    pub divergence: f64,
    pub corner_error: f64,
    /// Milliseconds since the start of training (0 unless timing is on).
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillTrajectory {
    pub records: Vec<TrajectoryRecord>,
}

/// Everything a training run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub loss_kind: LossKind,
    pub trajectory: DistillTrajectory,
    pub initial: StudentModel,
    pub final_model: StudentModel,
    /// Set when the run stopped early on a non-finite or failed evaluation.
    pub failure: Option<String>,
}

/// Settings of [`train_student`] beyond the loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub step_size: f64,
    /// Record elapsed wall time; off keeps outputs bit-reproducible.
    pub record_wallclock: bool,
    pub loss_options: LossOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            step_size: DEFAULT_STEP_SIZE,
            record_wallclock: false,
            loss_options: LossOptions::default(),
        }
    }
}

/// Default learning rate for the synthetic student.
pub const DEFAULT_STEP_SIZE: f64 = 1.0;

/// Mean over corners of the distance between the score-weighted vote
/// centroid and the ground-truth corner.
pub fn mean_corner_error(set: &KeypointPredictionSet, gt: &[[f64; 2]]) -> f64 {
    let total: f64 = set.cells.iter().map(|c| c.score).sum();
    if !(total > 0.0) || gt.is_empty() {
        return f64::NAN;
    }
    let err: f64 = gt
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let (mut x, mut y) = (0.0, 0.0);
            for c in &set.cells {
                x += c.score * c.votes[k][0];
                y += c.score * c.votes[k][1];
            }
            ((x / total - g[0]).powi(2) + (y / total - g[1]).powi(2)).sqrt()
        })
        .sum();
    err / gt.len() as f64
}

/// `(mean_corner_error, divergence_to_teacher)` of a student.
pub fn evaluate(model: &StudentModel, s: &SyntheticScenario) -> Result<(f64, f64)> {
    let teacher = generate_teacher(s)?;
    let mut divergence = KeypointObjective::new(&teacher, &SinkhornConfig::keypoint(), &LossOptions::default())?;
    evaluate_against(model, s, &mut divergence)
}

fn evaluate_against(model: &StudentModel, s: &SyntheticScenario, divergence: &mut KeypointObjective) -> Result<(f64, f64)> {
    if model.votes.iter().any(|v| v.len() != s.gt_corners.len()) {
        return Err(invalid("student keypoint count does not match the scenario"));
    }
    let set = model.to_predictions()?;
    Ok((mean_corner_error(&set, &s.gt_corners), divergence.loss_warm(&set)?.total))
}

enum Trainer {
    Naive {
        teacher: KeypointPredictionSet,
        cfg: SinkhornConfig,
        options: LossOptions,
    },
    Transport(Box<KeypointObjective>),
}

impl Trainer {
    /// Loss and gradient with respect to the model parameters (votes, then
    /// score logits).
    fn evaluate(&mut self, model: &StudentModel) -> Result<(f64, Vec<f64>)> {
        let set = model.to_predictions()?;
        let (loss, grad) = match self {
            Trainer::Naive { teacher, cfg, options } => (
                naive_kd_loss_with(&set, teacher, cfg.norm, options)?.total,
                naive_kd_gradient(&set, teacher, cfg.norm, options)?,
            ),
            Trainer::Transport(objective) => {
                let (report, grad) = objective.loss_and_gradient(&set)?;
                (report.total, grad)
            }
        };
        let mut flat: Vec<f64> = grad.d_points.iter().copied().collect();
        for (d, p) in grad.d_weights.iter().zip(model.scores()) {
            flat.push(d * p * (1.0 - p));
        }
        if !loss.is_finite() || flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("training loss or gradient".into()));
        }
        Ok((loss, flat))
    }
}

/// Trains a fresh student against the teacher of `s` with heavy-ball
/// momentum. A step that would increase the loss is retried with half the
/// step size (which then persists) and the momentum reset, so the recorded
/// training loss never increases.
pub fn train_student(
    s: &SyntheticScenario,
    loss_kind: LossKind,
    cfg: &SinkhornConfig,
    options: &TrainOptions,
) -> Result<TrainingRun> {
    train_student_from(s, StudentModel::initialize(s)?, loss_kind, cfg, options)
}

/// [`train_student`] from a given initial model.
pub fn train_student_from(
    s: &SyntheticScenario,
    initial: StudentModel,
    loss_kind: LossKind,
    cfg: &SinkhornConfig,
    options: &TrainOptions,
) -> Result<TrainingRun> {
    if initial.is_empty()
        || initial.cell_xy.len() != initial.len()
        || initial.score_logits.len() != initial.len()
        || initial.votes.iter().any(|v| v.len() != s.gt_corners.len())
    {
        return Err(invalid("initial student does not match the scenario"));
    }
    if options.steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    if !(options.step_size > 0.0 && options.step_size.is_finite()) {
        return Err(invalid(format!("step size must be positive, got {}", options.step_size)));
    }
    let teacher = generate_teacher(s)?;
    let reference = SinkhornConfig::keypoint();
    let mut divergence = KeypointObjective::new(&teacher, &reference, &LossOptions::default())?;
    let divergence_is_loss = loss_kind == LossKind::OtKeypoint && *cfg == reference && options.loss_options == LossOptions::default();
    let mut trainer = match loss_kind {
        LossKind::Naive => Trainer::Naive {
            teacher: teacher.clone(),
            cfg: *cfg,
            options: options.loss_options,
        },
        LossKind::OtKeypoint => Trainer::Transport(Box::new(KeypointObjective::new(&teacher, cfg, &options.loss_options)?)),
        LossKind::OtDense => return Err(invalid("the synthetic student predicts keypoints; use naive or ot-keypoint")),
    };

    let start = Instant::now();
    let mut model = initial.clone();
    let mut records = Vec::with_capacity(options.steps);
    let mut failure = None;
    let mut eta = options.step_size;
    let mut velocity = vec![0.0; model.parameters().len()];

    let mut current = trainer.evaluate(&model);
    // Divergence and corner error of the last evaluated model, reused while
    // the model does not move.
    let mut measured: Option<(StudentModel, (f64, f64))> = None;
    for step in 0..options.steps {
        let (loss, grad) = match current {
            Ok(v) => v,
            Err(e) => {
                failure = Some(format!("step {step}: {e}"));
                break;
            }
        };
        let (corner_error, div) = if divergence_is_loss {
            (mean_corner_error(&model.to_predictions()?, &s.gt_corners), loss)
        } else if let Some((_, v)) = measured.as_ref().filter(|(m, _)| *m == model) {
            *v
        } else {
            match evaluate_against(&model, s, &mut divergence) {
                Ok(v) => {
                    measured = Some((model.clone(), v));
                    v
                }
                Err(e) => {
                    failure = Some(format!("step {step}: {e}"));
                    break;
                }
            }
        };
        records.push(TrajectoryRecord {
            step,
            loss,
            divergence: div,
            corner_error,
            wallclock_ms: if options.record_wallclock {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
        if step + 1 == options.steps {
            break;
        }

        // Heavy-ball step with backtracking on loss increase.
        let theta = model.parameters();
        let mut next = None;
        for _ in 0..MAX_BACKTRACKS {
            let v: Vec<f64> = velocity.iter().zip(&grad).map(|(v, g)| MOMENTUM * v - eta * g).collect();
            let candidate = model.with_parameters(&theta.iter().zip(&v).map(|(t, d)| t + d).collect::<Vec<_>>());
            if !candidate.is_finite() {
                eta *= 0.5;
                velocity.iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            match trainer.evaluate(&candidate) {
                Ok((l, g)) if l <= loss => {
                    velocity = v;
                    next = Some((candidate, Ok((l, g))));
                    break;
                }
                _ => {
                    eta *= 0.5;
                    velocity.iter_mut().for_each(|x| *x = 0.0);
                }
            }
        }
        match next {
            Some((m, eval)) => {
                model = m;
                current = eval;
            }
            None => {
                // No decrease found: stay put (the gradient is numerically zero).
                current = Ok((loss, grad));
            }
        }
    }

    Ok(TrainingRun {
        loss_kind,
        trajectory: DistillTrajectory { records },
        initial,
        final_model: model,
        failure,
    })
}
