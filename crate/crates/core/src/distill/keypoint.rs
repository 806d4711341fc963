//! Per-corner transport loss between keypoint vote clouds: one unbalanced
//! transport problem per keypoint, all sharing the same per-cell masses.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::ot_term::{chain_unit_mass, evaluate_term, TeacherCloud, WarmStart};
use super::{DistillLossReport, LossGradient, LossOptions};
use crate::error::{invalid, Error, Result};
use crate::ot::SinkhornConfig;
use crate::points::{normalize_weights, PreparedWeights, WeightMode, WeightedPointSet};
use crate::prediction::KeypointPredictionSet;

/// The keypoint loss against a fixed teacher. Teacher clouds and teacher
/// self-terms are computed once; [`Self::loss_and_gradient`] additionally
/// warm-starts every solve from the previous call.
#[derive(Debug, Clone)]
pub struct KeypointObjective {
    cfg: SinkhornConfig,
    options: LossOptions,
    num_keypoints: usize,
    teacher: Vec<TeacherCloud>,
    warm: Vec<WarmStart>,
}

impl KeypointObjective {
    pub fn new(teacher: &KeypointPredictionSet, cfg: &SinkhornConfig, options: &LossOptions) -> Result<Self> {
        cfg.validate()?;
        check_set("teacher", teacher, options)?;
        let prepared = prepare("teacher", teacher, options)?;
        let teacher = (0..teacher.num_keypoints)
            .into_par_iter()
            .map(|k| TeacherCloud::new(corner_cloud(teacher, k, &prepared)?, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: *cfg,
            options: *options,
            num_keypoints: teacher.len(),
            warm: vec![WarmStart::default(); teacher.len()],
            teacher,
        })
    }

    pub fn config(&self) -> &SinkhornConfig {
        &self.cfg
    }

    /// Loss value from cold-started solves.
    pub fn loss(&self, student: &KeypointPredictionSet) -> Result<DistillLossReport> {
        let mut warm = vec![WarmStart::default(); self.num_keypoints];
        self.run(student, &mut warm, false).map(|(r, _)| r)
    }

    /// Loss value, warm-started from (and updating) the stored potentials.
    pub fn loss_warm(&mut self, student: &KeypointPredictionSet) -> Result<DistillLossReport> {
        let mut warm = std::mem::take(&mut self.warm);
        let out = self.run(student, &mut warm, false);
        self.warm = warm;
        out.map(|(r, _)| r)
    }

    /// Loss value and gradient with respect to the student's votes and raw
    /// scores.
    pub fn loss_and_gradient(&mut self, student: &KeypointPredictionSet) -> Result<(DistillLossReport, LossGradient)> {
        let mut warm = std::mem::take(&mut self.warm);
        let out = self.run(student, &mut warm, true);
        self.warm = warm;
        out.map(|(r, g)| (r, g.expect("gradient requested")))
    }

    /// Forgets the warm-start potentials.
    pub fn reset_warm_start(&mut self) {
        self.warm = vec![WarmStart::default(); self.num_keypoints];
    }

    fn run(
        &self,
        student: &KeypointPredictionSet,
        warm: &mut [WarmStart],
        grad: bool,
    ) -> Result<(DistillLossReport, Option<LossGradient>)> {
        check_set("student", student, &self.options)?;
        if student.num_keypoints != self.num_keypoints {
            return Err(invalid(format!(
                "student has {} keypoints, teacher {}",
                student.num_keypoints, self.num_keypoints
            )));
        }
        let prepared = prepare("student", student, &self.options)?;
        let terms = self
            .teacher
            .par_iter()
            .zip(warm.par_iter_mut())
            .enumerate()
            .map(|(k, (teacher, warm))| {
                let cloud = corner_cloud(student, k, &prepared)?;
                evaluate_term(&cloud, teacher, &self.cfg, Some(warm), grad)
            })
            .collect::<Result<Vec<_>>>()?;

        let per_corner: Vec<f64> = terms.iter().map(|(t, _)| t.value).collect();
        // Summed in sorted order, so relabelling the corners cannot change
        // even the last bit of the total.
        let mut sorted = per_corner.clone();
        sorted.sort_by(f64::total_cmp);
        let report = DistillLossReport {
            total: sorted.iter().sum(),
            per_corner,
            summaries: terms.iter().flat_map(|(t, _)| t.summaries.iter().copied()).collect(),
            matched_cells: 0,
            converged: terms.iter().all(|(t, _)| t.converged),
            mass_mismatch: terms.iter().any(|(t, _)| t.mass_mismatch),
        };
        if !report.total.is_finite() {
            return Err(Error::NonFinite("keypoint loss".into()));
        }
        if !grad {
            return Ok((report, None));
        }

        let n = student.cells.len();
        let mut d_points = Array2::zeros((n, 2 * self.num_keypoints));
        let mut d_prepared = vec![0.0; prepared.kept.len()];
        for (k, (_, g)) in terms.iter().enumerate() {
            let g = g.as_ref().expect("gradient requested");
            for (row, &cell) in prepared.kept.iter().enumerate() {
                d_points[[cell, 2 * k]] = g.d_points[[row, 0]];
                d_points[[cell, 2 * k + 1]] = g.d_points[[row, 1]];
                d_prepared[row] += g.d_weights[row];
            }
        }
        let d_weights = scatter_weight_gradient(&d_prepared, &prepared, self.options.weight_mode, n);
        let converged = report.converged;
        Ok((
            report,
            Some(LossGradient {
                d_points,
                d_weights: Array1::from(d_weights),
                converged,
            }),
        ))
    }
}

/// Sum over keypoints of the (by default debiased) unbalanced transport
/// loss between the student's and teacher's vote clouds.
pub fn keypoint_kd_loss(
    student: &KeypointPredictionSet,
    teacher: &KeypointPredictionSet,
    cfg: &SinkhornConfig,
) -> Result<DistillLossReport> {
    keypoint_kd_loss_with(student, teacher, cfg, &LossOptions::default())
}

pub fn keypoint_kd_loss_with(
    student: &KeypointPredictionSet,
    teacher: &KeypointPredictionSet,
    cfg: &SinkhornConfig,
    options: &LossOptions,
) -> Result<DistillLossReport> {
    KeypointObjective::new(teacher, cfg, options)?.loss(student)
}

pub(crate) fn scatter_weight_gradient(
    d_prepared: &[f64],
    prepared: &PreparedWeights,
    mode: WeightMode,
    n: usize,
) -> Vec<f64> {
    match mode {
        WeightMode::UnitMass => chain_unit_mass(d_prepared, &prepared.weights, &prepared.kept, prepared.kept_mass, n),
        WeightMode::Raw => {
            let mut out = vec![0.0; n];
            for (g, &i) in d_prepared.iter().zip(&prepared.kept) {
                out[i] = *g;
            }
            out
        }
    }
}

pub(crate) fn side_error(side: &str, err: Error) -> Error {
    match err {
        Error::EmptyDistribution(msg) => Error::EmptyDistribution(format!("{side}: {msg}")),
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{side}: {msg}")),
        other => other,
    }
}

fn check_set(side: &str, set: &KeypointPredictionSet, options: &LossOptions) -> Result<()> {
    set.check_shape().map_err(|e| side_error(side, e))?;
    if set.cells.is_empty() {
        return Err(Error::EmptyDistribution(format!("{side}: prediction set has no cells")));
    }
    let m = set.max_vote_magnitude();
    if m > options.vote_bound {
        return Err(invalid(format!(
            "{side}: vote magnitude {m} exceeds {}; normalize keypoints by the image size first",
            options.vote_bound
        )));
    }
    Ok(())
}

fn prepare(side: &str, set: &KeypointPredictionSet, options: &LossOptions) -> Result<PreparedWeights> {
    normalize_weights(&set.scores(), options.weight_mode, options.weight_floor).map_err(|e| side_error(side, e))
}

fn corner_cloud(set: &KeypointPredictionSet, k: usize, prepared: &PreparedWeights) -> Result<WeightedPointSet> {
    let points = Array2::from_shape_fn((prepared.kept.len(), 2), |(i, d)| set.cells[prepared.kept[i]].votes[k][d]);
    WeightedPointSet::new(points, Array1::from(prepared.weights.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::KeypointCell;

    fn single(votes: Vec<[f64; 2]>) -> KeypointPredictionSet {
        KeypointPredictionSet::new(
            [1.0, 1.0],
            votes.len(),
            vec![KeypointCell {
                cell_xy: [0, 0],
                score: 1.0,
                votes,
            }],
        )
        .unwrap()
    }

    #[test]
    fn singleton_loss_has_closed_form() {
        // One cell per side: the plan mass solves a scalar problem whose
        // optimum gives (ε² + 2ρ²)(1 − exp(−d / (ε² + 2ρ²))).
        let cfg = SinkhornConfig::keypoint();
        let s = single(vec![[0.1, 0.2]]);
        let t = single(vec![[0.1, 0.5]]);
        let r = keypoint_kd_loss(&s, &t, &cfg).unwrap();
        let scale = cfg.epsilon.powi(2) + 2.0 * cfg.rho.powi(2);
        let expected = scale * (1.0 - (-0.3_f64 / scale).exp());
        assert!((r.total - expected).abs() < 1e-12, "{} vs {expected}", r.total);
        assert!(r.converged);
    }

    #[test]
    fn singleton_loss_approaches_distance_when_marginals_are_tight() {
        let cfg = SinkhornConfig::keypoint().with_eps_rho(1e-3, 1e4);
        let r = keypoint_kd_loss(&single(vec![[0.0, 0.0]]), &single(vec![[0.3, 0.0]]), &cfg).unwrap();
        assert!((r.total - 0.3).abs() < 1e-9);
    }

    #[test]
    fn identical_sets_give_zero() {
        let set = KeypointPredictionSet::new(
            [1.0, 1.0],
            2,
            (0..5)
                .map(|i| KeypointCell {
                    cell_xy: [i, 0],
                    score: 0.2 + 0.15 * i as f64,
                    votes: vec![[0.1 * i as f64, 0.3], [0.5, 0.05 * i as f64]],
                })
                .collect(),
        )
        .unwrap();
        let r = keypoint_kd_loss(&set, &set, &SinkhornConfig::keypoint()).unwrap();
        assert!(r.total.abs() < 2e-8);
        assert_eq!(r.per_corner.len(), 2);
        assert_eq!(r.summaries.len(), 6);
    }

    #[test]
    fn empty_side_is_named() {
        let zero = KeypointPredictionSet::new(
            [1.0, 1.0],
            1,
            vec![KeypointCell {
                cell_xy: [0, 0],
                score: 0.0,
                votes: vec![[0.0, 0.0]],
            }],
        )
        .unwrap();
        let ok = single(vec![[0.5, 0.5]]);
        match keypoint_kd_loss(&zero, &ok, &SinkhornConfig::keypoint()) {
            Err(Error::EmptyDistribution(msg)) => assert!(msg.starts_with("student")),
            other => panic!("unexpected {other:?}"),
        }
        match keypoint_kd_loss(&ok, &zero, &SinkhornConfig::keypoint()) {
            Err(Error::EmptyDistribution(msg)) => assert!(msg.starts_with("teacher")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unnormalized_votes() {
        let mut pixels = single(vec![[320.0, 240.0]]);
        pixels.image_size = [640.0, 480.0];
        let ok = single(vec![[0.5, 0.5]]);
        assert!(matches!(
            keypoint_kd_loss(&pixels, &ok, &SinkhornConfig::keypoint()),
            Err(Error::InvalidInput(_))
        ));
        assert!(keypoint_kd_loss(&pixels.normalize_keypoints().unwrap(), &ok, &SinkhornConfig::keypoint()).is_ok());
    }
}
