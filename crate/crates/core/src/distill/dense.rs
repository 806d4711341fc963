//! Transport loss between pooled dense binary-code predictions.

use ndarray::{Array1, Array2, Axis};

use super::keypoint::{scatter_weight_gradient, side_error};
use super::ot_term::{evaluate_term, TeacherCloud, WarmStart};
use super::{DistillLossReport, LossGradient, LossOptions};
use crate::error::{invalid, Error, Result};
use crate::ot::SinkhornConfig;
use crate::points::{normalize_weights, PreparedWeights, WeightedPointSet};
use crate::prediction::{pool_dense_tiles, DenseCodePredictionSet, PooledCodes};

/// The dense loss against a fixed teacher; see
/// [`super::KeypointObjective`] for the caching behaviour.
#[derive(Debug, Clone)]
pub struct DenseObjective {
    cfg: SinkhornConfig,
    options: LossOptions,
    grid_size: [usize; 2],
    code_dim: usize,
    teacher: TeacherCloud,
    warm: WarmStart,
}

struct PreparedCloud {
    pooled: PooledCodes,
    prepared: PreparedWeights,
    cloud: WeightedPointSet,
}

fn prepare(side: &str, set: &DenseCodePredictionSet, options: &LossOptions) -> Result<PreparedCloud> {
    set.check_shape().map_err(|e| side_error(side, e))?;
    let pooled = pool_dense_tiles(set, options.block, options.coord_scale).map_err(|e| side_error(side, e))?;
    let prepared = normalize_weights(&pooled.set.weights().to_vec(), options.weight_mode, options.weight_floor)
        .map_err(|e| side_error(side, e))?;
    let points = pooled.set.points().select(Axis(0), &prepared.kept);
    let cloud = WeightedPointSet::new(points, Array1::from(prepared.weights.clone()))?;
    Ok(PreparedCloud { pooled, prepared, cloud })
}

impl DenseObjective {
    pub fn new(teacher: &DenseCodePredictionSet, cfg: &SinkhornConfig, options: &LossOptions) -> Result<Self> {
        cfg.validate()?;
        let prepared = prepare("teacher", teacher, options)?;
        Ok(Self {
            cfg: *cfg,
            options: *options,
            grid_size: teacher.grid_size,
            code_dim: teacher.code_dim,
            teacher: TeacherCloud::new(prepared.cloud, cfg)?,
            warm: WarmStart::default(),
        })
    }

    pub fn loss(&self, student: &DenseCodePredictionSet) -> Result<DistillLossReport> {
        self.run(student, &mut WarmStart::default(), false).map(|(r, _)| r)
    }

    /// Loss and gradient with respect to the student's per-cell code values
    /// and raw scores.
    pub fn loss_and_gradient(&mut self, student: &DenseCodePredictionSet) -> Result<(DistillLossReport, LossGradient)> {
        let mut warm = std::mem::take(&mut self.warm);
        let out = self.run(student, &mut warm, true);
        self.warm = warm;
        out.map(|(r, g)| (r, g.expect("gradient requested")))
    }

    fn run(
        &self,
        student: &DenseCodePredictionSet,
        warm: &mut WarmStart,
        grad: bool,
    ) -> Result<(DistillLossReport, Option<LossGradient>)> {
        if student.grid_size != self.grid_size || student.code_dim != self.code_dim {
            return Err(invalid(format!(
                "student grid {:?} with {} channels does not match teacher grid {:?} with {}",
                student.grid_size, student.code_dim, self.grid_size, self.code_dim
            )));
        }
        let side = prepare("student", student, &self.options)?;
        let (term, gradient) = evaluate_term(&side.cloud, &self.teacher, &self.cfg, Some(warm), grad)?;
        if !term.value.is_finite() {
            return Err(Error::NonFinite("dense loss".into()));
        }
        let report = DistillLossReport {
            total: term.value,
            per_corner: Vec::new(),
            summaries: term.summaries,
            matched_cells: 0,
            converged: term.converged,
            mass_mismatch: term.mass_mismatch,
        };
        let Some(g) = gradient else {
            return Ok((report, None));
        };

        let area = (self.options.block * self.options.block) as f64;
        let n = student.cells.len();
        let tiles = side.pooled.tiles.len();
        let mut d_points = Array2::zeros((n, self.code_dim));
        for (row, &tile) in side.prepared.kept.iter().enumerate() {
            for &cell in &side.pooled.tiles[tile] {
                for d in 0..self.code_dim {
                    d_points[[cell, d]] = g.d_points[[row, d]] / area;
                }
            }
        }
        let d_tiles = scatter_weight_gradient(&g.d_weights, &side.prepared, self.options.weight_mode, tiles);
        let mut d_weights = Array1::zeros(n);
        for (tile, members) in side.pooled.tiles.iter().enumerate() {
            for &cell in members {
                d_weights[cell] = d_tiles[tile] / area;
            }
        }
        let converged = report.converged;
        Ok((
            report,
            Some(LossGradient {
                d_points,
                d_weights,
                converged,
            }),
        ))
    }
}

/// Single transport solve between the pooled, coordinate-augmented code
/// clouds (pooling size `block`).
pub fn binary_code_kd_loss(
    student: &DenseCodePredictionSet,
    teacher: &DenseCodePredictionSet,
    cfg: &SinkhornConfig,
    block: usize,
) -> Result<DistillLossReport> {
    let options = LossOptions {
        block,
        ..LossOptions::default()
    };
    binary_code_kd_loss_with(student, teacher, cfg, &options)
}

pub fn binary_code_kd_loss_with(
    student: &DenseCodePredictionSet,
    teacher: &DenseCodePredictionSet,
    cfg: &SinkhornConfig,
    options: &LossOptions,
) -> Result<DistillLossReport> {
    DenseObjective::new(teacher, cfg, options)?.loss(student)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::DenseCell;

    fn grid(w: usize, h: usize, f: impl Fn(usize, usize) -> DenseCell) -> DenseCodePredictionSet {
        let cells = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        DenseCodePredictionSet::new([w, h], 4, cells).unwrap()
    }

    #[test]
    fn identical_sets_give_zero() {
        let set = grid(16, 16, |x, y| DenseCell {
            score: 0.5 + 0.5 * ((x + y) % 2) as f64,
            code: vec![0.05, 0.95, (x as f64) / 16.0, (y as f64) / 16.0],
        });
        let r = binary_code_kd_loss(&set, &set, &SinkhornConfig::dense(), 8).unwrap();
        assert!(r.total.abs() < 1e-8, "{}", r.total);
    }

    #[test]
    fn single_tile_matches_singleton_closed_form() {
        let s = grid(8, 8, |_, _| DenseCell {
            score: 1.0,
            code: vec![0.2, 0.2, 0.2, 0.2],
        });
        let t = grid(8, 8, |_, _| DenseCell {
            score: 1.0,
            code: vec![0.7, 0.2, 0.2, 0.2],
        });
        let cfg = SinkhornConfig::dense();
        let scale = cfg.epsilon.powi(2) + 2.0 * cfg.rho.powi(2);
        let r = binary_code_kd_loss(&s, &t, &cfg, 8).unwrap();
        assert!((r.total - scale * (1.0 - (-0.5_f64 / scale).exp())).abs() < 1e-12);
        let tight = cfg.with_eps_rho(1e-4, 1e4);
        let r = binary_code_kd_loss(&s, &t, &tight, 8).unwrap();
        assert!((r.total - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_grid_mismatch() {
        let a = grid(8, 8, |_, _| DenseCell {
            score: 1.0,
            code: vec![0.0; 4],
        });
        let b = grid(16, 8, |_, _| DenseCell {
            score: 1.0,
            code: vec![0.0; 4],
        });
        assert!(matches!(
            binary_code_kd_loss(&a, &b, &SinkhornConfig::dense(), 8),
            Err(Error::InvalidInput(_))
        ));
    }
}
