use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::points::WeightedPointSet;

/// Exponent `p` of the ground-cost norm `‖x − y‖_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Norm {
    L1,
    #[default]
    L2,
}

impl Norm {
    pub fn from_exponent(p: u32) -> Result<Self> {
        match p {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            _ => Err(invalid(format!("norm exponent must be 1 or 2, got {p}"))),
        }
    }

    pub fn exponent(self) -> u32 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }

    /// `‖x − y‖_p`.
    pub fn distance(self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        let pairs = x.iter().zip(y.iter());
        match self {
            Norm::L1 => pairs.map(|(a, b)| (a - b).abs()).sum(),
            Norm::L2 => pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        }
    }

    /// Gradient of `‖x − y‖_p` with respect to `x`, accumulated into `out`
    /// scaled by `scale`. The subgradient at `x == y` is taken as zero.
    pub fn accumulate_gradient(
        self,
        x: ArrayView1<'_, f64>,
        y: ArrayView1<'_, f64>,
        scale: f64,
        out: &mut [f64],
    ) {
        match self {
            Norm::L1 => {
                for ((o, a), b) in out.iter_mut().zip(x.iter()).zip(y.iter()) {
                    let d = a - b;
                    if d != 0.0 {
                        *o += scale * d.signum();
                    }
                }
            }
            Norm::L2 => {
                let dist = self.distance(x, y);
                if dist > 0.0 {
                    for ((o, a), b) in out.iter_mut().zip(x.iter()).zip(y.iter()) {
                        *o += scale * (a - b) / dist;
                    }
                }
            }
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "l{}", self.exponent())
    }
}

/// Pairwise ground costs `C_ij = ‖x_i − y_j‖_p` (a distance, not its power).
pub fn cost_matrix(x: &WeightedPointSet, y: &WeightedPointSet, norm: Norm) -> Result<Array2<f64>> {
    if x.dim() != y.dim() {
        return Err(Error::InvalidInput(format!(
            "point dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(Array2::from_shape_fn((x.len(), y.len()), |(i, j)| {
        norm.distance(x.point(i), y.point(j))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: &[f64]) -> WeightedPointSet {
        WeightedPointSet::from_rows(&[p.to_vec()], &[1.0]).unwrap()
    }

    #[test]
    fn three_four_five() {
        let c = cost_matrix(&single(&[0.0, 0.0]), &single(&[3.0, 4.0]), Norm::L2).unwrap();
        assert_eq!(c[[0, 0]], 5.0);
        let c = cost_matrix(&single(&[0.0, 0.0]), &single(&[3.0, 4.0]), Norm::L1).unwrap();
        assert_eq!(c[[0, 0]], 7.0);
    }

    #[test]
    fn zero_diagonal_for_identical_sets() {
        let x = WeightedPointSet::from_rows(
            &[vec![0.1, 0.2], vec![0.7, -0.3], vec![2.0, 5.0]],
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        for norm in [Norm::L1, Norm::L2] {
            let c = cost_matrix(&x, &x, norm).unwrap();
            for i in 0..3 {
                assert_eq!(c[[i, i]], 0.0);
            }
            assert!(c.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = cost_matrix(&single(&[0.0, 0.0]), &single(&[0.0, 0.0, 0.0]), Norm::L2);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn exponent_parsing() {
        assert_eq!(Norm::from_exponent(2).unwrap(), Norm::L2);
        assert!(Norm::from_exponent(3).is_err());
    }
}
