//! Weighted point clouds, the common input of every transport problem.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Weights below this value (after unit-mass normalization) are dropped.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-6;

/// How per-point masses are prepared before a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Drop sub-floor weights, then rescale the rest to total mass one.
    #[default]
    UnitMass,
    /// Pass weights through untouched.
    Raw,
}

/// `N` points in `D` dimensions with a nonnegative mass per point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPointSet {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl WeightedPointSet {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptyDistribution("point set has no points".into()));
        }
        if points.ncols() == 0 {
            return Err(invalid("points must have dimension >= 1"));
        }
        if points.nrows() != weights.len() {
            return Err(invalid(format!(
                "{} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        if let Some(x) = points.iter().find(|x| !x.is_finite()) {
            return Err(invalid(format!("non-finite point component {x}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(invalid(format!("weight {w} is negative or non-finite")));
        }
        Ok(Self { points, weights })
    }

    /// Builds a set from row vectors; all rows must share one dimension.
    pub fn from_rows(rows: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("points have inconsistent dimensions"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), dim), flat)
            .map_err(|e| invalid(e.to_string()))?;
        Self::new(points, Array1::from(weights.to_vec()))
    }

    /// Every point gets mass `1/N`.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows().max(1);
        let weights = Array1::from_elem(points.nrows(), 1.0 / n as f64);
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.sum()
    }

    /// Same points, new weights.
    pub fn with_weights(&self, weights: Array1<f64>) -> Result<Self> {
        Self::new(self.points.clone(), weights)
    }

    /// Adds `shift` to every point.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim() {
            return Err(invalid("shift dimension mismatch"));
        }
        let mut points = self.points.clone();
        for mut row in points.axis_iter_mut(Axis(0)) {
            for (x, s) in row.iter_mut().zip(shift) {
                *x += s;
            }
        }
        Self::new(points, self.weights.clone())
    }

    /// Reorders points and weights together: output row `k` is input row `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() || order.iter().any(|&i| i >= self.len()) {
            return Err(invalid("permutation does not match set size"));
        }
        let points = self.points.select(Axis(0), order);
        let weights = order.iter().map(|&i| self.weights[i]).collect();
        Self::new(points, weights)
    }

    /// Applies [`normalize_weights`] and drops the points whose weight was
    /// dropped. Returns the surviving set and the original indices it kept.
    pub fn normalized(&self, mode: WeightMode, floor: f64) -> Result<(Self, Vec<usize>)> {
        let prepared = normalize_weights(&self.weights.to_vec(), mode, floor)?;
        let points = self.points.select(Axis(0), &prepared.kept);
        Ok((Self::new(points, Array1::from(prepared.weights))?, prepared.kept))
    }
}

/// Output of [`normalize_weights`]: the surviving weights and their original positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWeights {
    pub weights: Vec<f64>,
    pub kept: Vec<usize>,
    /// Sum of the input weights that survived the floor (the rescaling divisor in unit-mass mode).
    pub kept_mass: f64,
}

/// Prepares marginal masses.
///
/// In unit-mass mode the weights are scaled to sum one, entries below `floor`
/// are dropped and the survivors rescaled to sum one again. In raw mode the
/// weights pass through unchanged.
pub fn normalize_weights(weights: &[f64], mode: WeightMode, floor: f64) -> Result<PreparedWeights> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(invalid(format!("weight {w} is negative or non-finite")));
    }
    match mode {
        WeightMode::Raw => {
            if weights.iter().all(|&w| w <= 0.0) {
                return Err(Error::EmptyDistribution("all weights are zero".into()));
            }
            Ok(PreparedWeights {
                weights: weights.to_vec(),
                kept: (0..weights.len()).collect(),
                kept_mass: weights.iter().sum(),
            })
        }
        WeightMode::UnitMass => {
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                return Err(Error::EmptyDistribution("all weights are zero".into()));
            }
            let kept: Vec<usize> = (0..weights.len())
                .filter(|&i| weights[i] / total >= floor && weights[i] > 0.0)
                .collect();
            if kept.is_empty() {
                return Err(Error::EmptyDistribution(format!(
                    "every weight falls below the floor {floor}"
                )));
            }
            let kept_mass: f64 = kept.iter().map(|&i| weights[i]).sum();
            Ok(PreparedWeights {
                weights: kept.iter().map(|&i| weights[i] / kept_mass).collect(),
                kept,
                kept_mass,
            })
        }
    }
}

/// Largest pairwise distance over the union of both sets (Euclidean).
pub fn joint_diameter(a: &WeightedPointSet, b: &WeightedPointSet) -> f64 {
    let rows: Vec<ArrayView1<'_, f64>> = a
        .points
        .axis_iter(Axis(0))
        .chain(b.points.axis_iter(Axis(0)))
        .collect();
    let mut best = 0.0_f64;
    for (i, x) in rows.iter().enumerate() {
        for y in &rows[i + 1..] {
            let d = x
                .iter()
                .zip(y.iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            best = best.max(d);
        }
    }
    best
}
