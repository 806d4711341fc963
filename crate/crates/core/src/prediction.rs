//! Teacher/student local predictions and the transforms that turn them into
//! weighted point sets.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::points::WeightedPointSet;

/// Votes larger than this (in normalized units) are taken as a sign that
/// the set was never divided by the image size.
pub const DEFAULT_VOTE_BOUND: f64 = 10.0;

/// Number of projected bounding-box corners.
pub const BOX_CORNERS: usize = 8;

/// One grid cell of a keypoint-voting network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointCell {
    pub cell_xy: [i64; 2],
    /// Segmentation confidence in `[0, 1]`.
    pub score: f64,
    /// One 2-D location per keypoint (pixels, or `[0, 1]²` once normalized).
    pub votes: Vec<[f64; 2]>,
}

/// Per-cell keypoint votes and segmentation scores of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointPredictionSet {
    /// `(width, height)` in pixels.
    pub image_size: [f64; 2],
    pub num_keypoints: usize,
    pub cells: Vec<KeypointCell>,
}

impl KeypointPredictionSet {
    pub fn new(image_size: [f64; 2], num_keypoints: usize, cells: Vec<KeypointCell>) -> Result<Self> {
        let set = Self {
            image_size,
            num_keypoints,
            cells,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.image_size;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(invalid(format!("image size must be positive, got {w}x{h}")));
        }
        if self.num_keypoints == 0 {
            return Err(invalid("num_keypoints must be at least 1"));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.votes.len() != self.num_keypoints {
                return Err(invalid(format!(
                    "cell {i} has {} votes, expected {}",
                    cell.votes.len(),
                    self.num_keypoints
                )));
            }
            if !(0.0..=1.0).contains(&cell.score) {
                return Err(invalid(format!("cell {i} score {} is outside [0, 1]", cell.score)));
            }
            if cell.votes.iter().flatten().any(|v| !v.is_finite()) {
                return Err(invalid(format!("cell {i} has a non-finite vote")));
            }
        }
        Ok(())
    }

    /// Structural checks the losses rely on: consistent vote counts,
    /// finite votes, finite nonnegative scores. Range checks on the scores
    /// belong to ingestion ([`Self::validate`]).
    pub(crate) fn check_shape(&self) -> Result<()> {
        if self.num_keypoints == 0 {
            return Err(invalid("num_keypoints must be at least 1"));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.votes.len() != self.num_keypoints {
                return Err(invalid(format!(
                    "cell {i} has {} votes, expected {}",
                    cell.votes.len(),
                    self.num_keypoints
                )));
            }
            if !(cell.score.is_finite() && cell.score >= 0.0) {
                return Err(invalid(format!("cell {i} score {} is negative or non-finite", cell.score)));
            }
            if cell.votes.iter().flatten().any(|v| !v.is_finite()) {
                return Err(invalid(format!("cell {i} has a non-finite vote")));
            }
        }
        Ok(())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.score).collect()
    }

    /// Largest absolute vote coordinate.
    pub fn max_vote_magnitude(&self) -> f64 {
        self.cells
            .iter()
            .flat_map(|c| c.votes.iter().flatten())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Divides every vote by the image size; everything else is unchanged.
    /// Votes outside the frame stay outside.
    pub fn normalize_keypoints(&self) -> Result<Self> {
        let [w, h] = self.image_size;
        if !(w > 0.0 && h > 0.0) {
            return Err(invalid(format!("image size must be positive, got {w}x{h}")));
        }
        let mut out = self.clone();
        for cell in &mut out.cells {
            for v in &mut cell.votes {
                *v = [v[0] / w, v[1] / h];
            }
        }
        Ok(out)
    }

    /// Votes for corner `k` as points, each weighted by its cell's score.
    pub fn extract_corner_cloud(&self, k: usize) -> Result<WeightedPointSet> {
        if k >= self.num_keypoints {
            return Err(invalid(format!(
                "corner index {k} out of range for {} keypoints",
                self.num_keypoints
            )));
        }
        if self.cells.is_empty() {
            return Err(Error::EmptyDistribution("prediction set has no cells".into()));
        }
        let points = Array2::from_shape_fn((self.cells.len(), 2), |(i, d)| self.cells[i].votes[k][d]);
        WeightedPointSet::new(points, Array1::from(self.scores()))
    }
}

/// One cell of a dense binary-code network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseCell {
    /// Segmentation confidence in `[0, 1]`.
    pub score: f64,
    /// Bit probabilities in `[0, 1]`.
    pub code: Vec<f64>,
}

/// A fully populated grid of per-cell code probabilities, stored row-major
/// (`cells[y * width + x]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseCodePredictionSet {
    /// `(width, height)` in cells.
    pub grid_size: [usize; 2],
    pub code_dim: usize,
    pub cells: Vec<DenseCell>,
}

impl DenseCodePredictionSet {
    pub fn new(grid_size: [usize; 2], code_dim: usize, cells: Vec<DenseCell>) -> Result<Self> {
        let set = Self {
            grid_size,
            code_dim,
            cells,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.grid_size;
        if w == 0 || h == 0 {
            return Err(invalid(format!("grid size must be positive, got {w}x{h}")));
        }
        if self.code_dim == 0 {
            return Err(invalid("code_dim must be at least 1"));
        }
        if self.cells.len() != w * h {
            return Err(invalid(format!(
                "grid {w}x{h} needs {} cells, found {}",
                w * h,
                self.cells.len()
            )));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.code.len() != self.code_dim {
                return Err(invalid(format!(
                    "cell {i} has a code of length {}, expected {}",
                    cell.code.len(),
                    self.code_dim
                )));
            }
            if !(0.0..=1.0).contains(&cell.score) {
                return Err(invalid(format!("cell {i} score {} is outside [0, 1]", cell.score)));
            }
            if let Some(c) = cell.code.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(invalid(format!("cell {i} code value {c} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Structural checks the losses rely on (see
    /// [`KeypointPredictionSet::check_shape`]).
    pub(crate) fn check_shape(&self) -> Result<()> {
        let [w, h] = self.grid_size;
        if self.cells.len() != w * h || w == 0 || h == 0 {
            return Err(invalid(format!("grid {w}x{h} does not match {} cells", self.cells.len())));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.code.len() != self.code_dim {
                return Err(invalid(format!(
                    "cell {i} has a code of length {}, expected {}",
                    cell.code.len(),
                    self.code_dim
                )));
            }
            if !(cell.score.is_finite() && cell.score >= 0.0) || cell.code.iter().any(|c| !c.is_finite()) {
                return Err(invalid(format!("cell {i} has a negative or non-finite value")));
            }
        }
        Ok(())
    }

    pub fn cell(&self, x: usize, y: usize) -> &DenseCell {
        &self.cells[y * self.grid_size[0] + x]
    }
}

/// Either kind of prediction set, tagged by `kind` when serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PredictionSet {
    #[serde(rename = "keypoints")]
    Keypoints(KeypointPredictionSet),
    #[serde(rename = "dense_codes")]
    DenseCodes(DenseCodePredictionSet),
}

impl PredictionSet {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PredictionSet::Keypoints(_) => "keypoints",
            PredictionSet::DenseCodes(_) => "dense_codes",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PredictionSet::Keypoints(s) => s.validate(),
            PredictionSet::DenseCodes(s) => s.validate(),
        }
    }

    pub fn cell_count(&self) -> usize {
        match self {
            PredictionSet::Keypoints(s) => s.cells.len(),
            PredictionSet::DenseCodes(s) => s.cells.len(),
        }
    }
}

impl From<KeypointPredictionSet> for PredictionSet {
    fn from(s: KeypointPredictionSet) -> Self {
        PredictionSet::Keypoints(s)
    }
}

impl From<DenseCodePredictionSet> for PredictionSet {
    fn from(s: DenseCodePredictionSet) -> Self {
        PredictionSet::DenseCodes(s)
    }
}

/// Result of average pooling: the pooled cloud plus, for every pooled
/// point, the grid cells that were averaged into it.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledCodes {
    pub set: WeightedPointSet,
    pub tiles: Vec<Vec<usize>>,
}

/// Average-pools `block × block` tiles into points of dimension
/// `code_dim + 2`: the mean code followed by the tile centre normalized to
/// `[0, 1]` by the grid size. A point's weight is the tile's mean score.
/// Trailing rows/columns that do not fill a whole tile are dropped.
pub fn pool_dense(set: &DenseCodePredictionSet, block: usize) -> Result<WeightedPointSet> {
    pool_dense_tiles(set, block, 1.0).map(|p| p.set)
}

/// [`pool_dense`] with the coordinate channels multiplied by `coord_scale`,
/// and with the tile membership returned.
pub fn pool_dense_tiles(set: &DenseCodePredictionSet, block: usize, coord_scale: f64) -> Result<PooledCodes> {
    let [w, h] = set.grid_size;
    if block == 0 {
        return Err(invalid("block must be at least 1"));
    }
    if block > w || block > h {
        return Err(invalid(format!("block {block} exceeds the {w}x{h} grid")));
    }
    if !(coord_scale.is_finite() && coord_scale >= 0.0) {
        return Err(invalid(format!("coordinate scale must be nonnegative, got {coord_scale}")));
    }
    if set.cells.len() != w * h {
        return Err(invalid("dense grid is not fully populated"));
    }
    let (tx, ty) = (w / block, h / block);
    let dim = set.code_dim + 2;
    let area = (block * block) as f64;
    let mut points = Array2::zeros((tx * ty, dim));
    let mut weights = Array1::zeros(tx * ty);
    let mut tiles = Vec::with_capacity(tx * ty);
    for by in 0..ty {
        for bx in 0..tx {
            let t = by * tx + bx;
            let mut members = Vec::with_capacity(block * block);
            for y in by * block..(by + 1) * block {
                for x in bx * block..(bx + 1) * block {
                    let idx = y * w + x;
                    let cell = &set.cells[idx];
                    for (d, c) in cell.code.iter().enumerate() {
                        points[[t, d]] += c / area;
                    }
                    weights[t] += cell.score / area;
                    members.push(idx);
                }
            }
            let half = block as f64 / 2.0;
            points[[t, set.code_dim]] = coord_scale * ((bx * block) as f64 + half) / w as f64;
            points[[t, set.code_dim + 1]] = coord_scale * ((by * block) as f64 + half) / h as f64;
            tiles.push(members);
        }
    }
    Ok(PooledCodes {
        set: WeightedPointSet::new(points, weights)?,
        tiles,
    })
}
