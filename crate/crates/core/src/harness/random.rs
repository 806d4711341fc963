//! Seeded random prediction pairs for gradient and property checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distill::LossKind;
use crate::error::Result;
use crate::prediction::{DenseCell, DenseCodePredictionSet, KeypointCell, KeypointPredictionSet, PredictionSet, BOX_CORNERS};

/// Largest cell count of a random keypoint set.
pub const RANDOM_MAX_CELLS: usize = 8;
/// Side of a random dense grid.
pub const RANDOM_GRID: usize = 16;
/// Channels of a random dense code.
pub const RANDOM_CODE_DIM: usize = 16;

/// `n` cells on consecutive grid positions, votes uniform in `[0, 1]²`,
/// scores uniform in `[0.2, 0.95]`.
pub fn random_keypoint_set<R: Rng>(rng: &mut R, n: usize, num_keypoints: usize) -> Result<KeypointPredictionSet> {
    let cells = (0..n)
        .map(|i| KeypointCell {
            cell_xy: [i as i64, 0],
            score: rng.gen_range(0.2..0.95),
            votes: (0..num_keypoints)
                .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
                .collect(),
        })
        .collect();
    KeypointPredictionSet::new([1.0, 1.0], num_keypoints, cells)
}

/// A fully populated grid with codes in `[0.05, 0.95]` and scores in
/// `[0.2, 0.95]`.
pub fn random_dense_set<R: Rng>(rng: &mut R, grid: [usize; 2], code_dim: usize) -> Result<DenseCodePredictionSet> {
    let cells = (0..grid[0] * grid[1])
        .map(|_| DenseCell {
            score: rng.gen_range(0.2..0.95),
            code: (0..code_dim).map(|_| rng.gen_range(0.05..0.95)).collect(),
        })
        .collect();
    DenseCodePredictionSet::new(grid, code_dim, cells)
}

/// A `(student, teacher)` pair suited to `kind`: keypoint sets of 1–8 cells
/// with eight corners, or 16×16 dense grids with 16-channel codes. The
/// baseline pairs share their grid positions and have scores above its
/// activity threshold.
pub fn random_instance(kind: LossKind, seed: u64) -> Result<(PredictionSet, PredictionSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        LossKind::OtKeypoint => {
            let ns = rng.gen_range(1..=RANDOM_MAX_CELLS);
            let nt = rng.gen_range(1..=RANDOM_MAX_CELLS);
            let s = random_keypoint_set(&mut rng, ns, BOX_CORNERS)?;
            let t = random_keypoint_set(&mut rng, nt, BOX_CORNERS)?;
            Ok((s.into(), t.into()))
        }
        LossKind::Naive => {
            let n = rng.gen_range(1..=RANDOM_MAX_CELLS);
            let mut s = random_keypoint_set(&mut rng, n, BOX_CORNERS)?;
            let mut t = random_keypoint_set(&mut rng, n, BOX_CORNERS)?;
            for c in s.cells.iter_mut().chain(t.cells.iter_mut()) {
                c.score = 0.5 + 0.5 * c.score;
            }
            Ok((s.into(), t.into()))
        }
        LossKind::OtDense => {
            let grid = [RANDOM_GRID, RANDOM_GRID];
            let s = random_dense_set(&mut rng, grid, RANDOM_CODE_DIM)?;
            let t = random_dense_set(&mut rng, grid, RANDOM_CODE_DIM)?;
            Ok((s.into(), t.into()))
        }
    }
}
