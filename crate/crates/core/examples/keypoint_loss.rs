//! Per-corner transport loss between two keypoint-vote predictions, compared
//! with the prediction-to-prediction baseline.

use otkd::distill::{keypoint_kd_loss, naive_kd_loss};
use otkd::ot::{Norm, SinkhornConfig};
use otkd::prediction::{KeypointCell, KeypointPredictionSet};

fn cell(x: i64, score: f64, offset: f64) -> KeypointCell {
    KeypointCell {
        cell_xy: [x, 0],
        score,
        votes: vec![[0.3 + offset, 0.6], [0.6 + offset, 0.6], [0.6 + offset, 0.3], [0.3 + offset, 0.3]],
    }
}

fn main() -> otkd::Result<()> {
    let teacher = KeypointPredictionSet::new([1.0, 1.0], 4, vec![cell(0, 0.9, 0.0), cell(1, 0.8, 0.01)])?;
    // The student fires in different cells, so the baseline sees no overlap.
    let student = KeypointPredictionSet::new([1.0, 1.0], 4, vec![cell(5, 0.7, 0.05), cell(6, 0.9, 0.04)])?;

    let cfg = SinkhornConfig::keypoint();
    let ot = keypoint_kd_loss(&student, &teacher, &cfg)?;
    let naive = naive_kd_loss(&student, &teacher, Norm::L2)?;

    println!("transport loss  {:.6}", ot.total);
    for (k, v) in ot.per_corner.iter().enumerate() {
        println!("  corner {k}: {v:.6}");
    }
    println!("baseline loss   {:.6} ({} matched cells)", naive.total, naive.matched_cells);
    Ok(())
}
