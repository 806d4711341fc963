//! Trains a synthetic student against a teacher with disjoint active cells:
//! the baseline never moves, the transport loss pulls the votes in.

use otkd::distill::LossKind;
use otkd::harness::{train_student, SyntheticScenario, TrainOptions};
use otkd::ot::SinkhornConfig;

fn main() -> otkd::Result<()> {
    let scenario = SyntheticScenario {
        cell_overlap: 0.0,
        ..SyntheticScenario::default()
    };
    let options = TrainOptions {
        steps: 200,
        ..TrainOptions::default()
    };
    for kind in [LossKind::Naive, LossKind::OtKeypoint] {
        let run = train_student(&scenario, kind, &SinkhornConfig::keypoint(), &options)?;
        let first = run.trajectory.records.first().expect("at least one step");
        let last = run.trajectory.records.last().expect("at least one step");
        println!(
            "{kind:<12} corner error {:.4} -> {:.4}, divergence {:.5} -> {:.5}",
            first.corner_error, last.corner_error, first.divergence, last.divergence
        );
    }
    Ok(())
}
