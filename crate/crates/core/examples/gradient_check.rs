//! Finite-difference verification of the analytic loss gradients on random
//! instances of each loss.

use otkd::distill::{gradient_check, GradCheckSettings, LossKind, LossOptions};
use otkd::harness::random_instance;
use otkd::ot::SinkhornConfig;

fn main() -> otkd::Result<()> {
    let settings = GradCheckSettings::default();
    for (kind, cfg) in [
        (LossKind::OtKeypoint, SinkhornConfig::keypoint()),
        (LossKind::OtDense, SinkhornConfig::dense()),
        (LossKind::Naive, SinkhornConfig::keypoint()),
    ] {
        let (student, teacher) = random_instance(kind, 7)?;
        let report = gradient_check(kind, &student, &teacher, &cfg, &LossOptions::default(), &settings)?;
        println!(
            "{kind:<12} {} components, max error {:.2e}: {}",
            report.components,
            report.max_rel_error,
            if report.passed { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
