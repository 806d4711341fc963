//! Hyperparameter sweep over the default grid, written as CSV to stdout.

use otkd::harness::{sweep, write_sweep_csv, SweepGrid, SyntheticScenario, TrainOptions};

fn main() -> otkd::Result<()> {
    let options = TrainOptions {
        steps: 100,
        ..TrainOptions::default()
    };
    let rows = sweep(&SyntheticScenario::default(), &SweepGrid::default(), &options)?;
    write_sweep_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}
