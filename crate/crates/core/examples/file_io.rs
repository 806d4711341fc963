//! Writes a prediction file, reads it back and checks the round trip.

use otkd::harness::random_instance;
use otkd::distill::LossKind;
use otkd::io::{read_predictions, write_predictions};

fn main() -> otkd::Result<()> {
    let dir = std::env::temp_dir().join("otkd-file-io-example");
    std::fs::create_dir_all(&dir).map_err(|e| otkd::Error::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    for (kind, name) in [(LossKind::OtKeypoint, "keypoints.json"), (LossKind::OtDense, "dense.json")] {
        let (set, _) = random_instance(kind, 1)?;
        let path = dir.join(name);
        write_predictions(&path, &set)?;
        let back = read_predictions(&path)?;
        println!("{}: {} cells, round trip exact: {}", path.display(), back.cell_count(), back == set);
    }
    Ok(())
}
