//! Transport loss between two dense binary-code predictions after pooling.

use otkd::distill::binary_code_kd_loss;
use otkd::harness::random_dense_set;
use otkd::ot::SinkhornConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> otkd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let teacher = random_dense_set(&mut rng, [16, 16], 16)?;
    let student = random_dense_set(&mut rng, [16, 16], 16)?;

    let cfg = SinkhornConfig::dense();
    let cross = binary_code_kd_loss(&student, &teacher, &cfg, 8)?;
    let own = binary_code_kd_loss(&teacher, &teacher, &cfg, 8)?;
    println!("student vs teacher: {:.6}", cross.total);
    println!("teacher vs itself:  {:.6}", own.total);
    Ok(())
}
