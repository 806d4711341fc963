//! Cross-checks the scaling solver against the exact balanced and primal
//! unbalanced solvers on a small problem.

use ndarray::array;
use otkd::oracle::{exact_balanced_ot, primal_uot_oracle, DEFAULT_PRECISION};
use otkd::ot::{sinkhorn_unbalanced, SinkhornConfig};
use otkd::WeightedPointSet;

fn main() -> otkd::Result<()> {
    let a = WeightedPointSet::new(array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], array![0.5, 0.3, 0.2])?;
    let b = WeightedPointSet::new(array![[0.2, 0.1], [0.9, 0.8]], array![0.6, 0.4])?;

    let tight = SinkhornConfig::keypoint().with_eps_rho(1e-4, 1e3);
    let (summary, _) = sinkhorn_unbalanced(&a, &b, &tight)?;
    let exact = exact_balanced_ot(&a, &b, tight.norm)?;
    println!("balanced:   solver {:.8}  exact {:.8}", summary.transport_cost, exact.value);

    let loose = SinkhornConfig::keypoint().with_eps_rho(0.05, 0.5);
    let (summary, _) = sinkhorn_unbalanced(&a, &b, &loose)?;
    let primal = primal_uot_oracle(&a, &b, &loose, DEFAULT_PRECISION)?;
    println!("unbalanced: solver {:.8}  primal {:.8}", summary.total, primal.value);
    println!("primal plan:\n{:.5}", primal.plan);
    Ok(())
}
