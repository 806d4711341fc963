#![allow(dead_code)]

use ndarray::{Array1, Array2};
use otkd::ot::SinkhornConfig;
use otkd::WeightedPointSet;
use rand::Rng;

/// `n` points uniform in `[0, 1]^d` with uniform weights summing to one.
pub fn uniform_cloud<R: Rng>(rng: &mut R, n: usize, d: usize) -> WeightedPointSet {
    let points = Array2::from_shape_fn((n, d), |_| rng.gen_range(0.0..1.0));
    WeightedPointSet::new(points, Array1::from_elem(n, 1.0 / n as f64)).unwrap()
}

/// `n` points uniform in `[0, 1]^d` with random weights summing to one.
pub fn weighted_cloud<R: Rng>(rng: &mut R, n: usize, d: usize) -> WeightedPointSet {
    let points = Array2::from_shape_fn((n, d), |_| rng.gen_range(0.0..1.0));
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = w.iter().sum();
    WeightedPointSet::new(points, w.iter().map(|x| x / total).collect()).unwrap()
}

pub fn cloud(points: &[&[f64]], weights: &[f64]) -> WeightedPointSet {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    WeightedPointSet::from_rows(&rows, weights).unwrap()
}

pub fn config(epsilon: f64, rho: f64) -> SinkhornConfig {
    SinkhornConfig::keypoint().with_eps_rho(epsilon, rho)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Value of the relaxed problem between two singletons at distance `d`
/// with unit masses: the optimal plan mass is `exp(−d / s)`.
pub fn singleton_value(d: f64, epsilon: f64, rho: f64) -> f64 {
    let s = epsilon * epsilon + 2.0 * rho * rho;
    s * (1.0 - (-d / s).exp())
}
