mod common;

use common::*;
use otkd::distill::{
    binary_code_kd_loss, distill_loss, gradient_check, keypoint_kd_loss, loss_gradient, naive_kd_loss,
    GradCheckSettings, LossKind, LossOptions,
};
use otkd::harness::{random_instance, random_keypoint_set};
use otkd::ot::{Norm, SinkhornConfig};
use otkd::prediction::{DenseCell, DenseCodePredictionSet, KeypointCell, KeypointPredictionSet, PredictionSet};
use otkd::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn keypoints(set: PredictionSet) -> KeypointPredictionSet {
    match set {
        PredictionSet::Keypoints(s) => s,
        _ => panic!("expected keypoints"),
    }
}

fn singleton(vote: [f64; 2]) -> KeypointPredictionSet {
    KeypointPredictionSet::new(
        [1.0, 1.0],
        1,
        vec![KeypointCell {
            cell_xy: [0, 0],
            score: 1.0,
            votes: vec![vote],
        }],
    )
    .unwrap()
}

const CORNERS: [[f64; 2]; 8] = [
    [0.30, 0.62],
    [0.58, 0.66],
    [0.60, 0.38],
    [0.32, 0.35],
    [0.40, 0.70],
    [0.70, 0.72],
    [0.71, 0.45],
    [0.42, 0.42],
];

/// `n` cells voting for the box corners with Gaussian spread `sigma`; the
/// noise comes from `draws` so different spreads share the same directions.
fn cluster(draws: &[Vec<[f64; 2]>], sigma: f64) -> KeypointPredictionSet {
    let cells = draws
        .iter()
        .enumerate()
        .map(|(i, d)| KeypointCell {
            cell_xy: [i as i64, 0],
            score: 1.0,
            votes: CORNERS
                .iter()
                .zip(d)
                .map(|(c, z)| [c[0] + sigma * z[0], c[1] + sigma * z[1]])
                .collect(),
        })
        .collect();
    KeypointPredictionSet::new([1.0, 1.0], 8, cells).unwrap()
}

fn normal_draws(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<[f64; 2]>> {
    (0..n)
        .map(|_| {
            (0..8)
                .map(|_| [StandardNormal.sample(rng), StandardNormal.sample(rng)])
                .collect()
        })
        .collect()
}

#[test]
fn relabelling_corners_permutes_the_terms_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..5 {
        let (s, t) = random_instance(LossKind::OtKeypoint, seed).unwrap();
        let (s, t) = (keypoints(s), keypoints(t));
        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut rng);
        let relabel = |set: &KeypointPredictionSet| {
            let mut out = set.clone();
            for c in &mut out.cells {
                c.votes = perm.iter().map(|&k| c.votes[k]).collect();
            }
            out
        };
        let cfg = SinkhornConfig::keypoint();
        let base = keypoint_kd_loss(&s, &t, &cfg).unwrap();
        let moved = keypoint_kd_loss(&relabel(&s), &relabel(&t), &cfg).unwrap();
        assert_eq!(base.total.to_bits(), moved.total.to_bits());
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(moved.per_corner[k].to_bits(), base.per_corner[p].to_bits());
        }
        let sum: f64 = base.per_corner.iter().sum();
        assert!(rel(sum, base.total) < 1e-9);
    }
}

#[test]
fn every_cell_count_pairing_is_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for ns in 1..=8 {
        for nt in 1..=8 {
            let s = random_keypoint_set(&mut rng, ns, 8).unwrap();
            let t = random_keypoint_set(&mut rng, nt, 8).unwrap();
            let r = keypoint_kd_loss(&s, &t, &SinkhornConfig::keypoint()).unwrap();
            assert!(r.total.is_finite() && r.total > 0.0, "{ns}x{nt}");
            assert!(r.converged);
        }
    }
}

fn step(set: &KeypointPredictionSet, d_points: &ndarray::Array2<f64>, d_weights: &ndarray::Array1<f64>, t: f64) -> KeypointPredictionSet {
    let mut out = set.clone();
    for (i, c) in out.cells.iter_mut().enumerate() {
        for (k, v) in c.votes.iter_mut().enumerate() {
            v[0] -= t * d_points[[i, 2 * k]];
            v[1] -= t * d_points[[i, 2 * k + 1]];
        }
        c.score = (c.score - t * d_weights[i]).max(0.0);
    }
    out
}

#[test]
fn a_small_gradient_step_decreases_the_loss() {
    let cfg = SinkhornConfig::keypoint();
    for seed in 0..8 {
        let (s, t) = random_instance(LossKind::OtKeypoint, 100 + seed).unwrap();
        let g = loss_gradient(LossKind::OtKeypoint, &s, &t, &cfg, &LossOptions::default()).unwrap();
        let (s, t) = (keypoints(s), keypoints(t));
        let before = keypoint_kd_loss(&s, &t, &cfg).unwrap().total;
        let mut lr = 1.0;
        let decreased = (0..40).any(|_| {
            let after = keypoint_kd_loss(&step(&s, &g.d_points, &g.d_weights, lr), &t, &cfg).unwrap().total;
            lr *= 0.5;
            after < before
        });
        assert!(decreased, "seed {seed}");
    }
}

#[test]
fn heavier_outliers_never_lower_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spread = 0.01;
    let teacher = cluster(&normal_draws(&mut rng, 10), spread);
    let base = cluster(&normal_draws(&mut rng, 6), spread);
    let cfg = SinkhornConfig::keypoint();
    let mut last = f64::NEG_INFINITY;
    for score in [0.05, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let mut student = base.clone();
        student.cells.push(KeypointCell {
            cell_xy: [99, 0],
            score,
            votes: CORNERS.iter().map(|c| [c[0] + 0.25, c[1] - 0.2]).collect(),
        });
        let value = keypoint_kd_loss(&student, &teacher, &cfg).unwrap().total;
        assert!(value >= last, "score {score}: {value} < {last}");
        last = value;
    }
}

#[test]
fn tighter_student_clusters_lower_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let teacher = cluster(&normal_draws(&mut rng, 20), 0.005);
    let draws = normal_draws(&mut rng, 15);
    let cfg = SinkhornConfig::keypoint();
    let values: Vec<f64> = [0.05, 0.03875, 0.0275, 0.01625, 0.005]
        .iter()
        .map(|&sigma| keypoint_kd_loss(&cluster(&draws, sigma), &teacher, &cfg).unwrap().total)
        .collect();
    assert!(values[0] > 0.0);
    for w in values.windows(2) {
        assert!(w[1] < w[0], "{values:?}");
    }
}

fn dense_grid(codes: Vec<Vec<f64>>, side: usize) -> DenseCodePredictionSet {
    let dim = codes[0].len();
    DenseCodePredictionSet::new(
        [side, side],
        dim,
        codes.into_iter().map(|code| DenseCell { score: 1.0, code }).collect(),
    )
    .unwrap()
}

#[test]
fn noisier_codes_raise_the_dense_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let crisp: Vec<Vec<f64>> = (0..256)
        .map(|_| (0..16).map(|_| if rng.gen_bool(0.5) { 0.95 } else { 0.05 }).collect())
        .collect();
    let noise: Vec<Vec<f64>> = (0..256).map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let teacher = dense_grid(crisp.clone(), 16);
    let values: Vec<f64> = [0.1, 0.2, 0.3]
        .iter()
        .map(|&amp| {
            let codes = crisp
                .iter()
                .zip(&noise)
                .map(|(c, n)| c.iter().zip(n).map(|(x, z)| (x + amp * z).clamp(0.0, 1.0)).collect())
                .collect();
            binary_code_kd_loss(&dense_grid(codes, 16), &teacher, &SinkhornConfig::dense(), 8)
                .unwrap()
                .total
        })
        .collect();
    assert!(values[0] < values[1] && values[1] < values[2], "{values:?}");
}

#[test]
fn dense_single_tile_gives_the_code_distance_when_marginals_are_tight() {
    let a = dense_grid(vec![vec![0.2, 0.7]; 64], 8);
    let b = dense_grid(vec![vec![0.7, 0.7]; 64], 8);
    let cfg = SinkhornConfig::dense().with_eps_rho(1e-4, 1e4);
    let value = binary_code_kd_loss(&a, &b, &cfg, 8).unwrap().total;
    assert!((value - 0.5).abs() < 1e-9, "{value}");
    let preset = binary_code_kd_loss(&a, &b, &SinkhornConfig::dense(), 8).unwrap().total;
    assert!((preset - singleton_value(0.5, 1e-4, 0.1)).abs() < 1e-12);
}

#[test]
fn gradient_vanishes_when_student_equals_teacher() {
    for seed in 0..3 {
        let (s, _) = random_instance(LossKind::OtKeypoint, seed).unwrap();
        let g = loss_gradient(LossKind::OtKeypoint, &s, &s, &SinkhornConfig::keypoint(), &LossOptions::default()).unwrap();
        assert!(g.d_points.iter().all(|x| x.abs() <= 1e-6), "{:?}", g.d_points);
        let (d, _) = random_instance(LossKind::OtDense, seed).unwrap();
        let g = loss_gradient(LossKind::OtDense, &d, &d, &SinkhornConfig::dense(), &LossOptions::default()).unwrap();
        assert!(g.d_points.iter().all(|x| x.abs() <= 1e-6));
    }
}

#[test]
fn singleton_gradient_points_at_the_teacher() {
    let s: PredictionSet = singleton([0.0, 0.0]).into();
    let t: PredictionSet = singleton([1.0, 0.0]).into();
    let options = LossOptions::default();
    let tight = SinkhornConfig::keypoint().with_eps_rho(1e-3, 1e6);
    let g = loss_gradient(LossKind::OtKeypoint, &s, &t, &tight, &options).unwrap();
    assert!((g.d_points[[0, 0]] + 1.0).abs() < 1e-9 && g.d_points[[0, 1]].abs() < 1e-12);
    // With relaxed marginals only the transported mass exp(−d/s) pulls.
    let cfg = SinkhornConfig::keypoint();
    let g = loss_gradient(LossKind::OtKeypoint, &s, &t, &cfg, &options).unwrap();
    let mass = (-1.0 / (cfg.epsilon.powi(2) + 2.0 * cfg.rho.powi(2))).exp();
    assert!((g.d_points[[0, 0]] + mass).abs() < 1e-9);
}

#[test]
fn dropped_cells_get_no_gradient() {
    let (s, t) = random_instance(LossKind::OtKeypoint, 9).unwrap();
    let mut s = keypoints(s);
    s.cells.push(KeypointCell {
        cell_xy: [50, 50],
        score: 0.0,
        votes: vec![[0.5, 0.5]; 8],
    });
    let g = loss_gradient(LossKind::OtKeypoint, &s.clone().into(), &t, &SinkhornConfig::keypoint(), &LossOptions::default()).unwrap();
    let last = s.cells.len() - 1;
    assert!(g.d_points.row(last).iter().all(|&x| x == 0.0));
    assert!(g.d_points.iter().chain(g.d_weights.iter()).all(|x| x.is_finite()));
}

#[test]
fn finite_differences_confirm_the_gradients() {
    let settings = GradCheckSettings::default();
    for kind in [LossKind::OtKeypoint, LossKind::Naive] {
        for seed in 0..3 {
            let (s, t) = random_instance(kind, 500 + seed).unwrap();
            let r = gradient_check(kind, &s, &t, &SinkhornConfig::keypoint(), &LossOptions::default(), &settings).unwrap();
            assert!(r.passed, "{kind} seed {seed}: {r:?}");
        }
    }
    let mut raw = SinkhornConfig::keypoint();
    raw.debiased = false;
    let (s, t) = random_instance(LossKind::OtKeypoint, 7).unwrap();
    let r = gradient_check(LossKind::OtKeypoint, &s, &t, &raw, &LossOptions::default(), &settings).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn mismatched_kinds_are_rejected() {
    let (k, _) = random_instance(LossKind::OtKeypoint, 0).unwrap();
    let (d, _) = random_instance(LossKind::OtDense, 0).unwrap();
    let cfg = SinkhornConfig::keypoint();
    let options = LossOptions::default();
    assert!(matches!(distill_loss(LossKind::OtKeypoint, &k, &d, &cfg, &options), Err(Error::InvalidInput(_))));
    assert!(matches!(distill_loss(LossKind::OtDense, &k, &k, &cfg, &options), Err(Error::InvalidInput(_))));
    assert!(matches!(distill_loss(LossKind::Naive, &d, &d, &cfg, &options), Err(Error::InvalidInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn baseline_of_a_set_with_itself_is_zero(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_keypoint_set(&mut rng, n, 8).unwrap();
        for norm in [Norm::L1, Norm::L2] {
            prop_assert_eq!(naive_kd_loss(&set, &set, norm).unwrap().total, 0.0);
        }
    }
}
