//! Primal minimization of the relaxed objective by entropic mirror descent.
//!
//! The plan is kept in log form, `θ = log π`, so the multiplicative update
//! `π ← π ⊙ exp(−η ∇F)` becomes additive and never leaves the positive
//! orthant. Steps grow geometrically after success and halve after any
//! objective increase, so the recorded objective is nonincreasing.

use ndarray::{Array2, ArrayView2};

use super::ExactPlanResult;
use crate::ot::kl::{kl_integrand_from_log, logsumexp_by};

pub(crate) struct MirrorDescent<'a> {
    pub cost: ArrayView2<'a, f64>,
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub eps2: f64,
    pub rho2: f64,
}

const MAX_ITERS: usize = 2_000_000;
/// Accepted steps in a row that must each fall below the precision target.
const QUIET_STEPS: usize = 20;

impl MirrorDescent<'_> {
    pub fn run(&self, precision: f64) -> (ExactPlanResult, Vec<f64>) {
        let (n, m) = self.cost.dim();
        let log_prior = Array2::from_shape_fn((n, m), |(i, j)| (self.a[i] * self.b[j]).ln());
        let mut theta = log_prior.clone();
        let mut value = self.objective(&theta, &log_prior);
        let mut history = vec![value];
        // Relative smoothness constant of the objective w.r.t. the entropy.
        let mut step = 1.0 / (self.eps2 + 2.0 * self.rho2);
        let mut quiet = 0;
        let mut iterations = 0;
        let mut grad = Array2::<f64>::zeros((n, m));
        while iterations < MAX_ITERS {
            iterations += 1;
            self.gradient(&theta, &log_prior, &mut grad);
            let mut accepted = false;
            for _ in 0..60 {
                let trial = Array2::from_shape_fn((n, m), |ij| {
                    if theta[ij] == f64::NEG_INFINITY {
                        theta[ij]
                    } else {
                        theta[ij] - step * grad[ij]
                    }
                });
                let trial_value = self.objective(&trial, &log_prior);
                if trial_value <= value {
                    let decrease = value - trial_value;
                    theta = trial;
                    value = trial_value;
                    history.push(value);
                    step *= 1.5;
                    accepted = true;
                    if decrease <= precision * value.abs().max(f64::MIN_POSITIVE) {
                        quiet += 1;
                    } else {
                        quiet = 0;
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted || quiet >= QUIET_STEPS {
                break;
            }
        }
        let plan = theta.mapv(f64::exp);
        (
            ExactPlanResult {
                value,
                plan,
                iterations,
            },
            history,
        )
    }

    fn row_lse(&self, theta: &Array2<f64>) -> Vec<f64> {
        theta
            .rows()
            .into_iter()
            .map(|r| logsumexp_by(r.len(), |j| r[j]))
            .collect()
    }

    fn col_lse(&self, theta: &Array2<f64>) -> Vec<f64> {
        theta
            .columns()
            .into_iter()
            .map(|c| logsumexp_by(c.len(), |i| c[i]))
            .collect()
    }

    fn objective(&self, theta: &Array2<f64>, log_prior: &Array2<f64>) -> f64 {
        let mut transport = 0.0;
        let mut joint = 0.0;
        for ((ij, &t), &lp) in theta.indexed_iter().zip(log_prior.iter()) {
            if lp == f64::NEG_INFINITY {
                continue;
            }
            transport += t.exp() * self.cost[ij];
            joint += lp.exp() * kl_integrand_from_log(t - lp);
        }
        let marginal = |w: &[f64], lse: Vec<f64>| -> f64 {
            w.iter()
                .zip(lse)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, l)| w * kl_integrand_from_log(l - w.ln()))
                .sum::<f64>()
        };
        transport
            + self.eps2 * joint
            + self.rho2 * (marginal(self.a, self.row_lse(theta)) + marginal(self.b, self.col_lse(theta)))
    }

    fn gradient(&self, theta: &Array2<f64>, log_prior: &Array2<f64>, out: &mut Array2<f64>) {
        let rows = self.row_lse(theta);
        let cols = self.col_lse(theta);
        for ((i, j), g) in out.indexed_iter_mut() {
            let lp = log_prior[[i, j]];
            *g = if lp == f64::NEG_INFINITY {
                0.0
            } else {
                self.cost[[i, j]]
                    + self.eps2 * (theta[[i, j]] - lp)
                    + self.rho2 * (rows[i] - self.a[i].ln())
                    + self.rho2 * (cols[j] - self.b[j].ln())
            };
        }
    }
}
