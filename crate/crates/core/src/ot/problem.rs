use ndarray::{Array2, ArrayView2};

use super::kl::{kl_integrand_from_log, logsumexp_by};
use super::linalg::spd_solve;
use super::sinkhorn::TransportSummary;
use crate::error::{invalid, Error, Result};

/// Dense problem data shared by the iteration and the evaluator.
pub(crate) struct Problem<'a> {
    cost: ArrayView2<'a, f64>,
    cost_t: Array2<f64>,
    a: &'a [f64],
    b: &'a [f64],
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    mass_a: f64,
    mass_b: f64,
}

impl<'a> Problem<'a> {
    pub(crate) fn new(cost: ArrayView2<'a, f64>, a: &'a [f64], b: &'a [f64]) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptyDistribution("transport input has no points".into()));
        }
        if cost.dim() != (a.len(), b.len()) {
            return Err(invalid(format!(
                "cost matrix is {:?}, expected ({}, {})",
                cost.dim(),
                a.len(),
                b.len()
            )));
        }
        for (side, w) in [("source", a), ("target", b)] {
            if let Some(x) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(invalid(format!("{side} weight {x} is negative or non-finite")));
            }
            if !(w.iter().sum::<f64>() > 0.0) {
                return Err(Error::EmptyDistribution(format!("{side} has zero total mass")));
            }
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(invalid("cost matrix has non-finite entries"));
        }
        Ok(Self {
            cost,
            cost_t: cost.t().to_owned(),
            a,
            b,
            log_a: a.iter().map(|x| x.ln()).collect(),
            log_b: b.iter().map(|x| x.ln()).collect(),
            mass_a: a.iter().sum(),
            mass_b: b.iter().sum(),
        })
    }

    pub(crate) fn max_cost(&self) -> f64 {
        self.cost.iter().fold(0.0_f64, |m, &c| m.max(c)).max(f64::MIN_POSITIVE)
    }

    /// One damped update of `f` then `g`, followed by the exact maximization
    /// of the dual along the plan-preserving direction `(f + λ, g − λ)`.
    /// Returns the sup-norm change of the potentials.
    pub(crate) fn sweep(&self, f: &mut [f64], g: &mut [f64], eps2: f64, rho2: f64) -> f64 {
        let damping = rho2 / (rho2 + eps2);
        let mut change = 0.0_f64;
        for (i, fi) in f.iter_mut().enumerate() {
            let row = self.cost.row(i);
            let lse = logsumexp_by(g.len(), |j| self.log_b[j] + (g[j] - row[j]) / eps2);
            let new = -damping * eps2 * lse;
            change = change.max((new - *fi).abs());
            *fi = new;
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let col = self.cost_t.row(j);
            let lse = logsumexp_by(f.len(), |i| self.log_a[i] + (f[i] - col[i]) / eps2);
            let new = -damping * eps2 * lse;
            change = change.max((new - *gj).abs());
            *gj = new;
        }
        let shift = 0.5 * rho2 * self.log_mass_ratio(f, g, rho2);
        if shift.is_finite() && shift != 0.0 {
            f.iter_mut().for_each(|x| *x += shift);
            g.iter_mut().for_each(|x| *x -= shift);
        }
        change.max(shift.abs())
    }

    /// `log Σ a_i e^{−f_i/ρ²} − log Σ b_j e^{−g_j/ρ²}`, accurate also when
    /// the exponents are tiny (large ρ).
    pub(crate) fn log_mass_ratio(&self, f: &[f64], g: &[f64], rho2: f64) -> f64 {
        let small = f.iter().chain(g).all(|x| (x / rho2).abs() <= 0.5);
        if small {
            let rel = |w: &[f64], mass: f64, pot: &[f64]| -> f64 {
                w.iter()
                    .zip(pot)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(w, p)| (w / mass) * (-p / rho2).exp_m1())
                    .sum::<f64>()
                    .ln_1p()
            };
            (self.mass_a / self.mass_b).ln() + rel(self.a, self.mass_a, f) - rel(self.b, self.mass_b, g)
        } else {
            let la = logsumexp_by(f.len(), |i| self.log_a[i] - f[i] / rho2);
            let lb = logsumexp_by(g.len(), |j| self.log_b[j] - g[j] / rho2);
            la - lb
        }
    }

    pub(crate) fn plan(&self, f: &[f64], g: &[f64], eps2: f64) -> Array2<f64> {
        Array2::from_shape_fn(self.cost.dim(), |(i, j)| {
            let w = self.a[i] * self.b[j];
            if w == 0.0 {
                0.0
            } else {
                w * ((f[i] + g[j] - self.cost[[i, j]]) / eps2).exp()
            }
        })
    }

    pub(crate) fn row_log_ratios(&self, f: &[f64], g: &[f64], eps2: f64) -> Vec<f64> {
        (0..f.len())
            .map(|i| {
                let row = self.cost.row(i);
                f[i] / eps2 + logsumexp_by(g.len(), |j| self.log_b[j] + (g[j] - row[j]) / eps2)
            })
            .collect()
    }

    pub(crate) fn col_log_ratios(&self, f: &[f64], g: &[f64], eps2: f64) -> Vec<f64> {
        (0..g.len())
            .map(|j| {
                let col = self.cost_t.row(j);
                g[j] / eps2 + logsumexp_by(f.len(), |i| self.log_a[i] + (f[i] - col[i]) / eps2)
            })
            .collect()
    }

    pub(crate) fn evaluate(&self, f: &[f64], g: &[f64], eps2: f64, rho2: f64) -> TransportSummary {
        let mut transport = 0.0;
        let mut joint = 0.0;
        for (i, &ai) in self.a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (j, &bj) in self.b.iter().enumerate() {
                if bj == 0.0 {
                    continue;
                }
                let c = self.cost[[i, j]];
                let s = (f[i] + g[j] - c) / eps2;
                let w = ai * bj;
                transport += w * s.exp() * c;
                joint += w * kl_integrand_from_log(s);
            }
        }
        let marginal = |w: &[f64], ratios: Vec<f64>| -> f64 {
            w.iter()
                .zip(ratios)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, s)| w * kl_integrand_from_log(s))
                .sum::<f64>()
        };
        let kl_joint = eps2 * joint;
        let kl_row = rho2 * marginal(self.a, self.row_log_ratios(f, g, eps2));
        let kl_col = rho2 * marginal(self.b, self.col_log_ratios(f, g, eps2));
        TransportSummary {
            transport_cost: transport,
            kl_joint,
            kl_row,
            kl_col,
            // Equal to the sum of the parts at the optimum (strong duality),
            // but free of the O(|f|·ulp/ε²) rounding the primal terms pick up
            // through the plan exponents.
            total: self.dual(f, g, eps2, rho2),
            iterations: 0,
            converged: false,
        }
    }

    /// Dual objective
    /// `−ρ²⟨a, e^{−f/ρ²} − 1⟩ − ρ²⟨b, e^{−g/ρ²} − 1⟩ − ε²⟨a⊗b, e^{(f⊕g−C)/ε²} − 1⟩`.
    pub(crate) fn dual(&self, f: &[f64], g: &[f64], eps2: f64, rho2: f64) -> f64 {
        let side = |w: &[f64], pot: &[f64]| -> f64 {
            w.iter()
                .zip(pot)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, p)| w * (-p / rho2).exp_m1())
                .sum::<f64>()
        };
        let mut plan_mass = 0.0;
        for (i, &ai) in self.a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (j, &bj) in self.b.iter().enumerate() {
                if bj > 0.0 {
                    plan_mass += ai * bj * ((f[i] + g[j] - self.cost[[i, j]]) / eps2).exp();
                }
            }
        }
        -rho2 * (side(self.a, f) + side(self.b, g)) - eps2 * (plan_mass - self.mass_a * self.mass_b)
    }

    /// Safeguarded Newton ascent step on the dual over the positive-weight
    /// coordinates. Returns the sup-norm of the accepted step (0 if rejected
    /// or if the dual gradient is already at its rounding floor).
    pub(crate) fn newton_step(&self, f: &mut [f64], g: &mut [f64], eps2: f64, rho2: f64) -> f64 {
        let (base_residual, floor) = self.residual(f, g, eps2, rho2);
        if base_residual <= floor {
            return 0.0;
        }
        let rows: Vec<usize> = (0..self.a.len()).filter(|&i| self.a[i] > 0.0).collect();
        let cols: Vec<usize> = (0..self.b.len()).filter(|&j| self.b[j] > 0.0).collect();
        let (nr, nc) = (rows.len(), cols.len());
        let n = nr + nc;

        let mut plan = vec![0.0; nr * nc];
        let mut r = vec![0.0; nr];
        let mut c = vec![0.0; nc];
        for (p, &i) in rows.iter().enumerate() {
            for (q, &j) in cols.iter().enumerate() {
                let v = self.a[i] * self.b[j] * ((f[i] + g[j] - self.cost[[i, j]]) / eps2).exp();
                plan[p * nc + q] = v;
                r[p] += v;
                c[q] += v;
            }
        }
        if plan.iter().any(|v| !v.is_finite()) {
            return 0.0;
        }
        // ε² × (negated Hessian), and ε² × gradient.
        let ratio = eps2 / rho2;
        let mut k = vec![0.0; n * n];
        let mut rhs = vec![0.0; n];
        for (p, &i) in rows.iter().enumerate() {
            let u = self.a[i] * (-f[i] / rho2).exp();
            k[p * n + p] = r[p] + ratio * u;
            rhs[p] = eps2 * (u - r[p]);
            for q in 0..nc {
                k[p * n + nr + q] = plan[p * nc + q];
                k[(nr + q) * n + p] = plan[p * nc + q];
            }
        }
        for (q, &j) in cols.iter().enumerate() {
            let v = self.b[j] * (-g[j] / rho2).exp();
            k[(nr + q) * n + nr + q] = c[q] + ratio * v;
            rhs[nr + q] = eps2 * (v - c[q]);
        }
        let Some(step) = spd_solve(&k, &rhs, n) else {
            return 0.0;
        };
        let size = step.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if !size.is_finite() || size == 0.0 {
            return 0.0;
        }

        let base = self.dual(f, g, eps2, rho2);
        let noise = 1e-14 * (base.abs() + eps2 * self.mass_a * self.mass_b);
        let mut t = 1.0;
        let mut trial_f = f.to_vec();
        let mut trial_g = g.to_vec();
        for _ in 0..40 {
            for (p, &i) in rows.iter().enumerate() {
                trial_f[i] = f[i] + t * step[p];
            }
            for (q, &j) in cols.iter().enumerate() {
                trial_g[j] = g[j] + t * step[nr + q];
            }
            let value = self.dual(&trial_f, &trial_g, eps2, rho2);
            // Near the optimum the dual gain drops below rounding; the
            // marginal residual still resolves progress there.
            let improves = value > base + noise
                || (value >= base - noise && self.residual(&trial_f, &trial_g, eps2, rho2).0 < base_residual);
            if improves {
                f.copy_from_slice(&trial_f);
                g.copy_from_slice(&trial_g);
                return t * size;
            }
            t *= 0.5;
        }
        0.0
    }

    /// Sup-norm of the dual gradient `a_i e^{−f_i/ρ²} − Σ_j π_ij` (and its
    /// column analogue), together with the rounding floor below which it
    /// carries no information.
    pub(crate) fn residual(&self, f: &[f64], g: &[f64], eps2: f64, rho2: f64) -> (f64, f64) {
        let mut worst = 0.0_f64;
        let mut largest_marginal = 0.0_f64;
        let mut side = |w: &[f64], pot: &[f64], ratios: Vec<f64>| {
            for ((&w, &p), lr) in w.iter().zip(pot).zip(ratios) {
                if w > 0.0 {
                    // a e^x − a e^{lr} = a e^x (1 − e^{lr − x}) without cancellation.
                    let x = -p / rho2;
                    worst = worst.max((w * x.exp() * (lr - x).exp_m1()).abs());
                    largest_marginal = largest_marginal.max(w * lr.exp());
                }
            }
        };
        side(self.a, f, self.row_log_ratios(f, g, eps2));
        side(self.b, g, self.col_log_ratios(f, g, eps2));
        let scale = f.iter().chain(g).fold(0.0_f64, |m, x| m.max(x.abs())) * 2.0 + self.max_cost();
        let floor = 64.0 * f64::EPSILON * scale / eps2 * largest_marginal;
        (worst, floor)
    }
}
