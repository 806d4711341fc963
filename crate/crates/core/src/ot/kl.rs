//! Scalar helpers shared by the solver and the objective evaluator.

/// `log Σ exp(x_k)` over the values produced by `f(0..len)`; `-inf` terms are skipped.
#[inline]
pub fn logsumexp_by(len: usize, mut f: impl FnMut(usize) -> f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for k in 0..len {
        let v = f(k);
        if v > max {
            max = v;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut sum = 0.0;
    for k in 0..len {
        sum += (f(k) - max).exp();
    }
    max + sum.ln()
}

/// `t log t − t + 1` evaluated at `t = e^s`, i.e. the generalized KL
/// integrand for a density ratio given in log form.
///
/// Uses a Taylor series near `s = 0` so that nearly-matched marginals do not
/// lose their (quadratically small) penalty to cancellation.
#[inline]
pub fn kl_integrand_from_log(s: f64) -> f64 {
    if s == f64::NEG_INFINITY {
        return 1.0;
    }
    if s.abs() < 1e-2 {
        let s2 = s * s;
        s2 * (0.5 + s * (1.0 / 3.0 + s * (1.0 / 8.0 + s * (1.0 / 30.0 + s * (1.0 / 144.0 + s * (1.0 / 840.0 + s / 5760.0))))))
    } else {
        s * s.exp() - s.exp_m1()
    }
}

/// Generalized KL divergence `Σ p log(p/q) − p + q` between nonnegative vectors.
pub fn generalized_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&p, &q)| {
            if q == 0.0 {
                if p == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else if p == 0.0 {
                q
            } else {
                q * kl_integrand_from_log((p / q).ln())
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive() {
        let xs = [0.3, -1.2, 2.5, 0.0];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp_by(4, |k| xs[k]) - naive).abs() < 1e-14);
        assert_eq!(logsumexp_by(0, |_| 0.0), f64::NEG_INFINITY);
        let big = [1e6, 1e6 - 1.0];
        let v = logsumexp_by(2, |k| big[k]);
        assert!((v - (1e6 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn integrand_series_agrees_with_closed_form() {
        for &s in &[-0.0099, -1e-3, 1e-5, 5e-3, 0.0099] {
            let t: f64 = s;
            let closed = t * t.exp() - t.exp_m1();
            let series = kl_integrand_from_log(t);
            assert!((closed - series).abs() <= 1e-15, "{s}: {closed} vs {series}");
        }
        assert_eq!(kl_integrand_from_log(0.0), 0.0);
        assert_eq!(kl_integrand_from_log(f64::NEG_INFINITY), 1.0);
        let s = 1e-7;
        assert!((kl_integrand_from_log(s) / (s * s / 2.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kl_basics() {
        assert_eq!(generalized_kl(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((generalized_kl(&[0.0], &[0.3]) - 0.3).abs() < 1e-15);
        assert!(generalized_kl(&[1.0, 0.2], &[0.5, 0.5]) > 0.0);
    }
}
