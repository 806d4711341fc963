//! Dense symmetric positive-definite solves for the small Newton systems.

/// Solves `K x = rhs` for symmetric positive-definite `K` (row-major, `n×n`)
/// by Jacobi-scaled Cholesky. A small diagonal shift is added if rounding
/// breaks positive definiteness. Returns `None` if the system stays singular.
pub fn spd_solve(k: &[f64], rhs: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(k.len(), n * n);
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = k[i * n + i];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled: Vec<f64> = (0..n * n)
        .map(|idx| k[idx] * scale[idx / n] * scale[idx % n])
        .collect();
    let b: Vec<f64> = rhs.iter().zip(&scale).map(|(r, s)| r * s).collect();

    let mut shift = 0.0;
    for _ in 0..8 {
        if let Some(l) = cholesky(&scaled, n, shift) {
            let y = forward(&l, &b, n);
            let x = backward(&l, &y, n);
            return Some(x.iter().zip(&scale).map(|(x, s)| x * s).collect());
        }
        shift = if shift == 0.0 { 1e-14 } else { shift * 100.0 };
    }
    None
}

fn cholesky(a: &[f64], n: usize, shift: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j] + shift;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

fn forward(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

fn backward(l: &[f64], y: &[f64], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let k = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let x_true = [1.0, -2.0, 0.5];
        let rhs: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| k[i * 3 + j] * x_true[j]).sum())
            .collect();
        let x = spd_solve(&k, &rhs, 3).unwrap();
        for (a, b) in x.iter().zip(x_true) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn badly_scaled_diagonal() {
        let k = [1e-12, 0.0, 0.0, 1e6];
        let x = spd_solve(&k, &[1e-12, 2e6], 2).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }
}
