//! Exact balanced transport by the transportation simplex (MODI / stepping
//! stone): north-west-corner start, potentials `u_i + v_j = C_ij` on the
//! basis tree, entering cell of most negative reduced cost, pivot around the
//! unique basis cycle.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};

use super::ExactPlanResult;
use crate::error::{invalid, Result};

const MAX_PIVOTS: usize = 100_000;
/// Consecutive zero-step pivots before switching to Bland's entering rule.
const DEGENERATE_SWITCH: usize = 50;

pub(crate) fn transportation_simplex(
    cost: ArrayView2<'_, f64>,
    supply: &[f64],
    demand: &[f64],
) -> Result<ExactPlanResult> {
    solve_with_basis(cost, supply, demand).map(|(res, _)| res)
}

fn solve_with_basis(
    cost: ArrayView2<'_, f64>,
    supply: &[f64],
    demand: &[f64],
) -> Result<(ExactPlanResult, Array2<bool>)> {
    let (n, m) = cost.dim();
    if supply.len() != n || demand.len() != m {
        return Err(invalid("marginals do not match the cost matrix"));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 * total_s.max(total_d).max(1.0) {
        return Err(invalid(format!(
            "balanced transport needs equal masses, got {total_s} vs {total_d}"
        )));
    }

    let mut flow = Array2::<f64>::zeros((n, m));
    let mut basic = Array2::from_elem((n, m), false);
    north_west_corner(supply, demand, &mut flow, &mut basic);

    let scale = cost.iter().fold(0.0_f64, |a, &c| a.max(c.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    let mut pivots = 0;
    let mut degenerate_run = 0;
    loop {
        let (u, v) = basis_potentials(cost, &basic);
        let entering = if degenerate_run >= DEGENERATE_SWITCH {
            first_negative(cost, &basic, &u, &v, tol)
        } else {
            most_negative(cost, &basic, &u, &v, tol)
        };
        let Some((ei, ej)) = entering else {
            break;
        };
        if pivots >= MAX_PIVOTS {
            return Err(invalid("transportation simplex exceeded its pivot budget"));
        }
        pivots += 1;

        let cycle = basis_cycle(&basic, ei, ej);
        // Cells at odd positions lose flow.
        let (mut theta, mut leave) = (f64::INFINITY, None);
        for (k, &(i, j)) in cycle.iter().enumerate() {
            if k % 2 == 1 && (flow[[i, j]] < theta || (flow[[i, j]] == theta && Some((i, j)) < leave)) {
                theta = flow[[i, j]];
                leave = Some((i, j));
            }
        }
        let (li, lj) = leave.expect("basis cycle has a decreasing cell");
        for (k, &(i, j)) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                flow[[i, j]] += theta;
            } else {
                flow[[i, j]] -= theta;
            }
        }
        flow[[li, lj]] = 0.0;
        basic[[ei, ej]] = true;
        basic[[li, lj]] = false;
        degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
    }

    flow.mapv_inplace(|x| x.max(0.0));
    let value = flow.iter().zip(cost.iter()).map(|(x, c)| x * c).sum();
    Ok((
        ExactPlanResult {
            value,
            plan: flow,
            iterations: pivots,
        },
        basic,
    ))
}

fn north_west_corner(supply: &[f64], demand: &[f64], flow: &mut Array2<f64>, basic: &mut Array2<bool>) {
    let (n, m) = flow.dim();
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]);
        flow[[i, j]] = x;
        basic[[i, j]] = true;
        s[i] -= x;
        d[j] -= x;
        if i + 1 == n && j + 1 == m {
            break;
        }
        // Advance exactly one index per cell so the basis has n + m − 1 cells.
        if j + 1 == m || (i + 1 < n && s[i] <= d[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
}

/// Potentials on the spanning basis tree, rooted at `u_0 = 0`.
fn basis_potentials(cost: ArrayView2<'_, f64>, basic: &Array2<bool>) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = basic.dim();
    let mut u = vec![f64::NAN; n];
    let mut v = vec![f64::NAN; m];
    u[0] = 0.0;
    let mut queue = VecDeque::from([Node::Row(0)]);
    while let Some(node) = queue.pop_front() {
        match node {
            Node::Row(i) => {
                for j in 0..m {
                    if basic[[i, j]] && v[j].is_nan() {
                        v[j] = cost[[i, j]] - u[i];
                        queue.push_back(Node::Col(j));
                    }
                }
            }
            Node::Col(j) => {
                for i in 0..n {
                    if basic[[i, j]] && u[i].is_nan() {
                        u[i] = cost[[i, j]] - v[j];
                        queue.push_back(Node::Row(i));
                    }
                }
            }
        }
    }
    (u, v)
}

fn most_negative(
    cost: ArrayView2<'_, f64>,
    basic: &Array2<bool>,
    u: &[f64],
    v: &[f64],
    tol: f64,
) -> Option<(usize, usize)> {
    let mut best = None;
    let mut best_rc = -tol;
    for ((i, j), &c) in cost.indexed_iter() {
        if !basic[[i, j]] {
            let rc = c - u[i] - v[j];
            if rc < best_rc {
                best_rc = rc;
                best = Some((i, j));
            }
        }
    }
    best
}

fn first_negative(
    cost: ArrayView2<'_, f64>,
    basic: &Array2<bool>,
    u: &[f64],
    v: &[f64],
    tol: f64,
) -> Option<(usize, usize)> {
    cost.indexed_iter()
        .find(|&((i, j), &c)| !basic[[i, j]] && c - u[i] - v[j] < -tol)
        .map(|(ij, _)| ij)
}

/// Reduced costs `C_ij − u_i − v_j` for the final basis (all ≥ −tol at optimality).
#[cfg(test)]
fn reduced_costs(cost: ArrayView2<'_, f64>, basic: &Array2<bool>) -> Array2<f64> {
    let (u, v) = basis_potentials(cost, basic);
    Array2::from_shape_fn(cost.dim(), |(i, j)| cost[[i, j]] - u[i] - v[j])
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Node {
    Row(usize),
    Col(usize),
}

/// The cycle closed by adding `(ei, ej)` to the basis tree, starting with
/// the entering cell and alternating gain/loss.
fn basis_cycle(basic: &Array2<bool>, ei: usize, ej: usize) -> Vec<(usize, usize)> {
    let (n, m) = basic.dim();
    // BFS from Row(ei) over basic cells until Col(ej) is reached.
    let mut parent_row = vec![usize::MAX; n];
    let mut parent_col = vec![usize::MAX; m];
    let mut seen_row = vec![false; n];
    let mut seen_col = vec![false; m];
    seen_row[ei] = true;
    let mut queue = VecDeque::from([Node::Row(ei)]);
    while let Some(node) = queue.pop_front() {
        match node {
            Node::Row(i) => {
                for j in 0..m {
                    if basic[[i, j]] && !seen_col[j] {
                        seen_col[j] = true;
                        parent_col[j] = i;
                        queue.push_back(Node::Col(j));
                    }
                }
            }
            Node::Col(j) => {
                if j == ej {
                    break;
                }
                for i in 0..n {
                    if basic[[i, j]] && !seen_row[i] {
                        seen_row[i] = true;
                        parent_row[i] = j;
                        queue.push_back(Node::Row(i));
                    }
                }
            }
        }
    }
    // Walk back from Col(ej) to Row(ei).
    let mut path = Vec::new();
    let mut col = ej;
    loop {
        let row = parent_col[col];
        path.push((row, col));
        if row == ei {
            break;
        }
        col = parent_row[row];
        path.push((row, col));
    }
    let mut cycle = vec![(ei, ej)];
    cycle.extend(path);
    cycle
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    // Optimum of this instance, cross-checked with an LP solver.
    const TEXTBOOK_OPTIMUM: f64 = 2850.0;

    #[test]
    fn textbook_instance() {
        let cost = array![[3.0, 1.0, 7.0, 4.0], [2.0, 6.0, 5.0, 9.0], [8.0, 3.0, 3.0, 2.0]];
        let (res, basic) =
            solve_with_basis(cost.view(), &[300.0, 400.0, 500.0], &[250.0, 350.0, 400.0, 200.0]).unwrap();
        assert!((res.value - TEXTBOOK_OPTIMUM).abs() < 1e-9, "{}", res.value);
        assert_eq!(basic.iter().filter(|&&b| b).count(), 3 + 4 - 1);
        assert!(reduced_costs(cost.view(), &basic).iter().all(|&rc| rc >= -1e-9));
        assert!((res.plan.sum() - 1200.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_square_instance() {
        let cost = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        let w = [1.0 / 3.0; 3];
        let res = transportation_simplex(cost.view(), &w, &w).unwrap();
        assert!(res.value.abs() < 1e-15);
    }

    #[test]
    fn mass_mismatch_rejected() {
        let cost = array![[1.0]];
        assert!(transportation_simplex(cost.view(), &[1.0], &[0.5]).is_err());
    }

}
