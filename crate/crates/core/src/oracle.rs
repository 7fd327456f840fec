//! Independent reference implementations used only by the test suites.
//!
//! Nothing in the library proper may call into this module: each function
//! here is a deliberately separate route to an answer (exhaustive
//! enumeration, finite differences, Gauss-Jordan) so the tests can check the
//! production path against it.

use crate::linalg::Matrix;

/// Exhaustive transportation-LP oracle: enumerate every basis (spanning tree
/// of the bipartite support graph, `m + n - 1` cells), solve its flows by
/// leaf elimination, keep the feasible ones, return the best objective.
///
/// Exponential in the support size; intended for supports ≤ 5.
pub fn transport_bruteforce(cost: &Matrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let m = a.len();
    let n = b.len();
    assert!(m * n <= 36, "oracle is exhaustive; keep supports small");
    let cells: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .collect();
    let basis_size = m + n - 1;
    let mut best = f64::INFINITY;

    // Iterate all cell subsets of size m+n-1 via bitmask combinations.
    let total = cells.len();
    let mut combo: Vec<usize> = (0..basis_size).collect();
    loop {
        if let Some(objective) = try_basis(cost, a, b, &cells, &combo) {
            if objective < best {
                best = objective;
            }
        }
        // Next combination in lexicographic order.
        let mut i = basis_size;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] != i + total - basis_size {
                combo[i] += 1;
                for k in i + 1..basis_size {
                    combo[k] = combo[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solve flows for one candidate basis; `None` if it is not a spanning tree
/// or the flows go negative.
fn try_basis(
    cost: &Matrix<f64>,
    a: &[f64],
    b: &[f64],
    cells: &[(usize, usize)],
    combo: &[usize],
) -> Option<f64> {
    let m = a.len();
    let n = b.len();
    let chosen: Vec<(usize, usize)> = combo.iter().map(|&c| cells[c]).collect();

    // Leaf elimination: a node incident to exactly one chosen cell forces
    // that cell's flow. A spanning tree always has a leaf; anything else
    // stalls or leaves residue.
    let mut remaining: Vec<(usize, usize, bool)> =
        chosen.iter().map(|&(i, j)| (i, j, true)).collect();
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0f64; chosen.len()];
    let mut active = chosen.len();

    while active > 0 {
        let mut progressed = false;
        for idx in 0..remaining.len() {
            let (i, j, alive) = remaining[idx];
            if !alive {
                continue;
            }
            let row_deg = remaining
                .iter()
                .filter(|&&(ri, _, al)| al && ri == i)
                .count();
            let col_deg = remaining
                .iter()
                .filter(|&&(_, cj, al)| al && cj == j)
                .count();
            if row_deg == 1 {
                flow[idx] = supply[i];
                demand[j] -= supply[i];
                supply[i] = 0.0;
            } else if col_deg == 1 {
                flow[idx] = demand[j];
                supply[i] -= demand[j];
                demand[j] = 0.0;
            } else {
                continue;
            }
            remaining[idx].2 = false;
            active -= 1;
            progressed = true;
        }
        if !progressed {
            return None; // cycle: not a tree
        }
    }
    // All supply/demand must be consumed (spanning), flows non-negative.
    if supply.iter().any(|&s| s.abs() > 1e-9) || demand.iter().any(|&d| d.abs() > 1e-9) {
        return None;
    }
    if flow.iter().any(|&f| f < -1e-12) {
        return None;
    }
    let _ = (m, n);
    Some(
        chosen
            .iter()
            .zip(&flow)
            .map(|(&(i, j), &f)| cost.get(i, j) * f)
            .sum(),
    )
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let orig = xp[k];
        xp[k] = orig + h;
        let fp = f(&xp);
        xp[k] = orig - h;
        let fm = f(&xp);
        xp[k] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Relative-error comparison for gradient checks: |a−f| / max(|a|+|f|, 1e-6).
/// The floor reflects what central differences at h = 1e-5 can resolve in
/// f64 (truncation ~1e-10, roundoff ~1e-11): components below it are
/// measurement noise, not signal.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &f)| (a - f).abs() / (a.abs() + f.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Closed-form weighted ridge solve via Gauss-Jordan inversion (independent
/// of the library's Cholesky path). Design matrix rows are `[1, z...]`; the
/// intercept is unpenalized. Returns `(intercept, coefficients)`.
pub fn weighted_ridge_gauss_jordan(
    masks: &[Vec<f64>],
    targets: &[f64],
    sample_weights: &[f64],
    lambda: f64,
) -> (f64, Vec<f64>) {
    let n = masks.len();
    let p = masks[0].len();
    let d = p + 1;

    // A = Xᵀ S X + λ diag(0,1..1), rhs = Xᵀ S y
    let mut a = vec![vec![0.0f64; d]; d];
    let mut rhs = vec![0.0f64; d];
    for s in 0..n {
        let w = sample_weights[s];
        let mut xrow = Vec::with_capacity(d);
        xrow.push(1.0);
        xrow.extend_from_slice(&masks[s]);
        for i in 0..d {
            rhs[i] += w * xrow[i] * targets[s];
            for j in 0..d {
                a[i][j] += w * xrow[i] * xrow[j];
            }
        }
    }
    for i in 1..d {
        a[i][i] += lambda;
    }

    // Gauss-Jordan with partial pivoting on the augmented system.
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .zip(&rhs)
        .map(|(row, &r)| {
            let mut v = row.clone();
            v.push(r);
            v
        })
        .collect();
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, pivot);
        let pv = aug[col][col];
        assert!(pv.abs() > 1e-12, "singular oracle system");
        for j in col..=d {
            aug[col][j] /= pv;
        }
        for i in 0..d {
            if i != col {
                let factor = aug[i][col];
                for j in col..=d {
                    aug[i][j] -= factor * aug[col][j];
                }
            }
        }
    }
    let beta: Vec<f64> = aug.iter().map(|row| row[d]).collect();
    (beta[0], beta[1..].to_vec())
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bruteforce_matches_forced_plans() {
        // Single row: everything ships at row cost.
        let cost = Matrix::from_rows(&[vec![2.0, 8.0], vec![5.0, 1.0]]);
        let obj = transport_bruteforce(&cost, &[0.5, 0.5], &[0.5, 0.5]);
        // Diagonal basis: 0.5*2 + 0.5*1 = 1.5; crossing costs 0.5*8+0.5*5=6.5.
        assert!((obj - 1.5).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_identity_is_zero() {
        let cost = Matrix::from_rows(&[vec![0.0, 3.0], vec![3.0, 0.0]]);
        let obj = transport_bruteforce(&cost, &[0.25, 0.75], &[0.25, 0.75]);
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn finite_differences_on_quadratic() {
        let mut f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1];
        let g = finite_difference_gradient(&mut f, &[2.0, -1.0], 1e-5);
        assert!((g[0] - (2.0 * 2.0 + 3.0 * -1.0)).abs() < 1e-8);
        assert!((g[1] - 3.0 * 2.0).abs() < 1e-8);
    }

    #[test]
    fn ridge_oracle_recovers_exact_linear_fit() {
        // y = 2 z0 - z1 + 0.5, tiny lambda, uniform weights.
        let masks = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let targets: Vec<f64> = masks.iter().map(|m| 2.0 * m[0] - m[1] + 0.5).collect();
        let weights = vec![1.0; 4];
        let (b0, coefs) = weighted_ridge_gauss_jordan(&masks, &targets, &weights, 1e-9);
        assert!((b0 - 0.5).abs() < 1e-6);
        assert!((coefs[0] - 2.0).abs() < 1e-6);
        assert!((coefs[1] + 1.0).abs() < 1e-6);
    }
}
