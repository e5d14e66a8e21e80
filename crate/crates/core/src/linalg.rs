//! Small dense linear algebra: Cholesky, cyclic Jacobi eigensolver, a
//! Householder complement basis, and a phase-one simplex for feasibility.
//!
//! Matrices are at most a few hundred rows and stored as `Vec<Vec<f64>>`.

use crate::error::{Error, Result};

pub type Matrix = Vec<Vec<f64>>;

/// Lower-triangular `L` with `A = L Lᵀ`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return Err(Error::Numerical(format!(
                        "matrix is not positive definite (pivot {d:e} at {i})"
                    )));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.len();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest `λ` with `A x = λ B x`, for symmetric `A` and positive definite `B`.
pub fn max_generalized_eigenvalue(a: &Matrix, b: &Matrix) -> Result<f64> {
    let n = a.len();
    let l = cholesky(b)?;
    // C = L⁻¹ A L⁻ᵀ by two rounds of triangular solves; A and C are symmetric.
    let solve_lower = |rhs: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; n];
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[i][k] * x[k]).sum();
            x[i] = (rhs[i] - s) / l[i][i];
        }
        x
    };
    let half: Vec<Vec<f64>> = a.iter().map(|row| solve_lower(row)).collect();
    let mut c: Matrix = (0..n)
        .map(|k| {
            let col: Vec<f64> = half.iter().map(|h| h[k]).collect();
            solve_lower(&col)
        })
        .collect();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (c[i][j] + c[j][i]);
            c[i][j] = avg;
            c[j][i] = avg;
        }
    }
    Ok(*symmetric_eigenvalues(&c).last().expect("non-empty"))
}

/// Orthonormal basis (as rows) of the complement of a nonzero vector `g`.
pub fn complement_basis(g: &[f64]) -> Vec<Vec<f64>> {
    let n = g.len();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: Vec<f64> = g.iter().map(|x| x / norm).collect();
    // Householder reflection H with H e_0 = ±u; its other columns span u^⊥.
    let sign = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = u.clone();
    v[0] += sign;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    (1..n)
        .map(|k| {
            // column k of H = I - 2 v vᵀ / vᵀv
            (0..n)
                .map(|i| {
                    let id = if i == k { 1.0 } else { 0.0 };
                    id - 2.0 * v[i] * v[k] / vv
                })
                .collect()
        })
        .collect()
}

/// Linear constraint row `coeffs · x (=|≥) rhs`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub kind: ConstraintKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Eq,
    Ge,
}

/// Minimum total infeasibility of `{x ≥ 0}` subject to `rows`, found by a
/// dense phase-one simplex with Bland's rule. Zero (up to rounding) means
/// feasible.
pub fn phase_one_infeasibility(n_vars: usize, rows: &[Constraint]) -> f64 {
    let m = rows.len();
    let n_surplus = rows.iter().filter(|r| r.kind == ConstraintKind::Ge).count();
    // columns: original | surplus | artificial | rhs
    let n_cols = n_vars + n_surplus + m;
    let mut t = vec![vec![0.0; n_cols + 1]; m];
    let mut basis = vec![0usize; m];
    let mut s_idx = n_vars;
    for (i, r) in rows.iter().enumerate() {
        let sign = if r.rhs < 0.0 { -1.0 } else { 1.0 };
        for (j, &c) in r.coeffs.iter().enumerate() {
            t[i][j] = sign * c;
        }
        if r.kind == ConstraintKind::Ge {
            t[i][s_idx] = -sign;
            s_idx += 1;
        }
        let art = n_vars + n_surplus + i;
        t[i][art] = 1.0;
        t[i][n_cols] = sign * r.rhs;
        basis[i] = art;
    }
    // reduced costs of the objective Σ artificials
    let art_start = n_vars + n_surplus;
    let mut cost = vec![0.0; n_cols + 1];
    for row in &t {
        for j in 0..=n_cols {
            if j < art_start || j == n_cols {
                cost[j] -= row[j];
            }
        }
    }
    let eps = 1e-12;
    for _iter in 0..50_000 {
        // Bland: first improving column
        let Some(enter) = (0..n_cols).find(|&j| cost[j] < -eps) else {
            break;
        };
        let mut leave = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if t[i][enter] > eps {
                let ratio = t[i][n_cols] / t[i][enter];
                if ratio < best - 1e-15 || (ratio <= best + 1e-15 && leave.is_some_and(|l: usize| basis[i] < basis[l])) {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else {
            // unbounded direction cannot occur in phase one
            break;
        };
        let piv = t[r][enter];
        for x in t[r].iter_mut() {
            *x /= piv;
        }
        let pivot_row = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r && row[enter] != 0.0 {
                let f = row[enter];
                for (x, p) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
            }
        }
        let f = cost[enter];
        for (x, p) in cost.iter_mut().zip(&pivot_row) {
            *x -= f * p;
        }
        basis[r] = enter;
    }
    -cost[n_cols]
}
