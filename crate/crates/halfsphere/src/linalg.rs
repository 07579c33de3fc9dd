//! Small dense linear algebra helpers: Gaussian elimination, weighted least
//! squares, and a Jacobi eigensolver for the symmetric matrices of the
//! interaction analysis (N <= 20).

use crate::error::{Error, Result};

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
/// `a` is row-major, consumed.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for (row, _) in a.iter().zip(0..n) {
        debug_assert_eq!(row.len(), n);
    }
    for k in 0..n {
        let (piv, mx) = (k..n)
            .map(|i| (i, a[i][k].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if mx < 1e-300 {
            return Err(Error::Numerical("singular linear system".into()));
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Ok(x)
}

/// Weighted linear least squares: minimize sum_i w_i (rows_i . c - rhs_i)^2.
pub fn weighted_lstsq(rows: &[Vec<f64>], rhs: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let m = rows.len();
    if m == 0 {
        return Err(Error::Numerical("empty least-squares system".into()));
    }
    let n = rows[0].len();
    let mut ata = vec![vec![0.0; n]; n];
    let mut atb = vec![0.0; n];
    for i in 0..m {
        let w = weights[i];
        for j in 0..n {
            let rj = rows[i][j];
            atb[j] += w * rj * rhs[i];
            for k in j..n {
                ata[j][k] += w * rj * rows[i][k];
            }
        }
    }
    for j in 0..n {
        for k in 0..j {
            ata[j][k] = ata[k][j];
        }
    }
    solve_dense(ata, atb)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    if n == 0 {
        return Vec::new();
    }
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eigs.sort_by(|x, y| x.total_cmp(y));
    eigs
}

fn frobenius(m: &[Vec<f64>]) -> f64 {
    m.iter().flat_map(|r| r.iter()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Determinant by LU with partial pivoting.
pub fn determinant(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut det = 1.0;
    for k in 0..n {
        let (piv, mx) = (k..n)
            .map(|i| (i, m[i][k].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if mx == 0.0 {
            return 0.0;
        }
        if piv != k {
            m.swap(k, piv);
            det = -det;
        }
        det *= m[k][k];
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    det
}
