//! Small dense linear algebra on row-major buffers.
//!
//! Sizes here never exceed a few hundred, so plain partial-pivot elimination
//! and cyclic Jacobi are exact enough and keep the core free of a LAPACK
//! dependency.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Solves `a x = b` for each column of `b` (`n x nrhs`, row-major).
pub fn solve<T: Scalar>(a: &[T], n: usize, b: &[T], nrhs: usize) -> Result<Vec<T>> {
    if a.len() != n * n {
        return Err(Error::DimensionMismatch {
            what: "solve: matrix",
            expected: n * n,
            got: a.len(),
        });
    }
    if b.len() != n * nrhs {
        return Err(Error::DimensionMismatch {
            what: "solve: rhs",
            expected: n * nrhs,
            got: b.len(),
        });
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tol = scale * T::epsilon() * T::from_usize_lossy(n.max(1));

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m[i * n + col]
                    .abs()
                    .partial_cmp(&m[j * n + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if m[pivot * n + col].abs() <= tol {
            return Err(Error::Singular);
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            for j in 0..nrhs {
                x.swap(col * nrhs + j, pivot * nrhs + j);
            }
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                let v = m[col * n + j];
                m[row * n + j] -= f * v;
            }
            for j in 0..nrhs {
                let v = x[col * nrhs + j];
                x[row * nrhs + j] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let d = m[col * n + col];
        for j in 0..nrhs {
            let mut acc = x[col * nrhs + j];
            for k in col + 1..n {
                acc -= m[col * n + k] * x[k * nrhs + j];
            }
            x[col * nrhs + j] = acc / d;
        }
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotation, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(a: &[T], n: usize) -> Result<Vec<T>> {
    if a.len() != n * n {
        return Err(Error::DimensionMismatch {
            what: "eigen: matrix",
            expected: n * n,
            got: a.len(),
        });
    }
    let mut m = a.to_vec();
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let diag: T = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum();
        if off <= T::epsilon() * T::epsilon() * (diag + off) || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = [2.0f64, 1.0, 1.0, 3.0];
        let b = [3.0, 5.0];
        let x = solve(&a, 2, &b, 1).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14);
        assert!((x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(matches!(solve(&a, 2, &[1.0, 1.0], 1), Err(Error::Singular)));
    }

    #[test]
    fn jacobi_diagonalises_2x2() {
        let a = [2.0f64, 1.0, 1.0, 2.0];
        let e = symmetric_eigenvalues(&a, 2).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
    }
}
