//! Small dense linear algebra: symmetric eigensolver, PSD square root, LU solves.
//!
//! Matrices here are at most a few hundred rows (N_y = 80 in the standard
//! configuration), so plain O(n^3) routines are adequate.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

const MAX_JACOBI_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix: `a = vectors * diag(values) * vectors^T`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues in ascending order.
    pub values: Array1<T>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Array2<T>,
}

pub fn frobenius_norm<T: Real>(a: ArrayView2<'_, T>) -> T {
    a.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

fn require_square<T>(a: ArrayView2<'_, T>, what: &str) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::InvalidDimension(format!("{what} must be square, got {r}x{c}")));
    }
    Ok(r)
}

/// Cyclic Jacobi eigensolver for real symmetric matrices.
///
/// Only the symmetric part of `a` is used.
pub fn symmetric_eigen<T: Real>(a: ArrayView2<'_, T>) -> Result<SymmetricEigen<T>> {
    let n = require_square(a, "symmetric_eigen input")?;
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateData("non-finite matrix entry".into()));
    }
    let half = T::lit(0.5);
    let mut m = Array2::from_shape_fn((n, n), |(i, j)| half * (a[[i, j]] + a[[j, i]]));
    let mut v = Array2::<T>::eye(n);

    let total: T = frobenius_norm(m.view());
    let tiny = T::epsilon() * T::epsilon() * total * total;

    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off <= tiny || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (apq + apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[[k, p]];
                    let akq = m[[k, q]];
                    m[[k, p]] = c * akp - s * akq;
                    m[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[[p, k]];
                    let aqk = m[[q, k]];
                    m[[p, k]] = c * apk - s * aqk;
                    m[[q, k]] = s * apk + c * aqk;
                }
                m[[p, q]] = T::zero();
                m[[q, p]] = T::zero();
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).expect("finite eigenvalues"));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let vectors = v.select(Axis(1), &order);
    Ok(SymmetricEigen { values, vectors })
}

/// Square root of a symmetric positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct PsdRoot<T> {
    /// Symmetric PSD `r` with `r * r^T = a` (bitwise symmetric).
    pub root: Array2<T>,
    /// Number of slightly negative eigenvalues that were clamped to zero.
    pub clamped: usize,
    /// Eigenvalues of the input, ascending.
    pub eigenvalues: Array1<T>,
}

/// Symmetric square root `X Λ^{1/2} X^T` of a symmetric matrix.
///
/// Eigenvalues below `-rel_tol * max|λ|` are an error; eigenvalues in
/// `[-rel_tol * max|λ|, 0)` are clamped to zero.
pub fn psd_sqrt<T: Real>(a: ArrayView2<'_, T>, rel_tol: T) -> Result<PsdRoot<T>> {
    let n = require_square(a, "psd_sqrt input")?;
    let eig = symmetric_eigen(a)?;
    let scale = eig.values.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tol = rel_tol * scale;
    let mut clamped = 0;
    let mut roots = Array1::<T>::zeros(n);
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam < -tol {
            return Err(Error::NotPositiveSemidefinite {
                eigenvalue: lam.as_f64(),
                tolerance: tol.as_f64(),
            });
        }
        if lam < T::zero() {
            clamped += 1;
        } else {
            roots[k] = lam.sqrt();
        }
    }
    if clamped > 0 {
        log::warn!("psd_sqrt: clamped {clamped} slightly negative eigenvalue(s) to zero");
    }
    let x = &eig.vectors;
    let mut root = Array2::<T>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let mut acc = T::zero();
            for k in 0..n {
                acc += x[[i, k]] * roots[k] * x[[j, k]];
            }
            root[[i, j]] = acc;
            root[[j, i]] = acc;
        }
    }
    Ok(PsdRoot { root, clamped, eigenvalues: eig.values })
}

/// LU factorization with partial pivoting, `P a = L U`.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Array2<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn factor(a: ArrayView2<'_, T>) -> Result<Self> {
        let n = require_square(a, "LU input")?;
        let mut lu = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, pmax) = (k..n)
                .map(|i| (i, lu[[i, k]].abs()))
                .fold((k, T::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == T::zero() || !pmax.is_finite() {
                return Err(Error::SingularCovariance { condition: f64::INFINITY });
            }
            if piv != k {
                for j in 0..n {
                    lu.swap([k, j], [piv, j]);
                }
                perm.swap(k, piv);
            }
            let pivot = lu[[k, k]];
            for i in (k + 1)..n {
                let f = lu[[i, k]] / pivot;
                lu[[i, k]] = f;
                for j in (k + 1)..n {
                    let u = lu[[k, j]];
                    lu[[i, j]] -= f * u;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    /// Solves `a x = b` column by column.
    pub fn solve(&self, b: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let n = self.lu.nrows();
        if b.nrows() != n {
            return Err(Error::InvalidDimension(format!(
                "right-hand side has {} rows, expected {n}",
                b.nrows()
            )));
        }
        let mut x = b.select(Axis(0), &self.perm);
        for col in 0..x.ncols() {
            for i in 0..n {
                let mut acc = x[[i, col]];
                for k in 0..i {
                    acc -= self.lu[[i, k]] * x[[k, col]];
                }
                x[[i, col]] = acc;
            }
            for i in (0..n).rev() {
                let mut acc = x[[i, col]];
                for k in (i + 1)..n {
                    acc -= self.lu[[i, k]] * x[[k, col]];
                }
                x[[i, col]] = acc / self.lu[[i, i]];
            }
        }
        Ok(x)
    }
}

/// 2-norm condition number of a symmetric matrix from its eigenvalues.
pub fn symmetric_condition<T: Real>(a: ArrayView2<'_, T>) -> Result<T> {
    let eig = symmetric_eigen(a)?;
    let (lo, hi) = eig
        .values
        .iter()
        .fold((T::infinity(), T::zero()), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if hi == T::zero() || lo == T::zero() {
        return Ok(T::infinity());
    }
    Ok(hi / lo)
}
