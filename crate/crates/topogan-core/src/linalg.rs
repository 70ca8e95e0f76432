//! Small dense symmetric linear algebra for the feature-space distance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns eigenvalues and the orthogonal matrix V (column j of V is the
/// eigenvector of eigenvalue j), so A = V·diag(λ)·Vᵀ.
pub fn sym_eig(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(CoreError::Shape(format!(
            "matrix buffer {} != {n}x{n}",
            a.len()
        )));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-14 * scale;

    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(theta * theta + 1.0))
                } else {
                    -1.0 / (-theta + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                // Rotate rows/columns p and q of M.
                for i in 0..n {
                    let mip = m[i * n + p];
                    let miq = m[i * n + q];
                    m[i * n + p] = c * mip - s * miq;
                    m[i * n + q] = s * mip + c * miq;
                }
                for i in 0..n {
                    let mpi = m[p * n + i];
                    let mqi = m[q * n + i];
                    m[p * n + i] = c * mpi - s * mqi;
                    m[q * n + i] = s * mpi + c * mqi;
                }
                // Accumulate the rotation into V.
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let evals: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    Ok((evals, v))
}

/// C = A·B for square n×n row-major matrices.
pub fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; n * n];
    for i in 0..n {
        for p in 0..n {
            let aip = a[i * n + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aip * b[p * n + j];
            }
        }
    }
    c
}

/// Symmetric positive-semidefinite square root via eigendecomposition;
/// negative eigenvalues (numerical noise) are clamped to zero.
pub fn sym_sqrt(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let (evals, v) = sym_eig(a, n)?;
    // S = V·diag(√λ⁺)·Vᵀ
    let mut scaled = vec![0.0f64; n * n]; // V·diag(√λ⁺)
    for i in 0..n {
        for j in 0..n {
            let lam = evals[j].max(0.0);
            scaled[i * n + j] = v[i * n + j] * libm::sqrt(lam);
        }
    }
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..n {
                s += scaled[i * n + p] * v[j * n + p];
            }
            out[i * n + j] = s;
        }
    }
    Ok(out)
}
