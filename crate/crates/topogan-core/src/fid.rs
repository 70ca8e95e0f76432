//! Fréchet distance between Gaussian fits of two embedding sets:
//! ‖μ_r − μ_f‖² + Tr(Σ_r + Σ_f − 2(Σ_r Σ_f)^{1/2}).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::linalg::{matmul_sq, sym_eig, sym_sqrt};
use crate::tensor::Tensor;

/// Sample mean and covariance (1/(N−1) normalization) of an N×E set.
pub fn fit_gaussian(rows: &Tensor<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, e) = rows.dims2()?;
    if n < 2 {
        return Err(CoreError::InvalidArg(format!(
            "need at least 2 embedding rows, got {n}"
        )));
    }
    let mut mean = vec![0.0f64; e];
    for r in 0..n {
        for (m, &x) in mean.iter_mut().zip(&rows.data()[r * e..(r + 1) * e]) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; e * e];
    for r in 0..n {
        let row = &rows.data()[r * e..(r + 1) * e];
        for i in 0..e {
            let di = row[i] - mean[i];
            for j in i..e {
                cov[i * e + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let norm = 1.0 / (n as f64 - 1.0);
    for i in 0..e {
        for j in i..e {
            let v = cov[i * e + j] * norm;
            cov[i * e + j] = v;
            cov[j * e + i] = v;
        }
    }
    Ok((mean, cov))
}

/// Fréchet distance of the Gaussian fits of two embedding sets (N_r×E
/// and N_f×E). The cross trace Tr((Σ_r Σ_f)^{1/2}) is computed from the
/// symmetric product Σ_r^{1/2}·Σ_f·Σ_r^{1/2}, clamping negative
/// eigenvalues to zero; the result is clamped to be nonnegative.
pub fn fid(real: &Tensor<f64>, fake: &Tensor<f64>) -> Result<f64> {
    let (_, er) = real.dims2()?;
    let (_, ef) = fake.dims2()?;
    if er != ef {
        return Err(CoreError::Shape(format!(
            "embedding widths differ: {er} vs {ef}"
        )));
    }
    let e = er;
    let (mu_r, cov_r) = fit_gaussian(real)?;
    let (mu_f, cov_f) = fit_gaussian(fake)?;

    let mean_term: f64 = mu_r
        .iter()
        .zip(&mu_f)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let trace_r: f64 = (0..e).map(|i| cov_r[i * e + i]).sum();
    let trace_f: f64 = (0..e).map(|i| cov_f[i * e + i]).sum();

    // Tr((Σr Σf)^{1/2}) via the similar symmetric matrix S Σf S with
    // S = Σr^{1/2}.
    let s = sym_sqrt(&cov_r, e)?;
    let m = matmul_sq(&s, &matmul_sq(&cov_f, &s, e), e);
    // Symmetrize against rounding before the eigensolve.
    let mut msym = vec![0.0f64; e * e];
    for i in 0..e {
        for j in 0..e {
            msym[i * e + j] = 0.5 * (m[i * e + j] + m[j * e + i]);
        }
    }
    let (evals, _) = sym_eig(&msym, e)?;
    let cross: f64 = evals.iter().map(|&l| libm::sqrt(l.max(0.0))).sum();

    Ok((mean_term + trace_r + trace_f - 2.0 * cross).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn identical_sets_have_zero_distance() {
        let mut rng = SeedStream::new(3);
        let data: Vec<f64> = (0..50 * 4).map(|_| rng.normal()).collect();
        let t = Tensor::new(&[50, 4], data).unwrap();
        let d = fid(&t, &t).unwrap();
        assert!(d < 1e-6, "self distance {d}");
    }

    #[test]
    fn rejects_single_row() {
        let t = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let u = Tensor::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(fid(&t, &u).is_err());
    }

    #[test]
    fn translation_invariance() {
        let mut rng = SeedStream::new(8);
        let a: Vec<f64> = (0..40 * 3).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..40 * 3).map(|_| rng.normal() * 1.4 + 0.3).collect();
        let ta = Tensor::new(&[40, 3], a.clone()).unwrap();
        let tb = Tensor::new(&[40, 3], b.clone()).unwrap();
        let base = fid(&ta, &tb).unwrap();
        let shift = [5.0, -2.0, 0.7];
        let sa: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, v)| v + shift[i % 3])
            .collect();
        let sb: Vec<f64> = b
            .iter()
            .enumerate()
            .map(|(i, v)| v + shift[i % 3])
            .collect();
        let shifted = fid(
            &Tensor::new(&[40, 3], sa).unwrap(),
            &Tensor::new(&[40, 3], sb).unwrap(),
        )
        .unwrap();
        assert!((base - shifted).abs() < 1e-9, "{base} vs {shifted}");
    }
}
