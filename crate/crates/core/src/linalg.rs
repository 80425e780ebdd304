//! Symmetric eigendecomposition and the Gaussian statistics built on it.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Matrix;

/// Eigenvalues and column eigenvectors of a symmetric matrix (cyclic Jacobi).
pub fn sym_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows;
    assert_eq!(a.rows, a.cols, "eigendecomposition needs a square matrix");
    let mut m = a.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = m.sum_squares().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m.get(p, p), m.get(q, q));
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    ((0..n).map(|i| m.get(i, i)).collect(), v)
}

/// Principal square root of a symmetric positive semi-definite matrix;
/// negative rounding-level eigenvalues are clamped to zero.
pub fn sqrt_psd(a: &Matrix) -> Matrix {
    let (vals, vecs) = sym_eigen(a);
    let n = a.rows;
    let mut out = Matrix::zeros(n, n);
    for (k, &l) in vals.iter().enumerate() {
        let s = libm::sqrt(l.max(0.0));
        for i in 0..n {
            let vi = vecs.get(i, k) * s;
            for j in 0..n {
                out.data[i * n + j] += vi * vecs.get(j, k);
            }
        }
    }
    out
}

/// Sample mean and unbiased covariance of row vectors.
pub fn mean_cov(samples: &[Vec<f64>]) -> (Vec<f64>, Matrix) {
    let n = samples.len();
    let d = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = Matrix::zeros(n, d);
    for (i, s) in samples.iter().enumerate() {
        for k in 0..d {
            centered.set(i, k, s[k] - mean[k]);
        }
    }
    let mut cov = Matrix::zeros(d, d);
    crate::tensor::gemm(1.0 / (n as f64 - 1.0).max(1.0), &centered, true, &centered, false, 0.0, &mut cov);
    (mean, cov)
}

pub fn trace(a: &Matrix) -> f64 {
    (0..a.rows.min(a.cols)).map(|i| a.get(i, i)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_reconstructs() {
        let a = Matrix::from_vec(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let (vals, v) = sym_eigen(&a);
        let mut d = Matrix::zeros(3, 3);
        for i in 0..3 {
            d.set(i, i, vals[i]);
        }
        let back = v.matmul(&d).matmul(&v.transpose());
        assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = Matrix::from_vec(2, 2, vec![5.0, 2.0, 2.0, 3.0]);
        let s = sqrt_psd(&a);
        assert!(s.matmul(&s).max_abs_diff(&a) < 1e-12);
    }
}
