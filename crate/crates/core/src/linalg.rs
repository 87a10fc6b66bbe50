//! Small dense row-major matrices. Dimensions here are the torus dimension,
//! so a few hand-written routines are all that is needed.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// `out = a (r x k) * b (k x c)`.
pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * c + j];
            }
            out[i * c + j] = s;
        }
    }
}

/// `out = s s^T` for `s` of shape `n x m`.
pub fn outer_self(s: &[f64], n: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..m {
                acc += s[i * m + k] * s[j * m + k];
            }
            out[i * n + j] = acc;
        }
    }
}

pub fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

/// Hilbert–Schmidt (Frobenius) norm.
pub fn hs_norm(a: &[f64]) -> f64 {
    libm::sqrt(a.iter().map(|v| v * v).sum())
}

pub fn max_asymmetry(a: &[f64], n: usize) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            m = m.max(libm::fabs(a[i * n + j] - a[j * n + i]));
        }
    }
    m
}

pub fn symmetrize(a: &mut [f64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
/// Returns eigenvalues (ascending) and eigenvectors as columns of a row-major matrix.
pub fn sym_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        let scale: f64 = m.iter().map(|x| x * x).sum::<f64>();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
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
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).unwrap_or(core::cmp::Ordering::Equal));
    let vals: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + new] = v[k * n + old];
        }
    }
    (vals, vecs)
}

pub fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    match n {
        1 => a[0],
        2 => {
            let (p, q, r) = (a[0], 0.5 * (a[1] + a[2]), a[3]);
            let mean = 0.5 * (p + r);
            let d = libm::sqrt(0.25 * (p - r) * (p - r) + q * q);
            mean - d
        }
        _ => sym_eigen(a, n).0[0],
    }
}

/// Rebuild `V diag(vals) V^T`.
pub fn from_eigen(vals: &[f64], vecs: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += vecs[i * n + k] * vals[k] * vecs[j * n + k];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Symmetric square root of a PSD matrix; eigenvalues in `(-tol, 0)` are clipped.
pub fn psd_sqrt(a: &[f64], n: usize, tol: f64) -> Result<Vec<f64>> {
    let (vals, vecs) = sym_eigen(a, n);
    if vals[0] < -tol {
        return Err(Error::NotPsd {
            min_eigenvalue: vals[0],
        });
    }
    let roots: Vec<f64> = vals.iter().map(|&v| libm::sqrt(v.max(0.0))).collect();
    Ok(from_eigen(&roots, &vecs, n))
}

/// Lower Cholesky factor, or `None` if `a` is not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = libm::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve `L z = y` for lower-triangular `L`.
pub fn forward_solve(l: &[f64], y: &[f64], n: usize, z: &mut [f64]) {
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_known_matrix() {
        let a = [2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let (vals, vecs) = sym_eigen(&a, 3);
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        assert!((vals[2] - 5.0).abs() < 1e-12);
        let back = from_eigen(&vals, &vecs, 3);
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn min_eig_2x2_matches_jacobi() {
        let a = [1.3, -0.4, -0.4, 0.2];
        assert!((min_eigenvalue(&a, 2) - sym_eigen(&a, 2).0[0]).abs() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let s = psd_sqrt(&a, 2, 0.0).unwrap();
        let mut back = [0.0; 4];
        matmul(&s, &s, 2, 2, 2, &mut back);
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(psd_sqrt(&[-1.0], 1, 1e-8).is_err());
    }

    #[test]
    fn cholesky_solves() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        let mut z = [0.0; 2];
        forward_solve(&l, &[2.0, 1.0], 2, &mut z);
        assert!((l[0] * z[0] - 2.0).abs() < 1e-14);
        assert!(cholesky(&[0.0], 1).is_none());
    }
}
