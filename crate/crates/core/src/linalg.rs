//! Small dense kernels used by the solvers. Matrices here are tiny (at most a
//! few dozen columns), so plain Householder and Cholesky are sufficient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::scalar::Scalar;

/// Least-squares solution of `a x ≈ b` for a tall `a` (rows ≥ cols) by Householder QR.
/// Returns `None` when `a` is numerically rank deficient.
pub(crate) fn lstsq<T: Scalar>(a: ArrayView2<T>, b: ArrayView1<T>) -> Option<Array1<T>> {
    let (m, n) = a.dim();
    if n == 0 {
        return Some(Array1::zeros(0));
    }
    if m < n {
        return None;
    }
    let mut r = a.to_owned();
    let mut qtb = b.to_owned();
    let scale = r.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if scale == T::zero() {
        return None;
    }
    let eps = T::epsilon() * T::lit(64.0) * T::lit(m.max(n) as f64);

    for k in 0..n {
        let norm = (k..m).map(|i| r[[i, k]] * r[[i, k]]).sum::<T>().sqrt();
        if norm <= eps * scale {
            return None;
        }
        let alpha = if r[[k, k]] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (k..m).map(|i| r[[i, k]]).collect();
        v[0] = v[0] - alpha;
        let vnorm2: T = v.iter().map(|&x| x * x).sum();
        if vnorm2 > T::zero() {
            for j in k..n {
                let dot: T = (k..m).map(|i| v[i - k] * r[[i, j]]).sum();
                let f = (dot + dot) / vnorm2;
                for i in k..m {
                    r[[i, j]] = r[[i, j]] - f * v[i - k];
                }
            }
            let dot: T = (k..m).map(|i| v[i - k] * qtb[i]).sum();
            let f = (dot + dot) / vnorm2;
            for i in k..m {
                qtb[i] = qtb[i] - f * v[i - k];
            }
        }
    }
    let diag_max = (0..n).fold(T::zero(), |acc, k| acc.max(r[[k, k]].abs()));
    let mut x = Array1::zeros(n);
    for k in (0..n).rev() {
        let d = r[[k, k]];
        if d.abs() <= eps * diag_max {
            return None;
        }
        let s: T = (k + 1..n).map(|j| r[[k, j]] * x[j]).sum();
        x[k] = (qtb[k] - s) / d;
    }
    Some(x)
}

/// Solves `a x = b` for symmetric positive definite `a`; `None` if not SPD to working precision.
pub(crate) fn cholesky_solve<T: Scalar>(a: ArrayView2<T>, b: ArrayView1<T>) -> Option<Array1<T>> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    let diag_max = (0..n).fold(T::zero(), |acc, i| acc.max(a[[i, i]].abs()));
    let tiny = T::epsilon() * T::lit(1e3) * diag_max.max(T::min_positive_value());
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d = d - l[[j, k]] * l[[j, k]];
        }
        if d <= tiny {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let s: T = (0..i).map(|k| l[[i, k]] * y[k]).sum();
        y[i] = (b[i] - s) / l[[i, i]];
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: T = (i + 1..n).map(|k| l[[k, i]] * x[k]).sum();
        x[i] = (y[i] - s) / l[[i, i]];
    }
    Some(x)
}

/// Estimate of the largest singular value of `b` from `steps` power iterations on `bᵀb`.
pub(crate) fn spectral_norm<T: Scalar>(b: ArrayView2<T>, steps: usize) -> T {
    let n = b.ncols();
    if n == 0 || b.nrows() == 0 {
        return T::zero();
    }
    // deterministic, generically non-orthogonal start
    let mut x = Array1::from_shape_fn(n, |i| T::one() + T::lit(i as f64) * T::lit(0.01));
    let mut sigma = T::zero();
    for _ in 0..steps.max(1) {
        let nx = x.dot(&x).sqrt();
        if nx == T::zero() {
            return T::zero();
        }
        x.mapv_inplace(|v| v / nx);
        let bx = b.dot(&x);
        sigma = bx.dot(&bx).sqrt();
        x = b.t().dot(&bx);
    }
    sigma
}
