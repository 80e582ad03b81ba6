//! Active-set nonnegative least squares (Lawson–Hanson).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::scalar::Scalar;

/// Default dual-feasibility tolerance, relative to `‖b_j‖ ‖y‖`.
pub const NNLS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution<T: Scalar> {
    pub lambda: Array1<T>,
    pub residual_norm: T,
    pub iterations: usize,
}

/// Minimizes `‖λᵀB − y‖₂` over `λ ≥ 0`, where the rows of `B` (`k × m`) are the basis.
pub fn nnls<T: Scalar>(basis: ArrayView2<T>, y: ArrayView1<T>) -> Result<NnlsSolution<T>> {
    let (k, m) = basis.dim();
    if k == 0 {
        return Err(Error::DimensionMismatch(
            "nnls needs at least one basis row".into(),
        ));
    }
    if y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "basis rows have length {m}, target has {}",
            y.len()
        )));
    }
    let rows: Vec<usize> = (0..k).collect();
    Ok(nnls_subset(basis, &rows, y, T::lit(NNLS_TOL)))
}

/// NNLS using only the rows of `basis` listed in `rows`; `lambda` is indexed like `rows`.
pub(crate) fn nnls_subset<T: Scalar>(
    basis: ArrayView2<T>,
    rows: &[usize],
    y: ArrayView1<T>,
    tol: T,
) -> NnlsSolution<T> {
    let k = rows.len();
    let m = y.len();
    let mut lambda = Array1::<T>::zeros(k);
    let y_norm = y.dot(&y).sqrt();
    if k == 0 || y_norm == T::zero() {
        return NnlsSolution {
            lambda,
            residual_norm: y_norm,
            iterations: 0,
        };
    }
    let row_norm: Vec<T> = rows
        .iter()
        .map(|&r| basis.row(r).dot(&basis.row(r)).sqrt())
        .collect();

    let mut passive: Vec<usize> = Vec::new();
    let mut in_passive = vec![false; k];
    // rows found numerically dependent on the current passive set
    let mut blocked = vec![false; k];
    let mut residual = y.to_owned();
    let max_outer = 3 * k + 10;
    let mut iterations = 0;

    for _ in 0..max_outer {
        iterations += 1;
        // dual vector w = B r, normalised per row so the test is scale free
        let mut best: Option<(usize, T)> = None;
        for j in 0..k {
            if in_passive[j] || blocked[j] || row_norm[j] == T::zero() {
                continue;
            }
            let w = basis.row(rows[j]).dot(&residual) / row_norm[j];
            if w > tol * y_norm && best.is_none_or(|(_, bw)| w > bw) {
                best = Some((j, w));
            }
        }
        let Some((t, _)) = best else { break };
        if passive.len() == m {
            break;
        }
        passive.push(t);
        in_passive[t] = true;
        let mut added = true;

        loop {
            let sub =
                Array2::from_shape_fn((m, passive.len()), |(i, c)| basis[[rows[passive[c]], i]]);
            let Some(z) = lstsq(sub.view(), y) else {
                // newly added row is dependent on the passive set
                let last = passive.pop().expect("nonempty");
                in_passive[last] = false;
                blocked[last] = true;
                added = false;
                break;
            };
            if z.iter().all(|&v| v > T::zero()) {
                for (c, &j) in passive.iter().enumerate() {
                    lambda[j] = z[c];
                }
                break;
            }
            // step towards z until the first passive coefficient hits zero
            let mut alpha = T::one();
            for (c, &j) in passive.iter().enumerate() {
                if z[c] <= T::zero() {
                    let denom = lambda[j] - z[c];
                    if denom > T::zero() {
                        alpha = alpha.min(lambda[j] / denom);
                    }
                }
            }
            for (c, &j) in passive.iter().enumerate() {
                lambda[j] = lambda[j] + alpha * (z[c] - lambda[j]);
            }
            let eps = T::epsilon() * T::lit(16.0);
            let before = passive.len();
            passive.retain(|&j| {
                let keep = lambda[j] > eps * (T::one() + lambda[j].abs());
                if !keep {
                    lambda[j] = T::zero();
                    in_passive[j] = false;
                }
                keep
            });
            if passive.is_empty() {
                break;
            }
            if passive.len() == before {
                // rounding kept every coefficient positive; drop the smallest to make progress
                let (pos, _) = passive
                    .iter()
                    .enumerate()
                    .min_by(|a, b| lambda[*a.1].partial_cmp(&lambda[*b.1]).unwrap())
                    .expect("nonempty");
                let j = passive.remove(pos);
                lambda[j] = T::zero();
                in_passive[j] = false;
            }
        }
        residual = y.to_owned();
        for &j in &passive {
            residual.scaled_add(-lambda[j], &basis.row(rows[j]));
        }
        if added {
            // a row blocked against an older passive set may be admissible again
            blocked.iter_mut().for_each(|b| *b = false);
        }
    }
    let mut fitted = Array1::<T>::zeros(m);
    for (j, &l) in lambda.iter().enumerate() {
        if l > T::zero() {
            fitted.scaled_add(l, &basis.row(rows[j]));
        }
    }
    let r = &y - &fitted;
    NnlsSolution {
        lambda,
        residual_norm: r.dot(&r).sqrt(),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn target_inside_cone() {
        let s = nnls(
            array![[1.0_f64, 0.0], [0.0, 1.0]].view(),
            array![3.0, 4.0].view(),
        )
        .unwrap();
        assert!((s.lambda[0] - 3.0).abs() < 1e-14 && (s.lambda[1] - 4.0).abs() < 1e-14);
        assert!(s.residual_norm < 1e-14);
    }

    #[test]
    fn orthogonal_target() {
        let s = nnls(array![[1.0_f64, 0.0]].view(), array![0.0, 1.0].view()).unwrap();
        assert_eq!(s.lambda[0], 0.0);
        assert!((s.residual_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_solution() {
        // minimise (l1 + l2)² + (l2 − 1)²  →  l1 = 0, l2 = 1/2
        let s = nnls(
            array![[1.0_f64, 0.0], [1.0, 1.0]].view(),
            array![0.0, 1.0].view(),
        )
        .unwrap();
        assert!(s.lambda[0].abs() < 1e-14);
        assert!((s.lambda[1] - 0.5).abs() < 1e-14);
        assert!((s.residual_norm - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        assert!(nnls(Array2::<f64>::zeros((0, 2)).view(), array![1.0, 1.0].view()).is_err());
        assert!(nnls(array![[1.0, 0.0]].view(), array![1.0].view()).is_err());
    }

    #[test]
    fn duplicated_and_dependent_rows() {
        let b = array![[1.0, 1.0], [2.0, 2.0], [1.0, 0.0], [0.0, 1.0]];
        let s = nnls(b.view(), array![2.0, 3.0].view()).unwrap();
        assert!(s.residual_norm < 1e-12);
        assert!(s.lambda.iter().all(|&l| l >= 0.0));
    }
}
