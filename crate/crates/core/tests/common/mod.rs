//! Independent reference solvers used by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use unmix_core::cls::BoxConstraints;

/// Dense Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[piv, col]].abs() <= 1e-13 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap([piv, k], [col, k]);
            }
            b.swap(piv, col);
        }
        for i in col + 1..n {
            let f = a[[i, col]] / a[[col, col]];
            for k in col..n {
                a[[i, k]] -= f * a[[col, k]];
            }
            b[i] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let s: f64 = (col + 1..n).map(|k| a[[col, k]] * b[k]).sum();
        b[col] = (b[col] - s) / a[[col, col]];
    }
    Some(b)
}

/// NNLS by enumerating every support: unconstrained least squares on each subset
/// of basis rows, keeping the best strictly positive solution.
pub fn brute_force_nnls(basis: ArrayView2<f64>, y: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let k = basis.nrows();
    let mut best = (Array1::zeros(k), y.dot(&y).sqrt());
    for mask in 1u32..(1 << k) {
        let rows: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let sub = basis.select(ndarray::Axis(0), &rows);
        let Some(coef) = gauss_solve(sub.dot(&sub.t()), sub.dot(&y)) else {
            continue;
        };
        if coef.iter().any(|c| *c <= 0.0) {
            continue;
        }
        let fit = coef.dot(&sub);
        let res = (&y - &fit).mapv(|v| v * v).sum().sqrt();
        if res < best.1 {
            let mut lambda = Array1::zeros(k);
            for (c, &r) in coef.iter().zip(&rows) {
                lambda[r] = *c;
            }
            best = (lambda, res);
        }
    }
    best
}

/// Minimiser of `μ‖u‖₁ + ‖u‖²/(2δ)` over `u ≥ 0, B u = f`, via a damped Newton
/// ascent on the concave dual `fᵀy − (δ/2)‖(Bᵀy − μ)₊‖²`. The primal point is
/// `u = δ (Bᵀy − μ)₊`.
pub fn sparse_qp_oracle(
    b: ArrayView2<f64>,
    f: ArrayView1<f64>,
    mu: f64,
    delta: f64,
) -> Array1<f64> {
    let m = b.nrows();
    let primal = |y: &Array1<f64>| b.t().dot(y).mapv(|v| delta * (v - mu).max(0.0));
    let dual = |y: &Array1<f64>| {
        let u = primal(y);
        f.dot(y) - u.dot(&u) / (2.0 * delta)
    };
    let mut y = Array1::<f64>::zeros(m);
    for _ in 0..500 {
        let u = primal(&y);
        let grad = &f - &b.dot(&u);
        if grad.dot(&grad).sqrt() <= 1e-13 * (1.0 + f.dot(&f).sqrt()) {
            break;
        }
        let active: Vec<usize> = (0..u.len()).filter(|&j| u[j] > 0.0).collect();
        let ba = b.select(ndarray::Axis(1), &active);
        let mut h = ba.dot(&ba.t()) * delta;
        let reg = 1e-12 * (1.0 + h.diag().sum());
        for i in 0..m {
            h[[i, i]] += reg;
        }
        let dir = gauss_solve(h, grad.clone()).unwrap_or_else(|| grad.clone());
        let g0 = dual(&y);
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..200 {
            let cand = &y + &(&dir * t);
            if dual(&cand) >= g0 + 1e-4 * t * slope {
                y = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    primal(&y)
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
}

pub fn unit(v: ArrayView1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v.mapv(|x| x / n)
}

/// Largest unit-normalised row distance under the best matching permutation of
/// the rows of `est` onto the rows of `truth` (exhaustive over permutations).
pub fn best_permutation_error(est: ArrayView2<f64>, truth: ArrayView2<f64>) -> f64 {
    let n = truth.nrows();
    assert_eq!(est.nrows(), n);
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = unit(est.row(i)) - unit(truth.row(j));
                    d.dot(&d).sqrt()
                })
                .collect()
        })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let worst = (0..n).map(|i| dist[i][p[i]]).fold(0.0, f64::max);
        best = best.min(worst);
    });
    best
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// Best cosine of each truth column against any column of `est`.
pub fn column_cosines(est: ArrayView2<f64>, truth: ArrayView2<f64>) -> Vec<f64> {
    truth
        .columns()
        .into_iter()
        .map(|t| {
            est.columns()
                .into_iter()
                .map(|e| cosine(e, t))
                .filter(|c| c.is_finite())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Uniform point of the box, scaled down into the total cap when needed.
pub fn random_feasible(cons: &BoxConstraints<f64>, rng: &mut impl rand::Rng) -> Vec<f64> {
    let mut s: Vec<f64> = cons
        .upper
        .iter()
        .map(|&u| rng.random::<f64>() * u)
        .collect();
    if let Some((total, group)) = &cons.total {
        let sum: f64 = s
            .iter()
            .zip(group)
            .filter(|(_, &g)| g)
            .map(|(v, _)| v)
            .sum();
        if sum > *total {
            let f = total / sum * rng.random::<f64>();
            for (v, &g) in s.iter_mut().zip(group) {
                if g {
                    *v *= f;
                }
            }
        }
    }
    s
}

pub fn column_objective(x: ArrayView1<f64>, a: ArrayView2<f64>, s: &[f64]) -> f64 {
    let r = &x - &a.dot(&ArrayView1::from(s));
    0.5 * r.dot(&r)
}
