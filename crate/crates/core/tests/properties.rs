use ndarray::{Array1, Array2};
use proptest::collection::vec;
use proptest::prelude::*;
use unmix_core::cls::BoxConstraints;
use unmix_core::cone::{nnls, score_rows, ConeConfig};
use unmix_core::nmf::{nmf_factorize_matrix, NmfConfig};
use unmix_core::pipeline::cosine_similarity;
use unmix_core::sparse::shrink_plus;

fn constraints() -> impl Strategy<Value = (BoxConstraints<f64>, Vec<f64>)> {
    (1usize..6).prop_flat_map(|k| {
        (
            vec(0.01f64..2.0, k),
            proptest::option::of((0.01f64..2.0, vec(any::<bool>(), k))),
            vec(-3.0f64..3.0, k),
        )
            .prop_map(|(upper, total, y)| (BoxConstraints { upper, total }, y))
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

proptest! {
    #[test]
    fn projection_is_feasible_idempotent_and_nearest((cons, y) in constraints(), probes in vec(vec(0.0f64..1.0, 6), 20)) {
        let mut p = y.clone();
        cons.project(&mut p);
        prop_assert!(cons.is_feasible(&p, 1e-12));
        let mut pp = p.clone();
        cons.project(&mut pp);
        prop_assert!(dist(&p, &pp) <= 1e-12);
        let d = dist(&y, &p);
        for probe in probes {
            // scale a unit-cube point into the feasible set
            let mut t: Vec<f64> = cons.upper.iter().zip(&probe).map(|(u, f)| u * f).collect();
            if let Some((total, group)) = &cons.total {
                let sum: f64 = t.iter().zip(group).filter(|(_, &g)| g).map(|(v, _)| v).sum();
                if sum > *total {
                    for (v, &g) in t.iter_mut().zip(group) {
                        if g { *v *= total / sum; }
                    }
                }
            }
            prop_assert!(d <= dist(&y, &t) + 1e-9);
        }
    }

    #[test]
    fn shrink_plus_is_nonnegative_and_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0, mu in 0.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(shrink_plus(lo, mu) >= 0.0);
        prop_assert!(shrink_plus(lo, mu) <= shrink_plus(hi, mu));
        prop_assert!(shrink_plus(hi, mu) - shrink_plus(lo, mu) <= hi - lo + 1e-12);
    }

    #[test]
    fn nnls_satisfies_kkt(k in 1usize..6, m in 1usize..8, seed in vec(-1.0f64..1.0, 48 + 8)) {
        let basis = Array2::from_shape_fn((k, m), |(i, j)| seed[i * 8 + j]);
        let y = Array1::from_shape_fn(m, |j| seed[48 + j]);
        let sol = nnls(basis.view(), y.view()).unwrap();
        prop_assert!(sol.lambda.iter().all(|v| *v >= 0.0));
        let r = &y - &sol.lambda.dot(&basis);
        prop_assert!((r.dot(&r).sqrt() - sol.residual_norm).abs() <= 1e-9);
        let grad = basis.dot(&r);
        for j in 0..k {
            let scale = 1e-7 * (1.0 + basis.row(j).dot(&basis.row(j)).sqrt() * y.dot(&y).sqrt());
            if sol.lambda[j] > 0.0 {
                prop_assert!(grad[j].abs() <= scale, "gradient {} on active row {j}", grad[j]);
            } else {
                prop_assert!(grad[j] <= scale, "gradient {} on inactive row {j}", grad[j]);
            }
        }
    }

    #[test]
    fn cone_interior_rows_score_zero(weights in vec(vec(0.0f64..1.0, 3), 1..6), mix in vec(0.05f64..1.0, 12)) {
        // three witness rows plus nonnegative combinations of them
        let m = Array2::from_shape_vec((3, 4), mix).unwrap();
        let mut rows = vec![m.row(0).to_owned(), m.row(1).to_owned(), m.row(2).to_owned()];
        for w in &weights {
            rows.push(Array1::from(w.clone()).dot(&m));
        }
        let r = ndarray::stack(ndarray::Axis(0), &rows.iter().map(|r| r.view()).collect::<Vec<_>>()).unwrap();
        let cfg = ConeConfig { min_norm_frac: 0.0, parallel_tol: 0.0, ..ConeConfig::default() };
        let scores = score_rows(r.view(), &cfg).unwrap();
        for s in &scores[3..] {
            let norm = r.row(s.row_index).dot(&r.row(s.row_index)).sqrt();
            prop_assert!(s.score <= 1e-7 * (1.0 + norm), "row {} scored {}", s.row_index, s.score);
        }
        prop_assert!(scores.iter().all(|s| s.score >= 0.0));
    }

    #[test]
    fn cosine_is_bounded_and_scale_invariant(a in vec(-5.0f64..5.0, 1..20), c in 0.01f64..100.0) {
        let a = Array1::from(a);
        let b = a.mapv(|v| v.abs() + 0.1);
        if let Some(cos) = cosine_similarity(a.view(), b.view()) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&cos));
            let scaled = cosine_similarity((&a * c).view(), b.view()).unwrap();
            prop_assert!((cos - scaled).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nmf_objective_never_increases(data in vec(0.0f64..1.0, 60), n in 1usize..4, seed in any::<u64>()) {
        let r = Array2::from_shape_vec((12, 5), data).unwrap();
        let cfg = NmfConfig { max_iter: 200, ..NmfConfig::new(n, seed) };
        let res = nmf_factorize_matrix(r.view(), &cfg).unwrap();
        for w in res.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{} -> {}", w[0], w[1]);
        }
        prop_assert!(res.w.iter().chain(res.m.iter()).all(|v| *v >= 0.0));
    }
}
