mod common;

use common::*;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unmix_core::cls::{
    box_constrained_ls, compute_residual, solve_box_ls, BoxConstraints, LsOptions,
};
use unmix_core::cone::{extract_mixing, nnls, ConeConfig, SourceCount};
use unmix_core::sparse::{linearized_bregman, pinv_recover, recover_sources, BregmanConfig};
use unmix_core::spectra::{ConcentrationBounds, MixtureMatrix, SpectralGrid};
use unmix_core::synth::{gen_benchmark, BenchmarkConfig};
use unmix_core::MixingEstimate64;

fn mixture(values: Array2<f64>) -> MixtureMatrix<f64> {
    let grid = SpectralGrid::linspace(0.0, 1.0, values.nrows()).unwrap();
    let m = values.ncols();
    let labels = (0..m).map(|j| format!("x{j}")).collect();
    MixtureMatrix::new(grid, values, labels, vec![None; m]).unwrap()
}

#[test]
fn nnls_matches_support_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let k = rng.random_range(1..=5);
        let m = rng.random_range(2..=7);
        let basis = Array2::from_shape_fn((k, m), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(m, |_| rng.random_range(-1.0..1.0));
        let got = nnls(basis.view(), y.view()).unwrap();
        let (lambda, res) = brute_force_nnls(basis.view(), y.view());
        assert!(
            (got.residual_norm - res).abs() <= 1e-9 * (1.0 + res),
            "{} vs {res}",
            got.residual_norm
        );
        assert!(got.lambda.iter().all(|v| *v >= 0.0));
        // the minimiser is unique when the basis rows are independent
        if k <= m {
            let d = &got.lambda - &lambda;
            assert!(d.dot(&d).sqrt() <= 1e-7, "{} vs {lambda}", got.lambda);
        }
    }
}

#[test]
fn nnls_two_row_example() {
    let basis = array![[1.0, 0.0], [1.0, 1.0]];
    let y = array![0.0, 1.0];
    let got = nnls(basis.view(), y.view()).unwrap();
    assert!((got.residual_norm - 0.5f64.sqrt()).abs() < 1e-12);
    assert!(got.lambda[0].abs() < 1e-12 && (got.lambda[1] - 0.5).abs() < 1e-12);
}

#[test]
fn bregman_matches_dual_newton_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let n = rng.random_range(10..=20);
        let b = Array2::from_shape_fn((8, n), |_| rng.random::<f64>());
        let mut truth = Array1::zeros(n);
        for j in rand::seq::index::sample(&mut rng, n, 3) {
            truth[j] = rng.random_range(0.5..1.5);
        }
        let f = b.dot(&truth);
        let cfg = BregmanConfig {
            fit_tol: 1e-9,
            max_iter: 20_000_000,
            ..BregmanConfig::default()
        };
        let sol = linearized_bregman(b.view(), f.view(), &cfg).unwrap();
        assert!(
            sol.converged,
            "fit {} after {}",
            sol.final_fit, sol.iterations
        );
        let delta = cfg.step_size(b.view());
        let oracle = sparse_qp_oracle(b.view(), f.view(), cfg.mu, delta);
        let d = &sol.u - &oracle;
        assert!(d.dot(&d).sqrt() <= 1e-3, "{} vs {oracle}", sol.u);
    }
}

#[test]
fn interior_optimum_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (p, k, m) = (60, 3, 4);
        let a = Array2::from_shape_fn((p, k), |_| rng.random::<f64>());
        let bounds =
            ConcentrationBounds::from_pairs([("a", 1.0), ("b", 0.8), ("c", 2.0)], None).unwrap();
        let s0 = Array2::from_shape_fn((k, m), |(i, _)| {
            rng.random_range(0.1..0.7) * [1.0, 0.8, 2.0][i]
        });
        let x = mixture(a.dot(&s0));
        let s = box_constrained_ls(&x, a.view(), &bounds, &LsOptions::default()).unwrap();
        let d = &s.values - &s0;
        let rel = d.mapv(|v| v * v).sum().sqrt() / s0.mapv(|v| v * v).sum().sqrt();
        assert!(rel <= 1e-6, "relative error {rel}");
    }
}

#[test]
fn no_feasible_point_beats_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..10 {
        let (p, k) = (40, 4);
        let a = Array2::from_shape_fn((p, k), |_| rng.random::<f64>());
        let x = Array2::from_shape_fn((p, 1), |_| rng.random_range(0.0..3.0));
        let cons = BoxConstraints {
            upper: vec![1.0 / 3.0, 0.5, 0.7, 1.0],
            total: (case % 2 == 0).then(|| (0.5, vec![true, true, false, false])),
        };
        let sol = solve_box_ls(x.view(), a.view(), &cons, None, &LsOptions::default()).unwrap();
        let s: Vec<f64> = sol.values.column(0).to_vec();
        assert!(cons.is_feasible(&s, 1e-12), "{s:?}");
        let best = column_objective(x.column(0), a.view(), &s);
        for _ in 0..1000 {
            let t = random_feasible(&cons, &mut rng);
            assert!(column_objective(x.column(0), a.view(), &t) >= best - 1e-12);
        }
    }
}

#[test]
fn overfitting_known_is_held_at_its_bound() {
    // unconstrained LS would push the concentration to 1.25 and leave negatives
    let a = array![[1.0], [1.0], [1.0], [1.0]];
    let r0 = array![[1.0], [0.0], [0.0], [0.0]];
    let x = mixture(&a * 1.0 + &r0);
    let bounds = ConcentrationBounds::from_pairs([("k", 1.0)], None).unwrap();
    let s = box_constrained_ls(&x, a.view(), &bounds, &LsOptions::default()).unwrap();
    assert!((s.values[[0, 0]] - 1.0).abs() <= 1e-12);
    let r = compute_residual(&x, a.view(), s.values.view(), false).unwrap();
    assert_eq!(r.negative_fraction, 0.0);
    assert!((&r.values - &r0).iter().all(|v| v.abs() <= 1e-12));
}

#[test]
fn known_above_one_third_is_capped() {
    let mut cfg = BenchmarkConfig::benchmark_1(5);
    cfg.unknowns.clear();
    let b = gen_benchmark(&cfg).unwrap();
    let a = b.library.get("methanol").unwrap().intensities.clone();
    let a = Array2::from_shape_vec((a.len(), 1), a).unwrap();
    // the same spectrum at concentrations straddling the bound
    let s0 = array![[0.2, 0.5, 1.0 / 3.0, 0.9, 0.1]];
    let x = MixtureMatrix::new(
        b.mixture.grid().clone(),
        a.dot(&s0),
        b.mixture.labels().to_vec(),
        b.mixture.laser_wavelengths().to_vec(),
    )
    .unwrap();
    let s = box_constrained_ls(&x, a.view(), &b.bounds, &LsOptions::default()).unwrap();
    let third = 1.0 / 3.0;
    for (got, want) in s.values.iter().zip(s0.iter()) {
        assert!(*got <= third + 1e-12 && *got >= 0.0);
        assert!((got - want.min(third)).abs() <= 1e-8, "{got} vs {want}");
    }
}

#[test]
fn total_bound_over_two_knowns() {
    let b = gen_benchmark(&BenchmarkConfig::benchmark_2(6)).unwrap();
    let (_, s) =
        unmix_core::cls::fit_knowns(&b.mixture, &b.library, &b.bounds, &LsOptions::default())
            .unwrap();
    for col in s.values.columns() {
        assert!(col.iter().all(|v| *v >= 0.0 && *v <= 0.5 + 1e-12));
        assert!(col.sum() <= 0.5 + 1e-12);
    }
    let d = &s.values - &b.truth.known_concentrations;
    assert!(d.iter().all(|v| v.abs() < 1e-6), "{d}");
}

#[test]
fn cone_recovers_benchmark_mixing_rows() {
    for id in [1, 2] {
        let b = gen_benchmark(&BenchmarkConfig::preset(id, 10).unwrap()).unwrap();
        let r = b.unknown_part();
        let n = b.truth.mixing.nrows();
        let ext = extract_mixing(r.view(), SourceCount::Fixed(n), &ConeConfig::default()).unwrap();
        let err = best_permutation_error(ext.mixing.rows.view(), b.truth.mixing.view());
        assert!(err <= 1e-6, "benchmark {id}: {err}");
        let ext = extract_mixing(
            r.view(),
            SourceCount::Auto { max: 5 },
            &ConeConfig::default(),
        )
        .unwrap();
        assert_eq!(ext.n, n);
        assert!(best_permutation_error(ext.mixing.rows.view(), b.truth.mixing.view()) <= 1e-6);
    }
}

#[test]
fn bregman_recovers_noiseless_sources() {
    let b = gen_benchmark(&BenchmarkConfig::benchmark_1(12)).unwrap();
    let r =
        unmix_core::cls::ResidualMatrix::from_values(b.mixture.grid().clone(), b.unknown_part())
            .unwrap();
    let mix = MixingEstimate64 {
        rows: b.truth.mixing.clone(),
        source_indices: b.truth.witness_indices.clone(),
        scores: vec![1.0; b.truth.mixing.nrows()],
    };
    let w = recover_sources(&r, &mix, &BregmanConfig::default()).unwrap();
    for c in column_cosines(w.values.view(), b.truth.sources.view()) {
        assert!(c >= 0.99, "{c}");
    }
    let exact = pinv_recover(&r, &mix).unwrap();
    let scale = b.truth.sources.iter().fold(0.0f64, |m, v| m.max(*v));
    assert!((&exact.values - &b.truth.sources)
        .iter()
        .all(|v| v.abs() <= 1e-10 * scale.max(1.0)));
}

#[test]
fn pinv_reports_negatives_under_noise() {
    let b = gen_benchmark(&BenchmarkConfig::benchmark_1(13)).unwrap();
    let clean = b.unknown_part();
    let sigma = 0.01 * clean.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
    let noisy = clean.mapv(|v| v + rng.sample(normal));
    let r = unmix_core::cls::ResidualMatrix::from_values(b.mixture.grid().clone(), noisy).unwrap();
    let mix = MixingEstimate64 {
        rows: b.truth.mixing.clone(),
        source_indices: b.truth.witness_indices.clone(),
        scores: vec![1.0; b.truth.mixing.nrows()],
    };
    let w = pinv_recover(&r, &mix).unwrap();
    assert!(w.negative_count > 0);
    assert_eq!(
        w.negative_count,
        w.values.iter().filter(|v| **v < 0.0).count()
    );
}
