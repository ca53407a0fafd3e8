use approx::assert_abs_diff_eq;
use controlshap::control::combine;
use controlshap::estimators::{kernel_sample_coalitions, kernel_size_distribution, kernelshap_solve, KernelDesign};
use controlshap::experiment::metrics::{rank_changes, var_reduc};
use controlshap::experiment::{run_experiment, DataSource, ExperimentConfig, ExperimentReport};
use controlshap::explainer::EstimatorKind;
use controlshap::oracle::{exact_shapley, exact_shapley_permutations};
use controlshap::variance::{CovEstimate, VarianceMethod};
use controlshap::Coalition;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Game defined by a value per subset bitmask.
fn table_game(values: &[f64]) -> impl FnMut(&Coalition) -> controlshap::Result<f64> + '_ {
    move |s| Ok(values[s.bits() as usize])
}

#[test]
fn product_game_splits_evenly() {
    // v(S) = 1 only when both players are present.
    let phi = exact_shapley(2, |s| Ok(if s.len() == 2 { 1.0 } else { 0.0 })).unwrap();
    assert_abs_diff_eq!(phi[0], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(phi[1], 0.5, epsilon = 1e-15);
}

#[test]
fn kernelshap_two_features_is_exact() {
    // With d = 2 the constrained solution only sees v(∅), v(N) and the
    // singletons: φ_1 = ((v1 - v0) + (v12 - v2)) / 2.
    let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let phi = kernelshap_solve(&z, &DVector::from_vec(vec![1.0, 3.0]), 0.0, 10.0).unwrap();
    assert_abs_diff_eq!(phi[0], (1.0 + 7.0) / 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(phi[1], (3.0 + 9.0) / 2.0, epsilon = 1e-12);
}

#[test]
fn kernel_size_histogram_matches_distribution() {
    let d = 7;
    let n = 100_000;
    let p = kernel_size_distribution(d).unwrap();
    let mut counts = vec![0usize; d];
    for s in kernel_sample_coalitions(d, n, 17).unwrap() {
        counts[s.len()] += 1;
    }
    for k in 1..d {
        let q = p[k - 1];
        let expected = n as f64 * q;
        let sd = (n as f64 * q * (1.0 - q)).sqrt();
        assert!((counts[k] as f64 - expected).abs() <= 3.0 * sd, "size {k}: {} vs {expected}", counts[k]);
    }
}

#[test]
fn control_variate_with_perfect_correlation_recovers_exact() {
    let covs = vec![
        CovEstimate {
            var_model: 4.0,
            var_approx: 1.0,
            cov: 2.0,
            method: VarianceMethod::SsEmpirical,
        };
        2
    ];
    let model = DVector::from_vec(vec![1.2, -0.4]);
    let approx = DVector::from_vec(vec![0.6, -0.1]);
    let exact = DVector::from_vec(vec![0.5, 0.0]);
    let est = combine(&model, &approx, &exact, &covs).unwrap();
    assert_abs_diff_eq!(est.phi_cv[0], 1.2 - 2.0 * 0.1, epsilon = 1e-12);
    assert_abs_diff_eq!(est.phi_cv[1], -0.4 - 2.0 * -0.1, epsilon = 1e-12);
    assert_abs_diff_eq!(est.anticipated_rho2[0], 1.0, epsilon = 1e-12);
}

#[test]
fn report_roundtrip_is_lossless() {
    let cfg = ExperimentConfig {
        data: DataSource::Sim { n_rows: 400 },
        estimator: EstimatorKind::Kernelshap,
        n_coalitions: 60,
        n_repetitions: 4,
        n_query_points: 3,
        seed: 9,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let text = report.to_json().unwrap();
    let back = ExperimentReport::from_json(&text).unwrap();
    assert_eq!(back.to_json().unwrap(), text);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    report.write_json(&path).unwrap();
    assert_eq!(ExperimentReport::read_json(&path).unwrap().to_json().unwrap(), text);
}

fn game(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 1 << d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_shapley_is_efficient(d in 1usize..7, seed in any::<u64>()) {
        let values: Vec<f64> = (0..1u64 << d).map(|b| ((b.wrapping_mul(seed | 1) % 1000) as f64) / 100.0).collect();
        let phi = exact_shapley(d, table_game(&values)).unwrap();
        prop_assert!((phi.sum() - (values[(1 << d) - 1] - values[0])).abs() < 1e-9);
    }

    #[test]
    fn subset_and_permutation_forms_agree(values in game(5)) {
        let a = exact_shapley(5, table_game(&values)).unwrap();
        let b = exact_shapley_permutations(5, table_game(&values)).unwrap();
        prop_assert!((a - b).amax() < 1e-9);
    }

    #[test]
    fn relabeling_permutes_values(values in game(4), shift in 1usize..4) {
        let d = 4;
        let perm = |j: usize| (j + shift) % d;
        let relabeled: Vec<f64> = (0..1u64 << d)
            .map(|b| {
                let mut orig = 0u64;
                for j in 0..d {
                    if b >> perm(j) & 1 == 1 {
                        orig |= 1 << j;
                    }
                }
                values[orig as usize]
            })
            .collect();
        let phi = exact_shapley(d, table_game(&values)).unwrap();
        let psi = exact_shapley(d, table_game(&relabeled)).unwrap();
        for j in 0..d {
            prop_assert!((phi[j] - psi[perm(j)]).abs() < 1e-9);
        }
    }

    #[test]
    fn kernelshap_satisfies_efficiency(d in 2usize..9, extra in 0usize..30, seed in any::<u64>(), e in -3.0..3.0f64, f in -3.0..3.0f64) {
        let m = d + 2 + extra;
        let coalitions = kernel_sample_coalitions(d, m, seed).unwrap();
        if let Ok(design) = KernelDesign::new(&coalitions) {
            let v: Vec<f64> = (0..m).map(|i| ((i as f64) * 0.37 + seed as f64 * 1e-19).sin()).collect();
            let phi = design.solve(&v, e, f).unwrap();
            prop_assert!((phi.sum() - (f - e)).abs() < 1e-8);
        }
    }

    #[test]
    fn kernelshap_translation_and_row_order_invariant(d in 2usize..8, seed in any::<u64>(), c in -4.0..4.0f64) {
        let m = 3 * d + 4;
        let coalitions = kernel_sample_coalitions(d, m, seed).unwrap();
        let Ok(design) = KernelDesign::new(&coalitions) else { return Ok(()) };
        let v: Vec<f64> = (0..m).map(|i| (i as f64 * 1.3).cos()).collect();
        let phi = design.solve(&v, 0.2, 1.7).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let phi_shift = design.solve(&shifted, 0.2 + c, 1.7 + c).unwrap();
        prop_assert!((&phi - phi_shift).amax() < 1e-8);
        let rev_c: Vec<Coalition> = coalitions.iter().rev().cloned().collect();
        let rev_v: Vec<f64> = v.iter().rev().copied().collect();
        let phi_rev = KernelDesign::new(&rev_c).unwrap().solve(&rev_v, 0.2, 1.7).unwrap();
        prop_assert!((&phi - phi_rev).amax() < 1e-8);
    }

    #[test]
    fn rank_changes_ignore_monotone_transforms(est in prop::collection::vec(prop::collection::vec(0.01..5.0f64, 5), 3..8), scale in 0.1..10.0f64) {
        let transformed: Vec<Vec<f64>> = est.iter().map(|r| r.iter().map(|x| scale * x.powi(3)).collect()).collect();
        prop_assert_eq!(rank_changes(&est).unwrap(), rank_changes(&transformed).unwrap());
    }

    #[test]
    fn var_reduc_of_identical_estimates_is_zero(est in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 3..8)) {
        for v in var_reduc(&est, &est).unwrap().into_iter().flatten() {
            prop_assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn anticipated_reduction_is_a_squared_correlation(vm in 0.01..10.0f64, va in 0.01..10.0f64, r in -1.0..1.0f64) {
        let c = CovEstimate { var_model: vm, var_approx: va, cov: r * (vm * va).sqrt(), method: VarianceMethod::KsLeastSquares };
        let z = DVector::zeros(1);
        let est = combine(&DVector::from_vec(vec![1.0]), &DVector::from_vec(vec![0.5]), &z, &[c]).unwrap();
        prop_assert!((est.anticipated_rho2[0] - r * r).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&est.anticipated_rho2[0]));
    }
}
