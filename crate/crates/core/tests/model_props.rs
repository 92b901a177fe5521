use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rankflow::model::{
    check_equal_variance_increments, derive, lambda_n, reflection_matrix, skew_decomposition,
    skew_symmetry_residual, spacings_covariance, ModelParams, RootKind, MATRIX_TOL,
};

/// The n×(n−1) difference matrix: a_ii = −1, a_{i+1,i} = +1.
fn difference_matrix(n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n - 1);
    for j in 0..n - 1 {
        a[(j, j)] = -1.0;
        a[(j + 1, j)] = 1.0;
    }
    a
}

fn min_eigenvalue(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

#[test]
fn lambda_matches_eigen_oracle() {
    for n in 2..=50 {
        let a = difference_matrix(n);
        let lmin = min_eigenvalue(a.transpose() * &a);
        assert!((lambda_n(n) * lmin - 1.0).abs() < 1e-12, "n = {n}");
    }
}

#[test]
fn reflection_matrix_is_invertible() {
    for d in 1..50 {
        let r = reflection_matrix(d);
        let b = DVector::from_fn(d, |i, _| (i as f64 + 1.0).sin());
        let x = r.clone().lu().solve(&b).expect("invertible");
        assert!((&r * x - b).norm() < MATRIX_TOL, "d = {d}");
    }
}

fn arithmetic_sigma(n: usize, a: f64, step: f64) -> Vec<f64> {
    (0..n).map(|i| (a + step * i as f64).sqrt()).collect()
}

fn arb_params() -> impl Strategy<Value = ModelParams> {
    (2usize..9).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(0.2f64..3.0, n),
        )
            .prop_map(|(d, s)| ModelParams::new(d, s).unwrap())
    })
}

fn arb_stable_unit() -> impl Strategy<Value = ModelParams> {
    // Decreasing drifts keep every partial sum of δ − δ̄ positive.
    (2usize..9).prop_flat_map(|n| {
        prop::collection::vec(0.01f64..2.0, n).prop_map(move |inc| {
            let mut d = vec![0.0; inc.len()];
            for i in (0..inc.len() - 1).rev() {
                d[i] = d[i + 1] + inc[i];
            }
            ModelParams::new(d, vec![1.0; inc.len()]).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn unit_sigma_alpha_tilde_equals_alpha(p in arb_stable_unit()) {
        let c = derive(&p).unwrap();
        prop_assert!(c.stable);
        prop_assert_eq!(c.alpha, c.alpha_tilde);
    }

    #[test]
    fn xi_is_positive_definite(p in arb_params()) {
        let xi = spacings_covariance(&p);
        prop_assert_eq!(&xi, &xi.transpose());
        let chol = xi.clone().cholesky();
        prop_assert!(chol.is_some());
        let l = chol.unwrap().l();
        prop_assert!((0..l.nrows()).all(|i| l[(i, i)] > 0.0));
        prop_assert!(min_eigenvalue(xi) > 0.0);
    }

    #[test]
    fn equal_increments_give_skew_symmetry(
        n in 3usize..11, a in 0.1f64..3.0, step in 0.0f64..2.0, seed in any::<u64>()
    ) {
        let delta: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) & 7) as f64 - i as f64).collect();
        let p = ModelParams::new(delta, arithmetic_sigma(n, a, step)).unwrap();
        prop_assume!(check_equal_variance_increments(&p, 1e-12));
        prop_assert!(skew_symmetry_residual(&p).unwrap().residual < 1e-10);
    }

    #[test]
    fn skew_residual_is_root_independent(p in arb_params()) {
        prop_assume!(p.n >= 3);
        let c = skew_decomposition(&p, RootKind::Cholesky).unwrap().residual;
        let s = skew_decomposition(&p, RootKind::Symmetric).unwrap().residual;
        prop_assert!((c - s).abs() < 1e-9 * (1.0 + c.abs()));
    }

    #[test]
    fn alpha_partial_sums_telescope(p in arb_params()) {
        // α_{n−1} = −2(δ_n − δ̄) because the deviations sum to zero.
        let c = derive(&p).unwrap();
        let mean = p.delta.iter().sum::<f64>() / p.n as f64;
        let last = -2.0 * (p.delta[p.n - 1] - mean);
        prop_assert!((c.alpha[p.n - 2] - last).abs() < 1e-12);
    }
}

#[test]
fn unequal_increments_break_skew_symmetry() {
    let p = ModelParams::new(vec![1.0, 0.0, 0.0], vec![1.0, 2f64.sqrt(), 5f64.sqrt()]).unwrap();
    assert!(!check_equal_variance_increments(&p, 1e-12));
    assert!(skew_symmetry_residual(&p).unwrap().residual > 1e-3);
}
