use proptest::prelude::*;
use rankflow::equilibrium::{sample_nu, NuSpec};
use rankflow::model::ModelParams;
use rankflow::portfolio::{
    drift_g, drift_range, drift_u_tilde, fgp_weights, g_gradient, g_hessian, g_value,
    ranked_weights, GeneratingFunction,
};
use rankflow::rng::stream_rng;
use rankflow::sim::{simulate_path, InitialState, SimConfig};

fn kinds() -> impl Strategy<Value = GeneratingFunction> {
    prop_oneof![
        (0.05f64..0.95).prop_map(|p| GeneratingFunction::Diversity { p }),
        Just(GeneratingFunction::QuadraticGini),
        prop_oneof![-2.0f64..0.95, 1.05f64..4.0].prop_map(|p| GeneratingFunction::Renyi { p }),
        Just(GeneratingFunction::Entropy),
        Just(GeneratingFunction::EqualWeight),
    ]
}

fn simplex_point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 2..8).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_and_hessian_match_finite_differences(g in kinds(), x in simplex_point()) {
        let n = x.len();
        let grad = g_gradient(&g, &x).unwrap();
        let hess = g_hessian(&g, &x).unwrap();
        for i in 0..n {
            let h = 1e-5 * x[i];
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (g.value(&up) - g.value(&dn)) / (2.0 * h);
            prop_assert!(close(grad[i], fd, 1e-6), "{g:?} grad {i}: {} vs {fd}", grad[i]);
            let (gu, gd) = (g.gradient(&up), g.gradient(&dn));
            for j in 0..n {
                prop_assert!((hess[(i, j)] - hess[(j, i)]).abs() <= 1e-12 * hess[(i, j)].abs().max(1.0));
                let fd2 = (gu[j] - gd[j]) / (2.0 * h);
                prop_assert!(close(hess[(j, i)], fd2, 1e-6), "{g:?} hess {j},{i}: {} vs {fd2}", hess[(j, i)]);
            }
        }
    }

    #[test]
    fn weights_sum_to_one(g in kinds(), x in simplex_point()) {
        let w = fgp_weights(&g, &x).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        if g == GeneratingFunction::EqualWeight {
            prop_assert!(w.iter().all(|&v| v == 1.0 / x.len() as f64));
        }
    }

    #[test]
    fn permutation_invariance(g in kinds(), x in simplex_point(), shift in 0usize..8) {
        let mut y = x.clone();
        y.rotate_left(shift % x.len());
        y.swap(0, x.len() - 1);
        prop_assert!(close(g_value(&g, &x).unwrap(), g_value(&g, &y).unwrap(), 1e-12));
        prop_assert!(close(drift_g(&g, &x).unwrap(), drift_g(&g, &y).unwrap(), 1e-10));
    }

    #[test]
    fn closed_form_equals_drift_of_sorted_weights(
        g in kinds(), y in prop::collection::vec(0.0f64..4.0, 1..7)
    ) {
        let mut m = ranked_weights(&y);
        let a = drift_u_tilde(&g, &y).unwrap();
        m.sort_by(f64::total_cmp);
        let b = drift_g(&g, &m).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{g:?}: {a} vs {b}");
    }
}

#[test]
fn drift_ranges_hold_under_nu() {
    for n in [3usize, 5, 8] {
        let p = ModelParams::atlas(n, 1.0).unwrap();
        let spec = NuSpec::from_params(&p).unwrap();
        let mut rng = stream_rng(n as u64, 0);
        for g in [GeneratingFunction::Diversity { p: 0.5 }, GeneratingFunction::QuadraticGini] {
            let top = drift_range(&g, n).unwrap().u_inf;
            for _ in 0..2000 {
                let v = drift_u_tilde(&g, &sample_nu(&spec, &mut rng)).unwrap();
                assert!((0.0..=top).contains(&v), "{g:?} n = {n}: {v} outside [0, {top}]");
            }
        }
    }
}

#[test]
fn entropy_drift_is_nonnegative_and_bounded_along_paths() {
    let p = ModelParams::atlas(5, 1.0).unwrap();
    let c = SimConfig {
        dt: 1e-3,
        horizon: 20.0,
        seed: 4,
        record_stride: 10,
        initial_state: InitialState::SampleFromNu,
    };
    let traj = simulate_path(&p, &c).unwrap();
    let g = GeneratingFunction::Entropy;
    let top = drift_range(&g, 5).unwrap().u_inf;
    for k in 0..traj.len() {
        let v = drift_g(&g, traj.mu.row(k)).unwrap();
        assert!(v >= 0.0 && v <= top + 1e-12, "{v} vs {top}");
    }
}
