use rand::Rng;
use rand_distr::{Distribution, Exp};
use rankflow::atlas::{mc_oracle_moment, moment, phi_alpha, psi, tau, AtlasSpec};
use rankflow::equilibrium::sample_ranked_weights_atlas;
use rankflow::numeric::mean_se;
use rankflow::rng::stream_rng;

#[test]
fn phi_matches_monte_carlo() {
    // φ_1(1) = E[exp(−e^W)], W ~ Exp(1).
    let mut rng = stream_rng(101, 0);
    let w = Exp::new(1.0).unwrap();
    let draws: Vec<f64> = (0..10_000_000).map(|_| (-(w.sample(&mut rng) as f64).exp()).exp()).collect();
    let mc = mean_se(&draws).unwrap();
    let q = phi_alpha(1.0, 1.0);
    assert!((q - mc.mean).abs() < 3.0 * mc.std_error, "{q} vs {} ± {}", mc.mean, mc.std_error);
}

#[test]
fn psi_matches_monte_carlo() {
    let mut rng = stream_rng(102, 0);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let v: f64 = rng.random();
            (-(0.5 / (0.5 * v + 0.5))).exp()
        })
        .collect();
    let mc = mean_se(&draws).unwrap();
    let q = psi(1.0, 0.5, 1.0);
    assert!((q - mc.mean).abs() < 3.0 * mc.std_error, "{q} vs {} ± {}", mc.mean, mc.std_error);
}

#[test]
fn tau_matches_exact_sampler() {
    let spec = AtlasSpec::new(3, 1, 1.0).unwrap();
    let mut rng = stream_rng(103, 0);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| (-1.0 / sample_ranked_weights_atlas(3, 1.0, &mut rng).unwrap()[0]).exp())
        .collect();
    let mc = mean_se(&draws).unwrap();
    let q = tau(1.0, &spec);
    assert!((q - mc.mean).abs() < 3.0 * mc.std_error, "{q} vs {} ± {}", mc.mean, mc.std_error);
}

#[test]
fn tau_is_a_decreasing_transform() {
    for (n, k) in [(2, 1), (2, 2), (4, 1), (4, 2), (4, 4), (6, 3)] {
        let spec = AtlasSpec::new(n, k, 1.0).unwrap();
        let vals: Vec<f64> = (0..40).map(|i| tau(0.25 * i as f64, &spec)).collect();
        assert_eq!(vals[0], 1.0);
        assert!(vals.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "n = {n}, k = {k}");
    }
}

#[test]
fn largest_of_two_has_mean_log_two() {
    let spec = AtlasSpec::new(2, 2, 1.0).unwrap();
    assert!((moment(&spec, 1).unwrap() - 2f64.ln()).abs() < 1e-4);
    let mc = mc_oracle_moment(&spec, 1, 1_000_000, &mut stream_rng(104, 0)).unwrap();
    assert!((mc.mean - 2f64.ln()).abs() < 3.0 * mc.std_error);
}

#[test]
fn moment_shape_properties() {
    for delta in [0.5, 1.0, 2.0] {
        for n in 2..=6 {
            let first: Vec<f64> =
                (1..=n).map(|k| moment(&AtlasSpec::new(n, k, delta).unwrap(), 1).unwrap()).collect();
            assert!((first.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            assert!(first.windows(2).all(|w| w[0] < w[1]));
            for (k, m1) in (1..=n).zip(&first) {
                let m2 = moment(&AtlasSpec::new(n, k, delta).unwrap(), 2).unwrap();
                assert!(m2 > m1 * m1, "Jensen fails at n = {n}, k = {k}");
            }
        }
    }
}

#[test]
fn mc_oracle_shape() {
    let mut rng = stream_rng(105, 0);
    let est: Vec<_> = (1..=4)
        .map(|k| mc_oracle_moment(&AtlasSpec::new(4, k, 1.0).unwrap(), 1, 100_000, &mut rng).unwrap())
        .collect();
    let total: f64 = est.iter().map(|e| e.mean).sum();
    let se = est.iter().map(|e| e.std_error * e.std_error).sum::<f64>().sqrt();
    assert!((total - 1.0).abs() < 3.0 * se + 1e-12);
    assert!(est.windows(2).all(|w| w[0].mean < w[1].mean));
}

#[test]
fn quadrature_agrees_with_exact_sampler_on_sweep() {
    for delta in [0.5, 1.0, 2.0] {
        for n in 2..=6usize {
            for k in 1..=n {
                let spec = AtlasSpec::new(n, k, delta).unwrap();
                for r in 1..=2u32 {
                    let q = moment(&spec, r).unwrap();
                    let mut rng = stream_rng(1000 + n as u64 * 10 + k as u64, r as u64);
                    let mc = mc_oracle_moment(&spec, r, 200_000, &mut rng).unwrap();
                    assert!(
                        (q - mc.mean).abs() < 3.0 * mc.std_error,
                        "delta {delta} n {n} k {k} r {r}: {q} vs {} ± {}",
                        mc.mean,
                        mc.std_error
                    );
                }
            }
        }
    }
}
