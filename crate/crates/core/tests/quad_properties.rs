use fgf_core::{ExpectationEngine, GaussianBelief};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn belief_strategy(max_dim: usize) -> impl Strategy<Value = GaussianBelief> {
    (1..=max_dim).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-1.0..1.0f64, n * n),
            0.05..1.0f64,
        )
            .prop_map(move |(mean, b, floor)| {
                let b = DMatrix::from_vec(n, n, b);
                let cov = &b * b.transpose() + DMatrix::identity(n, n) * floor;
                GaussianBelief::new(DVector::from_vec(mean), cov).unwrap()
            })
    })
}

/// Augmented mean and covariance of `(x, e)`.
fn augmented(belief: &GaussianBelief, noise_dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = belief.dim();
    let d = n + noise_dim;
    let mut mean = DVector::zeros(d);
    mean.rows_mut(0, n).copy_from(belief.mean());
    let mut cov = DMatrix::identity(d, d);
    cov.view_mut((0, 0), (n, n)).copy_from(belief.cov());
    (mean, cov)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigma_points_integrate_quadratics_exactly(
        belief in belief_strategy(3),
        noise_dim in 0usize..3,
        kappa in 0.0..3.0f64,
        seed in any::<u64>(),
    ) {
        let d = belief.dim() + noise_dim;
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let a = DMatrix::from_fn(d, d, |_, _| next());
        let b = DVector::from_fn(d, |_, _| next());
        let c = next();

        let engine = ExpectationEngine::sigma_point(kappa).unwrap();
        let f = |x: &[f64], e: &[f64]| {
            let z = DVector::from_iterator(d, x.iter().chain(e).copied());
            DVector::from_element(1, c + b.dot(&z) + z.dot(&(&a * &z)))
        };
        let got = engine.expect(&belief, noise_dim, f).unwrap()[0];

        let (mu, sigma) = augmented(&belief, noise_dim);
        let exact = c + b.dot(&mu) + (&a * &sigma).trace() + mu.dot(&(&a * &mu));
        prop_assert!((got - exact).abs() <= 1e-9 * (1.0 + exact.abs()), "{got} vs {exact}");
    }

    #[test]
    fn sigma_points_reproduce_mean_and_covariance(
        belief in belief_strategy(4),
        noise_dim in 0usize..3,
        kappa in 0.0..2.0f64,
    ) {
        let engine = ExpectationEngine::sigma_point(kappa).unwrap();
        let points = engine.points(&belief, noise_dim).unwrap();
        let d = belief.dim() + noise_dim;
        prop_assert_eq!(points.len(), 2 * d + 1);
        let total: f64 = points.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);

        let (mu, sigma) = augmented(&belief, noise_dim);
        let mut mean = DVector::zeros(d);
        for i in 0..points.len() {
            mean += DVector::from_column_slice(points.point(i)) * points.weight(i);
        }
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..points.len() {
            let c = DVector::from_column_slice(points.point(i)) - &mu;
            cov += &c * c.transpose() * points.weight(i);
        }
        prop_assert!((&mean - &mu).amax() < 1e-10);
        prop_assert!((&cov - &sigma).amax() < 1e-9 * (1.0 + sigma.amax()));

        // Points pair up symmetrically about the center.
        for k in 0..d {
            let p = DVector::from_column_slice(points.point(1 + 2 * k));
            let q = DVector::from_column_slice(points.point(2 + 2 * k));
            prop_assert!(((&p + &q) * 0.5 - &mu).amax() < 1e-10);
        }
    }
}

#[test]
fn monte_carlo_identity_mean_is_within_three_standard_errors() {
    let belief = GaussianBelief::scalar(3.0, 4.0).unwrap();
    let n = 20_000;
    for seed in 0..5 {
        let engine = ExpectationEngine::monte_carlo(n, seed).unwrap();
        let mean = engine
            .expect(&belief, 0, |x, _| DVector::from_column_slice(x))
            .unwrap()[0];
        assert!(
            (mean - 3.0).abs() <= 3.0 * 2.0 / (n as f64).sqrt(),
            "seed {seed}: {mean}"
        );
    }
}

#[test]
fn monte_carlo_error_shrinks_as_inverse_root_of_samples() {
    let belief = GaussianBelief::scalar(1.0, 2.0).unwrap();
    let f = |x: &[f64], w: &[f64]| DVector::from_element(1, x[0] * x[0] + x[0] * w[0]);
    let spread = |n: usize, salt: u64| {
        let estimates: Vec<f64> = (0..100)
            .map(|r| {
                let engine = ExpectationEngine::monte_carlo(n, salt * 1000 + r).unwrap();
                engine.expect(&belief, 1, f).unwrap()[0]
            })
            .collect();
        let m = estimates.iter().sum::<f64>() / 100.0;
        (estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / 99.0).sqrt()
    };
    let ratio = spread(2_000, 1) / spread(4_000, 2);
    let target = 2f64.sqrt();
    assert!((ratio - target).abs() <= 0.2 * target, "ratio {ratio}");
}

#[test]
fn monte_carlo_is_reproducible_and_seed_sensitive() {
    let belief = GaussianBelief::scalar(0.0, 1.0).unwrap();
    let f = |x: &[f64], w: &[f64]| DVector::from_element(1, (x[0] + w[0]).sin());
    let run = |seed| {
        ExpectationEngine::monte_carlo(1000, seed)
            .unwrap()
            .expect(&belief, 1, f)
            .unwrap()[0]
    };
    assert_eq!(run(5).to_bits(), run(5).to_bits());
    assert_ne!(run(5).to_bits(), run(6).to_bits());
}
