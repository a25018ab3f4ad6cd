//! Sampling from the built-in measurement models agrees with their
//! closed-form likelihoods.

use fgf_core::{make_heaviside_model, make_noise_magnitude_model, StateSpaceModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SAMPLES: usize = 1_000_000;

fn sample_measurements(model: &StateSpaceModel, x: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = [0.0];
    (0..SAMPLES)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            model.observe_into(&[x], &[w], &mut y);
            y[0]
        })
        .collect()
}

/// Gaussian kernel density estimate on `points`, via a fine histogram.
fn kde(samples: &[f64], points: &[f64], bandwidth: f64) -> Vec<f64> {
    let lo = points[0] - 6.0 * bandwidth;
    let hi = points[points.len() - 1] + 6.0 * bandwidth;
    let bin = bandwidth / 20.0;
    let nbins = ((hi - lo) / bin).ceil() as usize;
    let mut counts = vec![0u32; nbins];
    for &s in samples {
        if s >= lo && s < hi {
            counts[((s - lo) / bin) as usize] += 1;
        }
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    points
        .iter()
        .map(|&p| {
            counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(i, &c)| {
                    let center = lo + (i as f64 + 0.5) * bin;
                    let z = (p - center) / bandwidth;
                    c as f64 * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

fn sup_error(model: &StateSpaceModel, x: f64, lo: f64, hi: f64, seed: u64) -> f64 {
    let samples = sample_measurements(model, x, seed);
    let points: Vec<f64> = (0..=120)
        .map(|i| lo + (hi - lo) * i as f64 / 120.0)
        .collect();
    let estimate = kde(&samples, &points, 0.05);
    points
        .iter()
        .zip(&estimate)
        .map(|(&y, &e)| (model.likelihood(&[y], &[x]).unwrap() - e).abs())
        .fold(0.0, f64::max)
}

#[test]
fn noise_magnitude_samples_match_likelihood() {
    let (model, _) = make_noise_magnitude_model();
    for (i, m) in [5.0, -1.5, 0.7].into_iter().enumerate() {
        let spread = 5.0 * f64::abs(m);
        let err = sup_error(&model, m, -spread, spread, i as u64);
        assert!(err < 0.02, "M = {m}: sup error {err}");
    }
}

#[test]
fn heaviside_samples_match_likelihood() {
    let (model, _) = make_heaviside_model();
    for (i, x) in [-3.0, 0.0, 2.5].into_iter().enumerate() {
        let center = if x >= 0.0 { x + 50.0 } else { x };
        let err = sup_error(&model, x, center - 5.0, center + 5.0, 10 + i as u64);
        assert!(err < 0.02, "x = {x}: sup error {err}");
    }
}

#[test]
fn noise_magnitude_spread_approaches_magnitude() {
    let (model, _) = make_noise_magnitude_model();
    for (i, m) in [5.0, -2.0].into_iter().enumerate() {
        for n in [1_000usize, 100_000] {
            let ys = &sample_measurements(&model, m, 20 + i as u64)[..n];
            let mean = ys.iter().sum::<f64>() / n as f64;
            let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            let rel = (sd - f64::abs(m)).abs() / f64::abs(m);
            assert!(
                rel < 3.0 / (n as f64).sqrt(),
                "M = {m}, n = {n}: relative error {rel}"
            );
        }
    }
}
