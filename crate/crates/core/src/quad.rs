//! Numerical expectation engines.
//!
//! Both engines approximate `E[f(x, e)]` where `x` follows a Gaussian belief
//! and `e` is independent standard-normal noise. They do so by producing a
//! weighted [`PointSet`] over the stacked vector `(x, e)`; callers evaluate
//! their integrand on the points and reduce with the weights. The filter uses
//! one point set per prediction or update so that means, covariances and
//! cross-covariances come from the same quadrature.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{derive_seed, fill_standard_normal, seeded_rng};
use crate::ssm::GaussianBelief;

/// Default sample count for the Monte Carlo engine in experiments.
pub const DEFAULT_MC_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpectationEngine {
    /// Plain i.i.d. sampling with `samples` draws from a seeded ChaCha8 stream.
    MonteCarlo { samples: usize, seed: u64 },
    /// Symmetric `2d + 1` point rule on the augmented `(x, e)` Gaussian with
    /// spread `sqrt(d + kappa)`; exact for polynomials of total degree <= 3.
    SigmaPoint { kappa: f64 },
}

impl Default for ExpectationEngine {
    fn default() -> Self {
        Self::SigmaPoint { kappa: 0.0 }
    }
}

impl ExpectationEngine {
    pub fn monte_carlo(samples: usize, seed: u64) -> Result<Self> {
        if samples < 2 {
            return Err(Error::InvalidArgument(
                "monte carlo engine needs at least 2 samples".into(),
            ));
        }
        Ok(Self::MonteCarlo { samples, seed })
    }

    pub fn sigma_point(kappa: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(Error::InvalidArgument("sigma spread must be finite".into()));
        }
        Ok(Self::SigmaPoint { kappa })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::MonteCarlo { .. } => "monte_carlo",
            Self::SigmaPoint { .. } => "sigma_point",
        }
    }

    /// Short human-readable description, e.g. `monte_carlo(n=10000,seed=1)`.
    pub fn describe(&self) -> String {
        match self {
            Self::MonteCarlo { samples, seed } => format!("monte_carlo(n={samples};seed={seed})"),
            Self::SigmaPoint { kappa } => format!("sigma_point(kappa={kappa})"),
        }
    }

    /// Engine with a seed derived from this one and `salt`. Deterministic
    /// engines are returned unchanged.
    pub fn reseeded(&self, salt: u64) -> Self {
        match *self {
            Self::MonteCarlo { samples, seed } => Self::MonteCarlo {
                samples,
                seed: derive_seed(seed, salt),
            },
            other => other,
        }
    }

    /// Weighted points over `(x, e)`, `x ~ belief`, `e ~ N(0, I_noise_dim)`.
    pub fn points(&self, belief: &GaussianBelief, noise_dim: usize) -> Result<PointSet> {
        let root = linalg::symmetric_sqrt(belief.cov())?;
        match *self {
            Self::MonteCarlo { samples, seed } => Ok(monte_carlo_points(
                belief.mean(),
                &root,
                noise_dim,
                samples,
                seed,
            )),
            Self::SigmaPoint { kappa } => sigma_points(belief.mean(), &root, noise_dim, kappa),
        }
    }

    /// `E[f(x, e)]` under `belief x N(0, I_noise_dim)`.
    pub fn expect<F>(&self, belief: &GaussianBelief, noise_dim: usize, f: F) -> Result<DVector<f64>>
    where
        F: Fn(&[f64], &[f64]) -> DVector<f64>,
    {
        let points = self.points(belief, noise_dim)?;
        let mut acc: Option<DVector<f64>> = None;
        for i in 0..points.len() {
            let value = f(points.state(i), points.noise(i));
            if value.iter().any(|v| !v.is_finite()) {
                return Err(points.non_finite(i));
            }
            let w = points.weight(i);
            match acc.as_mut() {
                Some(a) => {
                    if a.len() != value.len() {
                        return Err(Error::DimensionMismatch {
                            context: "integrand output",
                            expected: a.len(),
                            actual: value.len(),
                        });
                    }
                    a.axpy(w, &value, 1.0);
                }
                None => acc = Some(value * w),
            }
        }
        Ok(acc.expect("point sets are never empty"))
    }
}

/// Weighted quadrature nodes over the stacked vector `(x, e)`.
#[derive(Debug, Clone)]
pub struct PointSet {
    state_dim: usize,
    noise_dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    #[inline]
    fn stride(&self) -> usize {
        self.state_dim + self.noise_dim
    }

    /// Full stacked coordinates of point `i`.
    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.coords[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[f64] {
        &self.point(i)[..self.state_dim]
    }

    #[inline]
    pub fn noise(&self, i: usize) -> &[f64] {
        &self.point(i)[self.state_dim..]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The state coordinates of all points, flattened point-major.
    pub fn states_flat(&self) -> Vec<f64> {
        let n = self.state_dim;
        let mut out = Vec::with_capacity(self.len() * n);
        for chunk in self.coords.chunks_exact(self.stride()) {
            out.extend_from_slice(&chunk[..n]);
        }
        out
    }

    pub(crate) fn non_finite(&self, i: usize) -> Error {
        Error::NonFiniteIntegrand {
            index: i,
            point: self.point(i).to_vec(),
        }
    }
}

fn monte_carlo_points(
    mean: &DVector<f64>,
    root: &DMatrix<f64>,
    noise_dim: usize,
    samples: usize,
    seed: u64,
) -> PointSet {
    let n = mean.len();
    let stride = n + noise_dim;
    let mut rng = seeded_rng(seed, 0);
    // Row-major copy of the root for contiguous access.
    let root_rows: Vec<f64> = root.transpose().as_slice().to_vec();
    let mean = mean.as_slice();
    let mut coords = Vec::with_capacity(samples * stride);
    let mut z = vec![0.0; n];
    for _ in 0..samples {
        fill_standard_normal(&mut rng, &mut z);
        for (m, r) in mean.iter().zip(root_rows.chunks_exact(n)) {
            coords.push(m + r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>());
        }
        for _ in 0..noise_dim {
            coords.push(rng.sample(StandardNormal));
        }
    }
    PointSet {
        state_dim: n,
        noise_dim,
        coords,
        weights: vec![1.0 / samples as f64; samples],
    }
}

fn sigma_points(
    mean: &DVector<f64>,
    root: &DMatrix<f64>,
    noise_dim: usize,
    kappa: f64,
) -> Result<PointSet> {
    let n = mean.len();
    let d = n + noise_dim;
    let spread = d as f64 + kappa;
    if spread <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma spread d + kappa = {spread} must be positive (d = {d})"
        )));
    }
    let scale = spread.sqrt();
    let mut center = vec![0.0; d];
    center[..n].copy_from_slice(mean.as_slice());

    let mut coords = Vec::with_capacity((2 * d + 1) * d);
    coords.extend_from_slice(&center);
    for col in 0..d {
        // Column `col` of the block-diagonal square root diag(root, I).
        let mut offset = vec![0.0; d];
        if col < n {
            for row in 0..n {
                offset[row] = scale * root[(row, col)];
            }
        } else {
            offset[col] = scale;
        }
        coords.extend(center.iter().zip(&offset).map(|(c, o)| c + o));
        coords.extend(center.iter().zip(&offset).map(|(c, o)| c - o));
    }
    let mut weights = vec![0.5 / spread; 2 * d + 1];
    weights[0] = kappa / spread;
    Ok(PointSet {
        state_dim: n,
        noise_dim,
        coords,
        weights,
    })
}

fn weighted_mean_slice(values: &[f64], dim: usize, weights: &[f64]) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for (row, &w) in values.chunks_exact(dim).zip(weights) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += w * v;
        }
    }
    mean
}

/// Weighted mean and covariance of row vectors of length `dim`. Only the
/// upper triangle is accumulated; the result is exactly symmetric.
pub(crate) fn weighted_mean_cov(
    values: &[f64],
    dim: usize,
    weights: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    match dim {
        1 => mean_cov_fixed::<1>(values, weights),
        2 => mean_cov_fixed::<2>(values, weights),
        3 => mean_cov_fixed::<3>(values, weights),
        4 => mean_cov_fixed::<4>(values, weights),
        5 => mean_cov_fixed::<5>(values, weights),
        6 => mean_cov_fixed::<6>(values, weights),
        _ => mean_cov_dyn(values, dim, weights),
    }
}

fn mean_cov_fixed<const D: usize>(values: &[f64], weights: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let rows = || {
        values
            .chunks_exact(D)
            .map(|r| <&[f64; D]>::try_from(r).unwrap())
            .zip(weights)
    };
    let mut mean = [0.0; D];
    for (row, &w) in rows() {
        for i in 0..D {
            mean[i] += w * row[i];
        }
    }
    let mut acc = [[0.0; D]; D];
    for (row, &w) in rows() {
        let mut c = [0.0; D];
        for i in 0..D {
            c[i] = row[i] - mean[i];
        }
        for i in 0..D {
            let wi = w * c[i];
            for j in i..D {
                acc[i][j] += wi * c[j];
            }
        }
    }
    let cov = DMatrix::from_fn(D, D, |i, j| if i <= j { acc[i][j] } else { acc[j][i] });
    (DVector::from_row_slice(&mean), cov)
}

fn mean_cov_dyn(values: &[f64], dim: usize, weights: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let mean = weighted_mean_slice(values, dim, weights);
    let mut acc = vec![0.0; dim * dim];
    let mut c = vec![0.0; dim];
    for (row, &w) in values.chunks_exact(dim).zip(weights) {
        for ((ci, v), m) in c.iter_mut().zip(row).zip(&mean) {
            *ci = v - m;
        }
        for (i, acc_row) in acc.chunks_exact_mut(dim).enumerate() {
            let wi = w * c[i];
            for (d, cj) in acc_row[i..].iter_mut().zip(&c[i..]) {
                *d += wi * cj;
            }
        }
    }
    let cov = DMatrix::from_fn(dim, dim, |i, j| {
        if i <= j {
            acc[i * dim + j]
        } else {
            acc[j * dim + i]
        }
    });
    (DVector::from_vec(mean), cov)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightEstimate {
    pub value: f64,
    /// Sampling standard error; zero for deterministic engines.
    pub std_error: f64,
}

/// Estimates `E[p(y | x)]` for `x ~ N(0, I_D)` and `y = x + w`, `w ~ N(0, I_D)`.
///
/// The exact value is `(2 sqrt(pi))^-D`; the estimate shrinks exponentially
/// with `D`, which is why importance weights degenerate in high dimensions.
/// Doubles as a self-test of an engine.
pub fn expected_likelihood_weight(
    dim: usize,
    engine: &ExpectationEngine,
) -> Result<WeightEstimate> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    let prior = GaussianBelief::new(DVector::zeros(dim), DMatrix::identity(dim, dim))?;
    let points = engine.points(&prior, dim)?;
    let norm = (2.0 * std::f64::consts::PI).powf(-0.5 * dim as f64);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut y = vec![0.0; dim];
    for i in 0..points.len() {
        let (x, w) = (points.state(i), points.noise(i));
        for k in 0..dim {
            y[k] = x[k] + w[k];
        }
        let sq: f64 = y.iter().zip(x).map(|(yk, xk)| (yk - xk) * (yk - xk)).sum();
        let lik = norm * (-0.5 * sq).exp();
        let wt = points.weight(i);
        sum += wt * lik;
        sum_sq += wt * lik * lik;
    }
    let std_error = match engine {
        ExpectationEngine::MonteCarlo { samples, .. } => {
            let n = *samples as f64;
            ((sum_sq - sum * sum).max(0.0) * n / (n - 1.0) / n).sqrt()
        }
        ExpectationEngine::SigmaPoint { .. } => 0.0,
    };
    Ok(WeightEstimate {
        value: sum,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(mean: f64, var: f64) -> GaussianBelief {
        GaussianBelief::scalar(mean, var).unwrap()
    }

    #[test]
    fn identity_mean() {
        let b = scalar(3.0, 4.0);
        let sp = ExpectationEngine::sigma_point(0.0).unwrap();
        let v = sp
            .expect(&b, 1, |x, _| DVector::from_column_slice(x))
            .unwrap();
        assert_relative_eq!(v[0], 3.0, epsilon = 1e-14);

        let n = 10_000;
        let mc = ExpectationEngine::monte_carlo(n, 1).unwrap();
        let v = mc
            .expect(&b, 1, |x, _| DVector::from_column_slice(x))
            .unwrap();
        assert!((v[0] - 3.0).abs() < 3.0 * 2.0 / (n as f64).sqrt());
    }

    #[test]
    fn odd_noise_vanishes_for_sigma_points() {
        let b = scalar(-1.5, 2.0);
        let sp = ExpectationEngine::sigma_point(0.5).unwrap();
        let v = sp
            .expect(&b, 2, |_, w| DVector::from_column_slice(w))
            .unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn sigma_points_exact_for_square() {
        let b = scalar(0.0, 1.0);
        for kappa in [0.0, 1.0, 2.0] {
            let sp = ExpectationEngine::sigma_point(kappa).unwrap();
            let v = sp
                .expect(&b, 1, |x, _| DVector::from_element(1, x[0] * x[0]))
                .unwrap();
            assert_relative_eq!(v[0], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn sigma_point_layout() {
        let b = GaussianBelief::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        let sp = ExpectationEngine::sigma_point(0.0).unwrap();
        let pts = sp.points(&b, 1).unwrap();
        assert_eq!(pts.len(), 7);
        assert_relative_eq!(pts.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        // Symmetric pairs about the center.
        let center = pts.point(0).to_vec();
        for k in 0..3 {
            let (p, m) = (pts.point(1 + 2 * k), pts.point(2 + 2 * k));
            for i in 0..3 {
                assert_relative_eq!(p[i] + m[i], 2.0 * center[i], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn sigma_spread_must_be_positive() {
        let sp = ExpectationEngine::sigma_point(-2.0).unwrap();
        assert!(sp.points(&scalar(0.0, 1.0), 1).is_err());
        assert!(ExpectationEngine::monte_carlo(1, 0).is_err());
    }

    #[test]
    fn mc_is_deterministic_per_seed() {
        let b = scalar(0.0, 1.0);
        let a = ExpectationEngine::monte_carlo(100, 9).unwrap();
        let pa = a.points(&b, 1).unwrap();
        let pb = a.points(&b, 1).unwrap();
        assert_eq!(pa.coords, pb.coords);
        let pc = a.reseeded(1).points(&b, 1).unwrap();
        assert_ne!(pa.coords, pc.coords);
    }

    #[test]
    fn non_finite_integrand_reports_point() {
        let sp = ExpectationEngine::sigma_point(0.0).unwrap();
        let err = sp
            .expect(&scalar(0.0, 1.0), 0, |x, _| {
                DVector::from_element(1, 1.0 / x[0])
            })
            .unwrap_err();
        match err {
            Error::NonFiniteIntegrand { index, point } => {
                assert_eq!(index, 0);
                assert_eq!(point, vec![0.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn expected_weight_closed_form() {
        let mc = ExpectationEngine::monte_carlo(200_000, 3).unwrap();
        for (d, exact) in [(1, 0.282_094_791_773_878_1), (2, 0.079_577_471_545_947_67)] {
            let est = expected_likelihood_weight(d, &mc).unwrap();
            assert_relative_eq!(
                exact,
                (2.0 * std::f64::consts::PI.sqrt()).powi(-(d as i32)),
                epsilon = 1e-15
            );
            assert!(
                (est.value - exact).abs() < 3.0 * est.std_error,
                "{d}: {est:?}"
            );
        }
        assert!(expected_likelihood_weight(0, &mc).is_err());
    }
}
