//! Nonlinear stationary state-space models and Gaussian beliefs.
//!
//! A model is a pair of deterministic maps driven by standard-normal noise:
//! the process `x' = g(x, v)` and the observation `y = h(x, w)`. Both maps
//! write into caller-provided slices so the integration engines can evaluate
//! them without allocating per sample.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{fill_standard_normal, seeded_rng, STREAM_SIMULATION};

/// `f(x, noise, out)`: writes the image of `(x, noise)` into `out`.
pub type TransitionFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
/// `p(y | x)`, called as `likelihood(y, x)`.
pub type LikelihoodFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return if x == mean { f64::INFINITY } else { 0.0 };
    }
    let z = (x - mean) / sd;
    INV_SQRT_2PI / sd * (-0.5 * z * z).exp()
}

#[derive(Clone)]
pub struct StateSpaceModel {
    name: String,
    state_dim: usize,
    meas_dim: usize,
    process_noise_dim: usize,
    obs_noise_dim: usize,
    process: Arc<TransitionFn>,
    observe: Arc<TransitionFn>,
    likelihood: Option<Arc<LikelihoodFn>>,
}

impl fmt::Debug for StateSpaceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateSpaceModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("meas_dim", &self.meas_dim)
            .field("process_noise_dim", &self.process_noise_dim)
            .field("obs_noise_dim", &self.obs_noise_dim)
            .field("likelihood", &self.likelihood.is_some())
            .finish()
    }
}

impl StateSpaceModel {
    /// Noise dimensions default to `state_dim` (process) and `meas_dim`
    /// (observation); override with [`StateSpaceModel::with_noise_dims`].
    pub fn new<G, H>(
        name: impl Into<String>,
        state_dim: usize,
        meas_dim: usize,
        process: G,
        observe: H,
    ) -> Result<Self>
    where
        G: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        H: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if state_dim == 0 || meas_dim == 0 {
            return Err(Error::InvalidArgument(
                "state and measurement dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            meas_dim,
            process_noise_dim: state_dim,
            obs_noise_dim: meas_dim,
            process: Arc::new(process),
            observe: Arc::new(observe),
            likelihood: None,
        })
    }

    pub fn with_noise_dims(
        mut self,
        process_noise_dim: usize,
        obs_noise_dim: usize,
    ) -> Result<Self> {
        if process_noise_dim == 0 || obs_noise_dim == 0 {
            return Err(Error::InvalidArgument(
                "noise dimensions must be positive".into(),
            ));
        }
        self.process_noise_dim = process_noise_dim;
        self.obs_noise_dim = obs_noise_dim;
        Ok(self)
    }

    pub fn with_likelihood<L>(mut self, likelihood: L) -> Self
    where
        L: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.likelihood = Some(Arc::new(likelihood));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn meas_dim(&self) -> usize {
        self.meas_dim
    }

    pub fn process_noise_dim(&self) -> usize {
        self.process_noise_dim
    }

    pub fn obs_noise_dim(&self) -> usize {
        self.obs_noise_dim
    }

    pub fn has_likelihood(&self) -> bool {
        self.likelihood.is_some()
    }

    #[inline]
    pub fn process_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        (self.process)(x, v, out)
    }

    #[inline]
    pub fn observe_into(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        (self.observe)(x, w, out)
    }

    pub fn process(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim);
        self.process_into(x.as_slice(), v.as_slice(), out.as_mut_slice());
        out
    }

    pub fn observe(&self, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.meas_dim);
        self.observe_into(x.as_slice(), w.as_slice(), out.as_mut_slice());
        out
    }

    /// `p(y | x)`, or `None` when the model has no analytic likelihood.
    pub fn likelihood(&self, y: &[f64], x: &[f64]) -> Option<f64> {
        self.likelihood.as_ref().map(|l| l(y, x))
    }
}

/// Mean and covariance of a Gaussian over the state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Validates dimensions, symmetry and positive semidefiniteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "belief covariance",
                expected: mean.len(),
                actual: cov.nrows(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("belief mean is not finite".into()));
        }
        linalg::check_covariance(&cov)?;
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
        )
    }

    /// For values produced internally, already symmetrized and PSD-projected.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Marginal standard deviations.
    pub fn std(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.mean
            .iter()
            .chain(self.cov.iter())
            .all(|v| v.is_finite())
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

/// Parameters of the sensor-noise-magnitude system `M' = M + s v`, `y = M w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMagnitudeParams {
    pub prior_mean: f64,
    /// Variance (not standard deviation) of the initial belief.
    pub prior_var: f64,
    pub process_noise: f64,
}

impl Default for NoiseMagnitudeParams {
    fn default() -> Self {
        Self {
            prior_mean: 5.0,
            prior_var: 1.0,
            process_noise: 0.1,
        }
    }
}

/// Parameters of the step-observation system `x' = x + s v`,
/// `y = x + w + height * H(x)` with `H(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeavisideParams {
    pub prior_mean: f64,
    /// Variance (not standard deviation) of the initial belief.
    pub prior_var: f64,
    pub process_noise: f64,
    pub step_height: f64,
}

impl Default for HeavisideParams {
    fn default() -> Self {
        Self {
            prior_mean: 0.0,
            prior_var: 5.0,
            process_noise: 1.0,
            step_height: 50.0,
        }
    }
}

/// The two scalar benchmark systems, addressable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinModel {
    NoiseMagnitude(NoiseMagnitudeParams),
    Heaviside(HeavisideParams),
}

impl BuiltinModel {
    pub const NAMES: [&'static str; 2] = ["noise_magnitude", "heaviside"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "noise_magnitude" => Ok(Self::NoiseMagnitude(NoiseMagnitudeParams::default())),
            "heaviside" => Ok(Self::Heaviside(HeavisideParams::default())),
            other => Err(Error::InvalidArgument(format!(
                "unknown model `{other}` (expected one of {:?})",
                Self::NAMES
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::NoiseMagnitude(_) => "noise_magnitude",
            Self::Heaviside(_) => "heaviside",
        }
    }

    /// Feature order used for the nonlinear filter in the reference experiments.
    pub fn default_feature_order(&self) -> usize {
        match self {
            Self::NoiseMagnitude(_) => 2,
            Self::Heaviside(_) => 3,
        }
    }

    pub fn prior(&self) -> Result<GaussianBelief> {
        match self {
            Self::NoiseMagnitude(p) => GaussianBelief::scalar(p.prior_mean, p.prior_var),
            Self::Heaviside(p) => GaussianBelief::scalar(p.prior_mean, p.prior_var),
        }
    }

    pub fn build(&self) -> Result<(StateSpaceModel, GaussianBelief)> {
        let model = match *self {
            Self::NoiseMagnitude(p) => noise_magnitude_model(p.process_noise)?,
            Self::Heaviside(p) => heaviside_model(p.process_noise, p.step_height)?,
        };
        Ok((model, self.prior()?))
    }

    /// Measurement interval holding essentially all of the mass of `y`
    /// under the given state belief.
    pub fn measurement_range(&self, belief: &GaussianBelief) -> (f64, f64) {
        let m = belief.mean()[0];
        let s = belief.cov()[(0, 0)].max(0.0).sqrt();
        match self {
            Self::NoiseMagnitude(_) => {
                let rms = (m * m + s * s).sqrt();
                (-6.0 * rms, 6.0 * rms)
            }
            Self::Heaviside(p) => {
                let lo = m - 6.0 * s - 6.0;
                let hi = m + 6.0 * s + 6.0;
                (lo.min(lo + p.step_height), hi.max(hi + p.step_height))
            }
        }
    }
}

fn noise_magnitude_model(process_noise: f64) -> Result<StateSpaceModel> {
    Ok(StateSpaceModel::new(
        "noise_magnitude",
        1,
        1,
        move |m, v, out| out[0] = m[0] + process_noise * v[0],
        |m, w, out| out[0] = m[0] * w[0],
    )?
    .with_likelihood(|y, m| normal_pdf(y[0], 0.0, m[0].abs())))
}

#[inline]
fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn heaviside_model(process_noise: f64, step_height: f64) -> Result<StateSpaceModel> {
    Ok(StateSpaceModel::new(
        "heaviside",
        1,
        1,
        move |x, v, out| out[0] = x[0] + process_noise * v[0],
        move |x, w, out| out[0] = x[0] + w[0] + step_height * heaviside(x[0]),
    )?
    .with_likelihood(move |y, x| normal_pdf(y[0], x[0] + step_height * heaviside(x[0]), 1.0)))
}

/// Sensor-noise-magnitude system with default parameters, plus its prior
/// `N(5, 1)`.
pub fn make_noise_magnitude_model() -> (StateSpaceModel, GaussianBelief) {
    BuiltinModel::NoiseMagnitude(NoiseMagnitudeParams::default())
        .build()
        .expect("default parameters are valid")
}

/// Step-observation system with default parameters, plus its prior `N(0, 5)`.
pub fn make_heaviside_model() -> (StateSpaceModel, GaussianBelief) {
    BuiltinModel::Heaviside(HeavisideParams::default())
        .build()
        .expect("default parameters are valid")
}

/// Linear-Gaussian model `x' = A x + chol(Q) v`, `y = C x + chol(R) w`.
pub fn make_linear_gaussian_model(
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    c: DMatrix<f64>,
    r: DMatrix<f64>,
) -> Result<StateSpaceModel> {
    let n = a.nrows();
    let m = c.nrows();
    if !a.is_square() || q.shape() != (n, n) || c.ncols() != n || r.shape() != (m, m) {
        return Err(Error::InvalidArgument(
            "inconsistent linear-Gaussian model matrices".into(),
        ));
    }
    let lq = q
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveSemidefinite {
            min_eigenvalue: f64::NAN,
        })?
        .l();
    let lr = r
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveSemidefinite {
            min_eigenvalue: f64::NAN,
        })?
        .l();
    let r_inv = r.clone().try_inverse().ok_or(Error::SingularInnovation)?;
    let r_det = r.determinant();
    let norm = ((2.0 * std::f64::consts::PI).powi(m as i32) * r_det)
        .sqrt()
        .recip();
    let c_lik = c.clone();

    let affine = |mat: DMatrix<f64>, noise: DMatrix<f64>| {
        move |x: &[f64], e: &[f64], out: &mut [f64]| {
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, xj) in x.iter().enumerate() {
                    acc += mat[(i, j)] * xj;
                }
                for (j, ej) in e.iter().enumerate() {
                    acc += noise[(i, j)] * ej;
                }
                *o = acc;
            }
        }
    };
    Ok(
        StateSpaceModel::new("linear_gaussian", n, m, affine(a, lq), affine(c, lr))?
            .with_likelihood(move |y, x| {
                let x = DVector::from_column_slice(x);
                let innov = DVector::from_column_slice(y) - &c_lik * x;
                let quad = innov.dot(&(&r_inv * &innov));
                norm * (-0.5 * quad).exp()
            }),
    )
}

/// Simulated states and measurements; index `t` holds `x_{t+1}`, `y_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

/// Runs the model forward from `init_state`.
///
/// Each step applies the process map to the previous state with fresh noise
/// `v`, then observes the new state with fresh noise `w`. The initial state
/// itself is not part of the output.
pub fn simulate(
    model: &StateSpaceModel,
    init_state: &DVector<f64>,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if init_state.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: model.state_dim(),
            actual: init_state.len(),
        });
    }
    let mut rng = seeded_rng(seed, STREAM_SIMULATION);
    let mut v = vec![0.0; model.process_noise_dim()];
    let mut w = vec![0.0; model.obs_noise_dim()];
    let mut states = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    let mut x = init_state.clone();
    for t in 0..steps {
        fill_standard_normal(&mut rng, &mut v);
        fill_standard_normal(&mut rng, &mut w);
        let mut next = DVector::zeros(model.state_dim());
        model.process_into(x.as_slice(), &v, next.as_mut_slice());
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: t });
        }
        let mut y = DVector::zeros(model.meas_dim());
        model.observe_into(next.as_slice(), &w, y.as_mut_slice());
        states.push(next.clone());
        measurements.push(y);
        x = next;
    }
    Ok(Trajectory {
        states,
        measurements,
    })
}
