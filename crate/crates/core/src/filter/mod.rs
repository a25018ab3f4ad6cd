//! Gaussian filter (GF) and feature Gaussian filter (FGF).
//!
//! One filter step is
//!
//! 1. [`predict`]: push the belief through the process model and moment-match
//!    a Gaussian;
//! 2. [`joint_moments`]: moments of `(x, phi(h(x, w)))` under the predicted
//!    belief;
//! 3. [`fgf_solve`]: the KL-optimal `q(x | y) = N(x | Gamma phi(y), Sigma)`,
//!    `Gamma = E[x phi^T] E[phi phi^T]^-1`,
//!    `Sigma = E[(x - Gamma phi)(x - Gamma phi)^T]`;
//! 4. [`fgf_update`]: evaluate that conditional at the observed `y`.
//!
//! The plain GF is the same loop with the affine feature `(1, y)`.
//! [`gf_update`] is the textbook Gaussian conditioning on the same moments and
//! serves as the reference the feature path must reproduce.

mod feature;

pub use feature::{
    make_affine_feature, make_monomial_feature, make_named_feature, FeatureFunction, FeatureMap,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, finalize_covariance};
use crate::quad::{weighted_mean_cov, ExpectationEngine};
use crate::ssm::{GaussianBelief, StateSpaceModel};

/// Affine map applied to the measurement before the feature:
/// `z = (y - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub offset: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardization {
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        (y - &self.offset).component_div(&self.scale)
    }
}

/// Central moments of `(x, phi(y))` under the predicted joint.
///
/// Entry 0 of the feature is the constant 1, so `mu_f[0] == 1` and the
/// corresponding row and column of `s_ff` (and column of `s_xf`) are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMoments {
    pub mu_x: DVector<f64>,
    pub mu_f: DVector<f64>,
    pub s_xx: DMatrix<f64>,
    pub s_ff: DMatrix<f64>,
    pub s_xf: DMatrix<f64>,
    /// Present when the feature was evaluated on standardized measurements.
    pub standardization: Option<Standardization>,
}

impl JointMoments {
    /// Pads the Gaussian joint `(mu_x, mu_y, S_xx, S_yy, S_xy)` with the
    /// constant feature entry, i.e. the moments under the affine feature.
    pub fn from_gaussian_joint(
        mu_x: DVector<f64>,
        mu_y: DVector<f64>,
        s_xx: DMatrix<f64>,
        s_yy: DMatrix<f64>,
        s_xy: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, m) = (mu_x.len(), mu_y.len());
        if s_xx.shape() != (n, n) || s_yy.shape() != (m, m) || s_xy.shape() != (n, m) {
            return Err(Error::InvalidArgument(
                "inconsistent joint moment shapes".into(),
            ));
        }
        let mut mu_f = DVector::zeros(m + 1);
        mu_f[0] = 1.0;
        mu_f.rows_mut(1, m).copy_from(&mu_y);
        let mut s_ff = DMatrix::zeros(m + 1, m + 1);
        s_ff.view_mut((1, 1), (m, m)).copy_from(&s_yy);
        let mut s_xf = DMatrix::zeros(n, m + 1);
        s_xf.columns_mut(1, m).copy_from(&s_xy);
        Ok(Self {
            mu_x,
            mu_f,
            s_xx,
            s_ff,
            s_xf,
            standardization: None,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.mu_x.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.mu_f.len()
    }

    /// The measurement as the GF on these moments sees it: the non-constant
    /// feature entries of the (standardized, if configured) measurement.
    pub fn virtual_measurement(
        &self,
        feature: &FeatureFunction,
        y: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let z = match &self.standardization {
            Some(s) => s.apply(y),
            None => y.clone(),
        };
        let phi = feature.eval(&z)?;
        Ok(phi.rows(1, phi.len() - 1).into_owned())
    }
}

/// Parameters of `q(x | y) = N(x | Gamma phi(y), Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FgfPosteriorParams {
    pub gamma: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub standardization: Option<Standardization>,
}

impl FgfPosteriorParams {
    /// Mean of the conditional for a raw measurement `y`.
    pub fn conditional_mean(
        &self,
        feature: &FeatureFunction,
        y: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let z = match &self.standardization {
            Some(s) => s.apply(y),
            None => y.clone(),
        };
        let phi = feature.eval(&z)?;
        if phi.len() != self.gamma.ncols() {
            return Err(Error::DimensionMismatch {
                context: "feature vs. Gamma columns",
                expected: self.gamma.ncols(),
                actual: phi.len(),
            });
        }
        Ok(&self.gamma * phi)
    }
}

fn check_belief_dim(belief: &GaussianBelief, model: &StateSpaceModel) -> Result<()> {
    if belief.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "belief vs. model state",
            expected: model.state_dim(),
            actual: belief.dim(),
        });
    }
    Ok(())
}

/// Moment-matched prediction `N(E[g(x, v)], Cov[g(x, v)])`.
pub fn predict(
    belief: &GaussianBelief,
    model: &StateSpaceModel,
    engine: &ExpectationEngine,
) -> Result<GaussianBelief> {
    check_belief_dim(belief, model)?;
    let n = model.state_dim();
    let points = engine.points(belief, model.process_noise_dim())?;
    let mut out = vec![0.0; points.len() * n];
    for (i, row) in out.chunks_exact_mut(n).enumerate() {
        model.process_into(points.state(i), points.noise(i), row);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(points.non_finite(i));
        }
    }
    let (mean, cov) = weighted_mean_cov(&out, n, points.weights());
    Ok(GaussianBelief::from_parts(mean, finalize_covariance(cov)))
}

/// Moments of `(x, phi(h(x, w)))` under `belief x N(0, I)`.
pub fn joint_moments(
    belief: &GaussianBelief,
    model: &StateSpaceModel,
    feature: &FeatureFunction,
    engine: &ExpectationEngine,
) -> Result<JointMoments> {
    check_belief_dim(belief, model)?;
    if feature.meas_dim() != model.meas_dim() {
        return Err(Error::DimensionMismatch {
            context: "feature input vs. model measurement",
            expected: model.meas_dim(),
            actual: feature.meas_dim(),
        });
    }
    let m = model.meas_dim();
    let k = feature.out_dim();
    let points = engine.points(belief, model.obs_noise_dim())?;
    let weights = points.weights();

    let mut ys = Vec::with_capacity(points.len() * m);
    let mut y = vec![0.0; m];
    for i in 0..points.len() {
        model.observe_into(points.state(i), points.noise(i), &mut y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(points.non_finite(i));
        }
        ys.extend_from_slice(&y);
    }

    let standardization = if feature.standardize() {
        let (mu_y, s_yy) = weighted_mean_cov(&ys, m, weights);
        let scale = s_yy
            .diagonal()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        for row in ys.chunks_exact_mut(m) {
            for j in 0..m {
                row[j] = (row[j] - mu_y[j]) / scale[j];
            }
        }
        Some(Standardization {
            offset: mu_y,
            scale,
        })
    } else {
        None
    };

    // Stacked rows (x, phi_1(y)..phi_{k-1}(y)); one covariance pass yields
    // every block. The constant entry is dropped and re-attached below.
    let n = model.state_dim();
    let stride = n + k - 1;
    let mut phi = vec![0.0; k];
    let mut stacked = Vec::with_capacity(points.len() * stride);
    for (i, y) in ys.chunks_exact(m).enumerate() {
        feature.eval_into(y, &mut phi);
        if i == 0 {
            feature.check_constant(phi[0])?;
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(points.non_finite(i));
        }
        stacked.extend_from_slice(points.state(i));
        stacked.extend_from_slice(&phi[1..]);
    }
    let (mean, cov) = weighted_mean_cov(&stacked, stride, weights);
    let mu_x = mean.rows(0, n).into_owned();
    let mut mu_f = DVector::zeros(k);
    mu_f[0] = 1.0;
    mu_f.rows_mut(1, k - 1).copy_from(&mean.rows(n, k - 1));
    let s_xx = cov.view((0, 0), (n, n)).into_owned();
    let mut s_ff = DMatrix::zeros(k, k);
    s_ff.view_mut((1, 1), (k - 1, k - 1))
        .copy_from(&cov.view((n, n), (k - 1, k - 1)));
    let mut s_xf = DMatrix::zeros(n, k);
    s_xf.view_mut((0, 1), (n, k - 1))
        .copy_from(&cov.view((0, n), (n, k - 1)));

    Ok(JointMoments {
        mu_x,
        mu_f,
        s_xx: finalize_covariance(s_xx),
        s_ff: finalize_covariance(s_ff),
        s_xf,
        standardization,
    })
}

/// Gaussian conditioning on the virtual measurement `y_hat` (the non-constant
/// feature entries): mean `mu_x + S_xy S_yy^-1 (y_hat - mu_y)`, covariance
/// `S_xx - S_xy S_yy^-1 S_xy^T`.
pub fn gf_update(moments: &JointMoments, y_hat: &DVector<f64>) -> Result<GaussianBelief> {
    let m = moments.feature_dim() - 1;
    if y_hat.len() != m {
        return Err(Error::DimensionMismatch {
            context: "measurement vs. joint moments",
            expected: m,
            actual: y_hat.len(),
        });
    }
    let mu_y = moments.mu_f.rows(1, m);
    let s_yy = moments.s_ff.view((1, 1), (m, m)).into_owned();
    let s_xy = moments.s_xf.columns(1, m).into_owned();
    let gain_t = linalg::solve_spd(&s_yy, &s_xy.transpose()).ok_or(Error::SingularInnovation)?;
    let gain = gain_t.transpose();
    let mean = &moments.mu_x + &gain * (y_hat - mu_y);
    let cov = &moments.s_xx - &gain * s_xy.transpose();
    Ok(GaussianBelief::from_parts(mean, finalize_covariance(cov)))
}

/// Solves for `Gamma` and `Sigma` from the joint moments.
///
/// The raw moments `E[x phi^T] = S_xf + mu_x mu_f^T` and
/// `E[phi phi^T] = S_ff + mu_f mu_f^T` are rebuilt from the central ones and
/// `Gamma` solves the (equilibrated) Gram system. `Sigma` is the expected
/// squared residual, evaluated as residual covariance plus residual mean
/// outer product to avoid cancelling large raw second moments.
pub fn fgf_solve(moments: &JointMoments) -> Result<FgfPosteriorParams> {
    let mu_x = &moments.mu_x;
    let mu_f = &moments.mu_f;
    let gram = &moments.s_ff + mu_f * mu_f.transpose();
    let cross = &moments.s_xf + mu_x * mu_f.transpose();
    let gamma_t =
        linalg::solve_spd(&gram, &cross.transpose()).ok_or(Error::RankDeficientFeatures)?;
    let gamma = gamma_t.transpose();

    let resid_mean = mu_x - &gamma * mu_f;
    let gs_fx = &gamma * moments.s_xf.transpose();
    let resid_cov =
        &moments.s_xx - &gs_fx - gs_fx.transpose() + &gamma * &moments.s_ff * gamma.transpose();
    let sigma = resid_cov + &resid_mean * resid_mean.transpose();
    Ok(FgfPosteriorParams {
        gamma,
        sigma: finalize_covariance(sigma),
        standardization: moments.standardization.clone(),
    })
}

/// `N(Gamma phi(y), Sigma)`; the result is Gaussian and feeds the next
/// [`predict`] directly.
pub fn fgf_update(
    params: &FgfPosteriorParams,
    feature: &FeatureFunction,
    y: &DVector<f64>,
) -> Result<GaussianBelief> {
    let mean = params.conditional_mean(feature, y)?;
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinitePosterior);
    }
    Ok(GaussianBelief::from_parts(mean, params.sigma.clone()))
}

/// One predict / moment / solve / update cycle. `step` seeds the engine so
/// that stochastic engines draw fresh samples every step.
pub fn filter_step(
    belief: &GaussianBelief,
    model: &StateSpaceModel,
    feature: &FeatureFunction,
    engine: &ExpectationEngine,
    y: &DVector<f64>,
    step: usize,
) -> Result<GaussianBelief> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("measurement is not finite".into()));
    }
    let predicted = predict(belief, model, &engine.reseeded(2 * step as u64))?;
    let moments = joint_moments(
        &predicted,
        model,
        feature,
        &engine.reseeded(2 * step as u64 + 1),
    )?;
    let params = fgf_solve(&moments)?;
    fgf_update(&params, feature, y)
}

/// Filters a measurement sequence starting from `prior` (the belief before
/// the first prediction). Returns one posterior per measurement.
pub fn run_filter(
    model: &StateSpaceModel,
    prior: &GaussianBelief,
    feature: &FeatureFunction,
    engine: &ExpectationEngine,
    measurements: &[DVector<f64>],
) -> Result<Vec<GaussianBelief>> {
    let mut out = Vec::with_capacity(measurements.len());
    let mut belief = prior.clone();
    for (t, y) in measurements.iter().enumerate() {
        belief = filter_step(&belief, model, feature, engine, y, t).map_err(|e| e.at_step(t))?;
        out.push(belief.clone());
    }
    Ok(out)
}
