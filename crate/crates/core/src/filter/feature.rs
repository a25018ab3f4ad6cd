//! Measurement features `phi(y)`.
//!
//! Every feature starts with the constant 1. With that entry present the
//! feature filter is a Gaussian filter on the virtual measurement formed by the
//! remaining entries, and the affine feature `(1, y)` recovers the plain GF.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub type FeatureMap = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub struct FeatureFunction {
    name: String,
    meas_dim: usize,
    out_dim: usize,
    map: Arc<FeatureMap>,
    standardize: bool,
}

impl fmt::Debug for FeatureFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureFunction")
            .field("name", &self.name)
            .field("meas_dim", &self.meas_dim)
            .field("out_dim", &self.out_dim)
            .field("standardize", &self.standardize)
            .finish()
    }
}

impl FeatureFunction {
    /// `map(y, out)` must write `out_dim` values with `out[0] == 1`.
    pub fn new<F>(name: impl Into<String>, meas_dim: usize, out_dim: usize, map: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if meas_dim == 0 {
            return Err(Error::InvalidArgument(
                "feature input dimension must be positive".into(),
            ));
        }
        if out_dim < 2 {
            return Err(Error::InvalidArgument(
                "a feature needs the constant plus at least one informative entry".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            meas_dim,
            out_dim,
            map: Arc::new(map),
            standardize: false,
        })
    }

    /// When enabled, the filter evaluates the feature on `(y - mu_y) / sd_y`
    /// using the predicted measurement moments of each step. For polynomial
    /// features this spans the same function space and only improves the
    /// conditioning of the moment solves.
    pub fn with_standardization(mut self, standardize: bool) -> Self {
        self.standardize = standardize;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn meas_dim(&self) -> usize {
        self.meas_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn standardize(&self) -> bool {
        self.standardize
    }

    #[inline]
    pub fn eval_into(&self, y: &[f64], out: &mut [f64]) {
        (self.map)(y, out)
    }

    /// Evaluates `phi(y)` on the raw measurement and checks the constant entry.
    pub fn eval(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.meas_dim {
            return Err(Error::DimensionMismatch {
                context: "feature input",
                expected: self.meas_dim,
                actual: y.len(),
            });
        }
        let mut out = DVector::zeros(self.out_dim);
        self.eval_into(y.as_slice(), out.as_mut_slice());
        self.check_constant(out[0])?;
        Ok(out)
    }

    pub(crate) fn check_constant(&self, first: f64) -> Result<()> {
        if first == 1.0 {
            Ok(())
        } else {
            Err(Error::FeatureConstant {
                name: self.name.clone(),
                got: first,
            })
        }
    }
}

/// `(1, y_1..y_m, y_1^2..y_m^2, ..., y_1^k..y_m^k)`, grouped by power, without
/// cross terms. `out_dim = 1 + meas_dim * order`.
pub fn make_monomial_feature(meas_dim: usize, order: usize) -> Result<FeatureFunction> {
    if order == 0 {
        return Err(Error::InvalidArgument(
            "monomial order must be at least 1".into(),
        ));
    }
    let name = if order == 1 {
        "affine".to_string()
    } else {
        format!("monomial{order}")
    };
    FeatureFunction::new(name, meas_dim, 1 + meas_dim * order, move |y, out| {
        out[0] = 1.0;
        let m = y.len();
        out[1..=m].copy_from_slice(y);
        for p in 1..order {
            let (done, rest) = out.split_at_mut(1 + p * m);
            let prev = &done[1 + (p - 1) * m..];
            for i in 0..m {
                rest[i] = prev[i] * y[i];
            }
        }
    })
}

/// `(1, y)`: the feature under which the feature filter is the plain GF.
pub fn make_affine_feature(meas_dim: usize) -> FeatureFunction {
    make_monomial_feature(meas_dim, 1).expect("order 1 is valid")
}

/// Named non-polynomial features: `abs` gives `(1, |y_i|)`, `abs_affine`
/// gives `(1, y_i, |y_i|)`.
pub fn make_named_feature(name: &str, meas_dim: usize) -> Result<FeatureFunction> {
    match name {
        "abs" => FeatureFunction::new("abs", meas_dim, 1 + meas_dim, |y, out| {
            out[0] = 1.0;
            for (o, v) in out[1..].iter_mut().zip(y) {
                *o = v.abs();
            }
        }),
        "abs_affine" => FeatureFunction::new("abs_affine", meas_dim, 1 + 2 * meas_dim, |y, out| {
            let m = y.len();
            out[0] = 1.0;
            out[1..=m].copy_from_slice(y);
            for (o, v) in out[1 + m..].iter_mut().zip(y) {
                *o = v.abs();
            }
        }),
        other => Err(Error::InvalidArgument(format!(
            "unknown feature `{other}` (known: affine, monomial, abs, abs_affine)"
        ))),
    }
}
