//! Brute-force ground truth for scalar models.
//!
//! The joint `p(x, y) = p(y | x) N(x | mu, var)` is tabulated on a uniform
//! grid of cell centers. Conditionals, moments and the joint-vs-conditional
//! KL objective
//!
//! ```text
//! KL[p(x, y) | q(x | y)] = sum_ij p_ij log(p_ij / q(x_i | y_j)) dx dy
//! ```
//!
//! are then plain Riemann sums. The KL value includes the `q`-independent
//! entropy term of `p`, so only differences between candidate `q` are
//! meaningful.
//!
//! Cost is `n_x * n_y` likelihood evaluations, which is fine in one
//! dimension and the reason this is only an oracle.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{FeatureFunction, FgfPosteriorParams, JointMoments, Standardization};
use crate::linalg::finalize_covariance;
use crate::ssm::{normal_pdf, BuiltinModel, GaussianBelief, StateSpaceModel};

/// Default number of cells per axis.
pub const DEFAULT_GRID_POINTS: usize = 2001;

/// Largest tolerated missing probability mass of a grid.
pub const COVERAGE_TOLERANCE: f64 = 1e-3;

/// Absolute tolerance for comparing KL objectives evaluated on the same grid.
pub const KL_GRID_TOLERANCE: f64 = 1e-6;

/// `n` uniform cells on `[lo, hi]`, represented by their centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "grid bounds [{lo}, {hi}] are invalid"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidArgument(
                "grid needs at least one cell".into(),
            ));
        }
        Ok(Self { lo, hi, n })
    }

    /// `mean +- half_width * sd`.
    pub fn centered(mean: f64, sd: f64, half_width: f64, n: usize) -> Result<Self> {
        Self::new(mean - half_width * sd, mean + half_width * sd, n)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.spacing()
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i)).collect()
    }

    /// Index of the cell containing `v`, or `None` outside `[lo, hi]`.
    pub fn nearest(&self, v: f64) -> Option<usize> {
        if !(self.lo..=self.hi).contains(&v) {
            return None;
        }
        let i = ((v - self.lo) / self.spacing()).floor() as usize;
        Some(i.min(self.n - 1))
    }
}

/// Normalized joint density on a grid; `density[i * n_y + j]` is `p(x_i, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity2D {
    pub x_grid: Grid1D,
    pub y_grid: Grid1D,
    density: Vec<f64>,
    /// Unnormalized mass captured by the grid before normalization.
    pub captured_mass: f64,
}

impl GridDensity2D {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.density[i * self.y_grid.len() + j]
    }

    pub fn cell_area(&self) -> f64 {
        self.x_grid.spacing() * self.y_grid.spacing()
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_area()
    }

    /// `p(x_i)` on the x grid.
    pub fn marginal_x(&self) -> Vec<f64> {
        let dy = self.y_grid.spacing();
        self.density
            .chunks_exact(self.y_grid.len())
            .map(|row| row.iter().sum::<f64>() * dy)
            .collect()
    }

    /// `p(y_j)` on the y grid.
    pub fn marginal_y(&self) -> Vec<f64> {
        let dx = self.x_grid.spacing();
        let mut out = vec![0.0; self.y_grid.len()];
        for row in self.density.chunks_exact(self.y_grid.len()) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p * dx;
            }
        }
        out
    }
}

/// Default grids for a built-in model: the state axis spans `mean +- 6 sd` of
/// `belief`, the measurement axis the model's measurement range.
pub fn default_grids(
    model: &BuiltinModel,
    belief: &GaussianBelief,
    n: usize,
) -> Result<(Grid1D, Grid1D)> {
    let sd = belief.cov()[(0, 0)].sqrt();
    let x = Grid1D::centered(belief.mean()[0], sd, 6.0, n)?;
    let (lo, hi) = model.measurement_range(belief);
    Ok((x, Grid1D::new(lo, hi, n)?))
}

fn require_scalar(model: &StateSpaceModel, belief: &GaussianBelief) -> Result<()> {
    if model.state_dim() != 1 || model.meas_dim() != 1 || belief.dim() != 1 {
        return Err(Error::InvalidArgument(
            "the grid oracle supports scalar models only".into(),
        ));
    }
    Ok(())
}

/// Tabulates `p(y | x) N(x | prior)` and normalizes it.
///
/// Fails with [`Error::GridCoverage`] when the grid captures less than
/// `1 - COVERAGE_TOLERANCE` of the joint mass.
pub fn joint_density_grid(
    model: &StateSpaceModel,
    prior: &GaussianBelief,
    x_grid: Grid1D,
    y_grid: Grid1D,
) -> Result<GridDensity2D> {
    let joint = tabulate(model, prior, x_grid, y_grid)?;
    if joint.captured_mass < 1.0 - COVERAGE_TOLERANCE {
        return Err(Error::GridCoverage(format!(
            "grid captures only {:.6} of the joint mass",
            joint.captured_mass
        )));
    }
    Ok(joint)
}

/// Like [`joint_density_grid`] but for a window that need not hold all the
/// mass; the result is normalized over the window.
pub fn joint_density_window(
    model: &StateSpaceModel,
    prior: &GaussianBelief,
    x_grid: Grid1D,
    y_grid: Grid1D,
) -> Result<GridDensity2D> {
    tabulate(model, prior, x_grid, y_grid)
}

fn tabulate(
    model: &StateSpaceModel,
    prior: &GaussianBelief,
    x_grid: Grid1D,
    y_grid: Grid1D,
) -> Result<GridDensity2D> {
    require_scalar(model, prior)?;
    if !model.has_likelihood() {
        return Err(Error::MissingLikelihood);
    }
    let mean = prior.mean()[0];
    let sd = prior.cov()[(0, 0)].sqrt();
    let ny = y_grid.len();
    let ys = y_grid.values();
    let mut density = vec![0.0; x_grid.len() * ny];
    density.par_chunks_mut(ny).enumerate().for_each(|(i, row)| {
        let x = x_grid.value(i);
        let px = normal_pdf(x, mean, sd);
        for (cell, y) in row.iter_mut().zip(&ys) {
            *cell = px * model.likelihood(&[*y], &[x]).expect("checked above");
        }
    });
    if density.iter().any(|p| !p.is_finite()) {
        return Err(Error::GridCoverage(
            "joint density is not finite on the grid".into(),
        ));
    }
    let row_sums: Vec<f64> = density.chunks_exact(ny).map(|r| r.iter().sum()).collect();
    let captured = row_sums.iter().sum::<f64>() * x_grid.spacing() * y_grid.spacing();
    if captured.is_nan() || captured <= 0.0 {
        return Err(Error::GridCoverage("grid holds no probability mass".into()));
    }
    for p in density.iter_mut() {
        *p /= captured;
    }
    Ok(GridDensity2D {
        x_grid,
        y_grid,
        density,
        captured_mass: captured,
    })
}

/// Discrete density over the x grid, normalized so `sum * dx = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConditional {
    pub grid: Grid1D,
    pub density: Vec<f64>,
    /// The measurement the slice was taken at (the grid column center).
    pub y: f64,
}

impl GridConditional {
    pub fn mean(&self) -> f64 {
        let dx = self.grid.spacing();
        self.density
            .iter()
            .enumerate()
            .map(|(i, p)| self.grid.value(i) * p * dx)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let dx = self.grid.spacing();
        let m = self.mean();
        self.density
            .iter()
            .enumerate()
            .map(|(i, p)| (self.grid.value(i) - m).powi(2) * p * dx)
            .sum()
    }

    /// Probability of the cells whose center satisfies `pred`.
    pub fn mass_where(&self, pred: impl Fn(f64) -> bool) -> f64 {
        let dx = self.grid.spacing();
        self.density
            .iter()
            .enumerate()
            .filter(|(i, _)| pred(self.grid.value(*i)))
            .map(|(_, p)| p * dx)
            .sum()
    }
}

/// Exact (grid) posterior `p(x | y)` from the column nearest to `y`.
pub fn conditional_slice(joint: &GridDensity2D, y: f64) -> Result<GridConditional> {
    let j = joint.y_grid.nearest(y).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "y = {y} lies outside the grid [{}, {}]",
            joint.y_grid.lo(),
            joint.y_grid.hi()
        ))
    })?;
    let column: Vec<f64> = (0..joint.x_grid.len()).map(|i| joint.at(i, j)).collect();
    let norm = column.iter().sum::<f64>() * joint.x_grid.spacing();
    if norm <= 0.0 || !norm.is_finite() {
        return Err(Error::EmptyConditional { y });
    }
    Ok(GridConditional {
        grid: joint.x_grid,
        density: column.into_iter().map(|p| p / norm).collect(),
        y: joint.y_grid.value(j),
    })
}

fn feature_rows(
    joint: &GridDensity2D,
    feature: &FeatureFunction,
    standardization: Option<&Standardization>,
) -> Result<Vec<DVector<f64>>> {
    (0..joint.y_grid.len())
        .map(|j| {
            let y = DVector::from_element(1, joint.y_grid.value(j));
            let z = match standardization {
                Some(s) => s.apply(&y),
                None => y,
            };
            feature.eval(&z)
        })
        .collect()
}

/// Conditional means `Gamma phi(y_j)` (scalar state) for every grid column.
fn conditional_means(
    joint: &GridDensity2D,
    params: &FgfPosteriorParams,
    feature: &FeatureFunction,
) -> Result<Vec<f64>> {
    if params.gamma.nrows() != 1 || params.gamma.ncols() != feature.out_dim() {
        return Err(Error::DimensionMismatch {
            context: "Gamma vs. scalar state and feature",
            expected: feature.out_dim(),
            actual: params.gamma.ncols(),
        });
    }
    let phis = feature_rows(joint, feature, params.standardization.as_ref())?;
    Ok(phis.iter().map(|phi| (&params.gamma * phi)[0]).collect())
}

/// Riemann sum of `p log(p / q)` for `q(x | y) = N(x | Gamma phi(y), Sigma)`.
/// Infinite when `Sigma` is not positive.
pub fn kl_conditional(
    joint: &GridDensity2D,
    params: &FgfPosteriorParams,
    feature: &FeatureFunction,
) -> Result<f64> {
    let means = conditional_means(joint, params, feature)?;
    let var = params.sigma[(0, 0)];
    if var.is_nan() {
        return Err(Error::NonFinitePosterior);
    }
    if var <= 0.0 {
        // A point-mass q cannot cover a continuous p.
        return Ok(f64::INFINITY);
    }
    let sd = var.sqrt();
    let ny = joint.y_grid.len();
    let area = joint.cell_area();
    let row_terms: Vec<f64> = (0..joint.x_grid.len())
        .into_par_iter()
        .map(|i| {
            let x = joint.x_grid.value(i);
            let row = &joint.density[i * ny..(i + 1) * ny];
            let mut acc = 0.0;
            for (p, mean) in row.iter().zip(&means) {
                if *p > 0.0 {
                    let z = (x - mean) / sd;
                    let log_q = -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                    acc += p * (p.ln() - log_q);
                }
            }
            acc
        })
        .collect();
    Ok(row_terms.iter().sum::<f64>() * area)
}

/// Conditional density values `q(x_i | y_j)` laid out like the grid joint.
pub fn conditional_density_grid(
    joint: &GridDensity2D,
    params: &FgfPosteriorParams,
    feature: &FeatureFunction,
) -> Result<Vec<f64>> {
    let means = conditional_means(joint, params, feature)?;
    let sd = params.sigma[(0, 0)].max(0.0).sqrt();
    let mut out = Vec::with_capacity(joint.x_grid.len() * joint.y_grid.len());
    for i in 0..joint.x_grid.len() {
        let x = joint.x_grid.value(i);
        out.extend(means.iter().map(|m| normal_pdf(x, *m, sd)));
    }
    Ok(out)
}

/// Moments of `(x, phi(y))` under the grid joint: the inputs for which
/// [`crate::filter::fgf_solve`] minimizes [`kl_conditional`] on this grid.
pub fn grid_joint_moments(
    joint: &GridDensity2D,
    feature: &FeatureFunction,
) -> Result<JointMoments> {
    let ny = joint.y_grid.len();
    let area = joint.cell_area();
    let xs = joint.x_grid.values();
    let ys = joint.y_grid.values();
    let px: Vec<f64> = joint
        .marginal_x()
        .iter()
        .map(|p| p * joint.x_grid.spacing())
        .collect();
    let py: Vec<f64> = joint
        .marginal_y()
        .iter()
        .map(|p| p * joint.y_grid.spacing())
        .collect();
    let total: f64 = px.iter().sum();

    let mu_x = xs.iter().zip(&px).map(|(x, p)| x * p).sum::<f64>() / total;
    let s_xx = xs
        .iter()
        .zip(&px)
        .map(|(x, p)| (x - mu_x).powi(2) * p)
        .sum::<f64>()
        / total;

    let standardization = if feature.standardize() {
        let mu_y = ys.iter().zip(&py).map(|(y, p)| y * p).sum::<f64>() / total;
        let var_y = ys
            .iter()
            .zip(&py)
            .map(|(y, p)| (y - mu_y).powi(2) * p)
            .sum::<f64>()
            / total;
        Some(Standardization {
            offset: DVector::from_element(1, mu_y),
            scale: DVector::from_element(1, if var_y > 0.0 { var_y.sqrt() } else { 1.0 }),
        })
    } else {
        None
    };
    let phis = feature_rows(joint, feature, standardization.as_ref())?;
    let k = feature.out_dim();

    let mut mu_f = DVector::zeros(k);
    for (phi, p) in phis.iter().zip(&py) {
        mu_f.axpy(*p / total, phi, 1.0);
    }
    // Column-wise E[(x - mu_x) | y_j] p(y_j).
    let mut centered_x = vec![0.0; ny];
    for (i, x) in xs.iter().enumerate() {
        let row = &joint.density[i * ny..(i + 1) * ny];
        for (c, p) in centered_x.iter_mut().zip(row) {
            *c += (x - mu_x) * p * area;
        }
    }
    let mut s_ff = DMatrix::zeros(k, k);
    let mut s_xf = DMatrix::zeros(1, k);
    for ((phi, p), cx) in phis.iter().zip(&py).zip(&centered_x) {
        let d = phi - &mu_f;
        s_ff += (&d * d.transpose()) * (*p / total);
        for c in 0..k {
            s_xf[(0, c)] += cx * d[c] / total;
        }
    }
    mu_f[0] = 1.0;
    s_ff.row_mut(0).fill(0.0);
    s_ff.column_mut(0).fill(0.0);
    s_xf.column_mut(0).fill(0.0);
    Ok(JointMoments {
        mu_x: DVector::from_element(1, mu_x),
        mu_f,
        s_xx: DMatrix::from_element(1, 1, s_xx),
        s_ff: finalize_covariance(s_ff),
        s_xf,
        standardization,
    })
}

/// `E[X^k]` for `X ~ N(mean, var)` via
/// `E[X^k] = mean E[X^(k-1)] + (k - 1) var E[X^(k-2)]`.
pub fn gaussian_moment_oracle(mean: f64, var: f64, k: u32) -> f64 {
    assert!(var >= 0.0, "variance must be nonnegative");
    let (mut prev, mut cur) = (0.0, 1.0);
    for j in 1..=k {
        let next = mean * cur + (j - 1) as f64 * var * prev;
        prev = cur;
        cur = next;
    }
    cur
}
