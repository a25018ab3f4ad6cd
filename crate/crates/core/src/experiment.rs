//! Seeded experiment runners and their CSV reports.
//!
//! An experiment simulates a built-in model, filters the measurements once per
//! configured feature (the affine GF first) and records per-step posterior
//! means and standard deviations. Everything is a function of the seed and
//! the settings, so reports regenerate byte for byte.
//!
//! Output layout of [`write_reports`]:
//!
//! - `report_<model>_<feature>.csv`: `seed,t,state,measurement,mean,std`,
//!   ordered by `(seed, t)`, `t` starting at 1;
//! - `summary.csv`: `model,seed,feature,engine,steps,rmse,rmse_near_step,rmse_far_step,failed_step`.
//!
//! RMSE is the root mean square of `posterior mean - true state` over all
//! steps. The near/far columns restrict it to `|x| < 5` and `|x| > 10`
//! (heaviside model only; empty otherwise). A filter that fails records the
//! failing step and NaN from there on.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::{FeatureSpec, Settings};
use crate::error::{Error, Result};
use crate::filter::{fgf_solve, filter_step, joint_moments, predict};
use crate::oracle::{
    conditional_density_grid, conditional_slice, default_grids, grid_joint_moments,
    joint_density_grid, joint_density_window, kl_conditional, Grid1D, DEFAULT_GRID_POINTS,
};
use crate::quad::ExpectationEngine;
use crate::rng::{seeded_rng, STREAM_INITIAL_STATE};
use crate::ssm::{simulate, BuiltinModel, HeavisideParams, NoiseMagnitudeParams};

/// States with `|x|` below this count as near the heaviside step.
pub const NEAR_STEP: f64 = 5.0;
/// States with `|x|` above this count as far from the heaviside step.
pub const FAR_FROM_STEP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: BuiltinModel,
    pub steps: usize,
    pub seed: u64,
    pub engine: ExpectationEngine,
    pub features: Vec<FeatureSpec>,
    pub standardize: bool,
}

impl ExperimentConfig {
    pub fn from_settings(settings: &Settings, seed: u64) -> Self {
        Self {
            model: settings.model,
            steps: settings.steps,
            seed,
            engine: settings.engine,
            features: settings.features.clone(),
            standardize: settings.standardize,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub feature: FeatureSpec,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Step index (0-based) and message of the first failure.
    pub failure: Option<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub model: &'static str,
    pub seed: u64,
    pub engine: String,
    pub states: Vec<f64>,
    pub measurements: Vec<f64>,
    pub runs: Vec<FilterRun>,
    /// Wall-clock time; reported on the console, never written to CSV.
    pub runtime: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub model: &'static str,
    pub seed: u64,
    pub feature: String,
    pub engine: String,
    pub steps: usize,
    pub rmse: f64,
    pub rmse_near_step: Option<f64>,
    pub rmse_far_step: Option<f64>,
    pub failed_step: Option<usize>,
}

impl ExperimentReport {
    pub fn steps(&self) -> usize {
        self.states.len()
    }

    pub fn run(&self, feature: &FeatureSpec) -> Option<&FilterRun> {
        self.runs.iter().find(|r| &r.feature == feature)
    }

    /// Root mean square error of `run` over the steps whose true state passes
    /// `select`; `None` when no step qualifies.
    pub fn rmse_where(&self, run: &FilterRun, select: impl Fn(f64) -> bool) -> Option<f64> {
        let (sum, n) = self
            .states
            .iter()
            .zip(&run.means)
            .filter(|(x, _)| select(**x))
            .fold((0.0, 0usize), |(s, n), (x, m)| (s + (m - x).powi(2), n + 1));
        (n > 0).then(|| (sum / n as f64).sqrt())
    }

    pub fn summary(&self) -> Vec<RunSummary> {
        let regional = self.model == "heaviside";
        self.runs
            .iter()
            .map(|run| RunSummary {
                model: self.model,
                seed: self.seed,
                feature: run.feature.label(),
                engine: self.engine.clone(),
                steps: self.steps(),
                rmse: self.rmse_where(run, |_| true).unwrap_or(f64::NAN),
                rmse_near_step: if regional {
                    self.rmse_where(run, |x| x.abs() < NEAR_STEP)
                } else {
                    None
                },
                rmse_far_step: if regional {
                    self.rmse_where(run, |x| x.abs() > FAR_FROM_STEP)
                } else {
                    None
                },
                failed_step: run.failure.as_ref().map(|(s, _)| *s),
            })
            .collect()
    }
}

/// Simulates the model and runs every configured filter on the same data.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let started = Instant::now();
    let (model, prior) = cfg.model.build()?;
    let init = {
        let mut rng = seeded_rng(cfg.seed, STREAM_INITIAL_STATE);
        let sd = prior.cov()[(0, 0)].sqrt();
        let dist = Normal::new(prior.mean()[0], sd)
            .map_err(|e| Error::InvalidArgument(format!("prior: {e}")))?;
        DVector::from_element(1, dist.sample(&mut rng))
    };
    let traj = simulate(&model, &init, cfg.steps, cfg.seed)?;
    let engine = cfg.engine.reseeded(cfg.seed);

    let mut runs = Vec::with_capacity(cfg.features.len());
    for spec in &cfg.features {
        let feature = spec.build(model.meas_dim(), cfg.standardize)?;
        let mut means = vec![f64::NAN; cfg.steps];
        let mut stds = vec![f64::NAN; cfg.steps];
        let mut failure = None;
        let mut belief = prior.clone();
        for (t, y) in traj.measurements.iter().enumerate() {
            match filter_step(&belief, &model, &feature, &engine, y, t) {
                Ok(next) if next.is_finite() => {
                    means[t] = next.mean()[0];
                    stds[t] = next.std()[0];
                    belief = next;
                }
                Ok(_) => {
                    failure = Some((t, "non-finite posterior".to_string()));
                    break;
                }
                Err(e) => {
                    failure = Some((t, e.to_string()));
                    break;
                }
            }
        }
        runs.push(FilterRun {
            feature: spec.clone(),
            means,
            stds,
            failure,
        });
    }
    Ok(ExperimentReport {
        model: cfg.model.name(),
        seed: cfg.seed,
        engine: cfg.engine.describe(),
        states: traj.states.iter().map(|s| s[0]).collect(),
        measurements: traj.measurements.iter().map(|y| y[0]).collect(),
        runs,
        runtime: started.elapsed(),
    })
}

fn with_affine_first(orders: &[usize]) -> Vec<FeatureSpec> {
    let mut out = vec![FeatureSpec::Monomial(1)];
    for &o in orders {
        if !out.contains(&FeatureSpec::Monomial(o)) {
            out.push(FeatureSpec::Monomial(o));
        }
    }
    out
}

/// Sensor-noise-magnitude experiment with default model parameters; the GF
/// (order 1) always runs alongside the requested feature orders.
pub fn run_noise_experiment(
    steps: usize,
    seed: u64,
    engine: ExpectationEngine,
    orders: &[usize],
) -> Result<ExperimentReport> {
    run_experiment(&ExperimentConfig {
        model: BuiltinModel::NoiseMagnitude(NoiseMagnitudeParams::default()),
        steps,
        seed,
        engine,
        features: with_affine_first(orders),
        standardize: false,
    })
}

/// Heaviside-observation experiment with default model parameters.
///
/// Features are standardized: the cubic feature sits on measurements near 50
/// after the step, where raw monomials are nearly collinear.
pub fn run_heaviside_experiment(
    steps: usize,
    seed: u64,
    engine: ExpectationEngine,
    orders: &[usize],
) -> Result<ExperimentReport> {
    run_experiment(&ExperimentConfig {
        model: BuiltinModel::Heaviside(HeavisideParams::default()),
        steps,
        seed,
        engine,
        features: with_affine_first(orders),
        standardize: true,
    })
}

/// Runs `cfg` once per seed; results come back in seed order regardless of
/// scheduling.
pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<ExperimentReport>> {
    seeds
        .par_iter()
        .map(|&seed| {
            run_experiment(&ExperimentConfig {
                seed,
                ..cfg.clone()
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text of one feature's per-step records across `reports`.
pub fn report_csv(reports: &[ExperimentReport], feature: &FeatureSpec) -> String {
    let mut out = String::from("seed,t,state,measurement,mean,std\n");
    for rep in reports {
        let Some(run) = rep.run(feature) else {
            continue;
        };
        for t in 0..rep.steps() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                rep.seed,
                t + 1,
                rep.states[t],
                rep.measurements[t],
                run.means[t],
                run.stds[t]
            );
        }
    }
    out
}

pub fn summary_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from(
        "model,seed,feature,engine,steps,rmse,rmse_near_step,rmse_far_step,failed_step\n",
    );
    for rep in reports {
        for s in rep.summary() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.model,
                s.seed,
                s.feature,
                s.engine,
                s.steps,
                s.rmse,
                opt(s.rmse_near_step),
                opt(s.rmse_far_step),
                s.failed_step.map(|v| v.to_string()).unwrap_or_default()
            );
        }
    }
    out
}

/// Writes the per-feature reports and `summary.csv` into `dir`.
pub fn write_reports(dir: &Path, reports: &[ExperimentReport]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    let mut written = Vec::new();
    for run in &first.runs {
        let path = dir.join(format!(
            "report_{}_{}.csv",
            first.model,
            run.feature.label()
        ));
        fs::write(&path, report_csv(reports, &run.feature))?;
        written.push(path);
    }
    let path = dir.join("summary.csv");
    fs::write(&path, summary_csv(reports))?;
    written.push(path);
    Ok(written)
}

/// Paired mean difference `mean(a - b)` and its standard error.
pub fn paired_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Exact and approximate conditionals over a measurement range at the first
/// filter step (the prior pushed through one prediction).
#[derive(Debug, Clone)]
pub struct DensityTable {
    pub model: &'static str,
    pub x_grid: Grid1D,
    pub y_grid: Grid1D,
    /// `p(x_i | y_j)`, `q_gf(x_i | y_j)`, `q_fgf(x_i | y_j)`, index `i * n_y + j`.
    pub p: Vec<f64>,
    pub q_gf: Vec<f64>,
    pub q_fgf: Vec<f64>,
    /// Per `y_j`: exact, GF and FGF conditional means (exact is NaN for empty
    /// columns).
    pub means: Vec<[f64; 3]>,
}

/// The GF and FGF curves are fitted to the moments of the full-coverage grid
/// joint, i.e. they are the exact-moment filters, free of sampling noise.
pub fn density_table(
    model: &BuiltinModel,
    fgf: &FeatureSpec,
    standardize: bool,
    grid_points: usize,
    y_range: Option<(f64, f64)>,
) -> Result<DensityTable> {
    let (ssm, prior) = model.build()?;
    // Both built-in process models are linear, so sigma points predict exactly.
    let predicted = predict(&prior, &ssm, &ExpectationEngine::sigma_point(0.0)?)?;
    let (fit_x, fit_y) = default_grids(model, &predicted, DEFAULT_GRID_POINTS)?;
    let full = joint_density_grid(&ssm, &predicted, fit_x, fit_y)?;

    let (x_grid, mut y_grid) = default_grids(model, &predicted, grid_points)?;
    if let Some((lo, hi)) = y_range {
        y_grid = Grid1D::new(lo, hi, grid_points)?;
    }
    let joint = match y_range {
        // A user-chosen measurement window may cut off mass; conditionals
        // are normalized per column and remain exact.
        Some(_) => joint_density_window(&ssm, &predicted, x_grid, y_grid)?,
        None => joint_density_grid(&ssm, &predicted, x_grid, y_grid)?,
    };

    let gf_feature = FeatureSpec::Monomial(1).build(1, standardize)?;
    let fgf_feature = fgf.build(1, standardize)?;
    let gf = fgf_solve(&grid_joint_moments(&full, &gf_feature)?)?;
    let fg = fgf_solve(&grid_joint_moments(&full, &fgf_feature)?)?;
    let q_gf = conditional_density_grid(&joint, &gf, &gf_feature)?;
    let q_fgf = conditional_density_grid(&joint, &fg, &fgf_feature)?;

    let (nx, ny) = (x_grid.len(), y_grid.len());
    let mut p = vec![0.0; nx * ny];
    let mut means = Vec::with_capacity(ny);
    for j in 0..ny {
        let y = y_grid.value(j);
        let yv = DVector::from_element(1, y);
        let exact = match conditional_slice(&joint, y) {
            Ok(c) => {
                for i in 0..nx {
                    p[i * ny + j] = c.density[i];
                }
                c.mean()
            }
            Err(Error::EmptyConditional { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        means.push([
            exact,
            gf.conditional_mean(&gf_feature, &yv)?[0],
            fg.conditional_mean(&fgf_feature, &yv)?[0],
        ]);
    }
    Ok(DensityTable {
        model: model.name(),
        x_grid,
        y_grid,
        p,
        q_gf,
        q_fgf,
        means,
    })
}

impl DensityTable {
    /// `y,x,p,q_gf,q_fgf` rows, y-major.
    pub fn grid_csv(&self) -> String {
        let ny = self.y_grid.len();
        let mut out = String::from("y,x,p,q_gf,q_fgf\n");
        for j in 0..ny {
            let y = self.y_grid.value(j);
            for i in 0..self.x_grid.len() {
                let k = i * ny + j;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    y,
                    self.x_grid.value(i),
                    self.p[k],
                    self.q_gf[k],
                    self.q_fgf[k]
                );
            }
        }
        out
    }

    /// `y,mean_exact,mean_gf,mean_fgf` rows.
    pub fn means_csv(&self) -> String {
        let mut out = String::from("y,mean_exact,mean_gf,mean_fgf\n");
        for (j, [e, g, f]) in self.means.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", self.y_grid.value(j), e, g, f);
        }
        out
    }
}

/// KL objective per feature, for the grid-optimal fit and for the fit from
/// the engine's moments.
#[derive(Debug, Clone, PartialEq)]
pub struct KlRow {
    pub feature: String,
    pub kl_oracle_fit: f64,
    pub kl_engine_fit: f64,
}

pub fn kl_table(
    model: &BuiltinModel,
    engine: &ExpectationEngine,
    features: &[FeatureSpec],
    standardize: bool,
    grid_points: usize,
) -> Result<Vec<KlRow>> {
    let (ssm, prior) = model.build()?;
    let predicted = predict(&prior, &ssm, &ExpectationEngine::sigma_point(0.0)?)?;
    let (x_grid, y_grid) = default_grids(model, &predicted, grid_points)?;
    let joint = joint_density_grid(&ssm, &predicted, x_grid, y_grid)?;
    features
        .iter()
        .map(|spec| {
            let feature = spec.build(1, standardize)?;
            let oracle_fit = fgf_solve(&grid_joint_moments(&joint, &feature)?)?;
            let engine_fit = fgf_solve(&joint_moments(&predicted, &ssm, &feature, engine)?)?;
            Ok(KlRow {
                feature: spec.label(),
                kl_oracle_fit: kl_conditional(&joint, &oracle_fit, &feature)?,
                kl_engine_fit: kl_conditional(&joint, &engine_fit, &feature)?,
            })
        })
        .collect()
}

pub fn kl_csv(rows: &[KlRow]) -> String {
    let mut out = String::from("feature,kl_oracle_fit,kl_engine_fit\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.feature, r.kl_oracle_fit, r.kl_engine_fit);
    }
    out
}
