//! Plain-text `key = value` configuration shared by the library and the CLI.
//!
//! ```text
//! # comment
//! model = heaviside
//! model.prior_var = 5
//! engine.kind = monte_carlo
//! engine.samples = 10000
//! feature.kind = monomial
//! feature.order = 3
//! ```
//!
//! Recognized keys are listed in [`KNOWN_KEYS`]; anything else is rejected so
//! that typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::filter::{make_monomial_feature, make_named_feature, FeatureFunction};
use crate::quad::{ExpectationEngine, DEFAULT_MC_SAMPLES};
use crate::ssm::BuiltinModel;

pub const KNOWN_KEYS: &[&str] = &[
    "model",
    "model.prior_mean",
    "model.prior_var",
    "model.noise_scale",
    "model.step_height",
    "engine.kind",
    "engine.samples",
    "engine.seed",
    "engine.kappa",
    "feature.kind",
    "feature.order",
    "feature.standardize",
    "experiment.steps",
    "experiment.seed",
    "experiment.seeds",
    "experiment.orders",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueConfig {
    entries: BTreeMap<String, String>,
}

impl KeyValueConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{key}`",
                    lineno + 1
                )));
            }
            let value = value.trim().trim_matches('"');
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }
}

/// Parses `1,2,3` into feature orders.
pub fn parse_orders(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&o| o >= 1)
                .ok_or_else(|| Error::Config(format!("invalid feature order `{s}`")))
        })
        .collect()
}

/// A feature selected by configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSpec {
    Monomial(usize),
    Named(String),
}

impl FeatureSpec {
    /// Used in file names and CSV columns: the order for monomials, the name
    /// otherwise.
    pub fn label(&self) -> String {
        match self {
            Self::Monomial(order) => order.to_string(),
            Self::Named(name) => name.clone(),
        }
    }

    pub fn build(&self, meas_dim: usize, standardize: bool) -> Result<FeatureFunction> {
        let f = match self {
            Self::Monomial(order) => make_monomial_feature(meas_dim, *order)?,
            Self::Named(name) => make_named_feature(name, meas_dim)?,
        };
        Ok(f.with_standardization(standardize))
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: BuiltinModel,
    pub engine: ExpectationEngine,
    /// Feature runs; the affine GF (`Monomial(1)`) always comes first.
    pub features: Vec<FeatureSpec>,
    pub standardize: bool,
    pub steps: usize,
    pub seed: u64,
    pub seeds: usize,
}

impl Settings {
    pub fn from_config(cfg: &KeyValueConfig) -> Result<Self> {
        let mut model = BuiltinModel::from_name(cfg.get("model").unwrap_or("noise_magnitude"))?;
        match &mut model {
            BuiltinModel::NoiseMagnitude(p) => {
                if let Some(v) = cfg.get_parsed("model.prior_mean")? {
                    p.prior_mean = v;
                }
                if let Some(v) = cfg.get_parsed("model.prior_var")? {
                    p.prior_var = v;
                }
                if let Some(v) = cfg.get_parsed("model.noise_scale")? {
                    p.process_noise = v;
                }
                if cfg.get("model.step_height").is_some() {
                    return Err(Error::Config(
                        "`model.step_height` only applies to the heaviside model".into(),
                    ));
                }
            }
            BuiltinModel::Heaviside(p) => {
                if let Some(v) = cfg.get_parsed("model.prior_mean")? {
                    p.prior_mean = v;
                }
                if let Some(v) = cfg.get_parsed("model.prior_var")? {
                    p.prior_var = v;
                }
                if let Some(v) = cfg.get_parsed("model.noise_scale")? {
                    p.process_noise = v;
                }
                if let Some(v) = cfg.get_parsed("model.step_height")? {
                    p.step_height = v;
                }
            }
        }

        let (prior_mean, prior_var, noise, height) = match &model {
            BuiltinModel::NoiseMagnitude(p) => (p.prior_mean, p.prior_var, p.process_noise, 0.0),
            BuiltinModel::Heaviside(p) => {
                (p.prior_mean, p.prior_var, p.process_noise, p.step_height)
            }
        };
        if !prior_mean.is_finite() {
            return Err(Error::Config("`model.prior_mean` must be finite".into()));
        }
        if !(prior_var > 0.0 && prior_var.is_finite()) {
            return Err(Error::Config(
                "`model.prior_var` must be positive and finite".into(),
            ));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(
                "`model.noise_scale` must be nonnegative and finite".into(),
            ));
        }
        if !height.is_finite() {
            return Err(Error::Config("`model.step_height` must be finite".into()));
        }

        let engine = match cfg.get("engine.kind").unwrap_or("monte_carlo") {
            "monte_carlo" => ExpectationEngine::monte_carlo(
                cfg.get_parsed("engine.samples")?
                    .unwrap_or(DEFAULT_MC_SAMPLES),
                cfg.get_parsed("engine.seed")?.unwrap_or(0),
            )?,
            "sigma_point" => {
                ExpectationEngine::sigma_point(cfg.get_parsed("engine.kappa")?.unwrap_or(0.0))?
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown engine kind `{other}` (monte_carlo | sigma_point)"
                )))
            }
        };

        let order: Option<usize> = cfg.get_parsed("feature.order")?;
        let orders = cfg.get("experiment.orders").map(parse_orders).transpose()?;
        let mut features = match cfg.get("feature.kind").unwrap_or("monomial") {
            "affine" => vec![FeatureSpec::Monomial(1)],
            "monomial" => match (orders, order) {
                (Some(list), _) => list.into_iter().map(FeatureSpec::Monomial).collect(),
                (None, Some(o)) => vec![FeatureSpec::Monomial(o)],
                (None, None) => vec![FeatureSpec::Monomial(model.default_feature_order())],
            },
            name => {
                // Validate the name eagerly.
                make_named_feature(name, 1)?;
                vec![FeatureSpec::Named(name.to_string())]
            }
        };
        if !features.contains(&FeatureSpec::Monomial(1)) {
            features.insert(0, FeatureSpec::Monomial(1));
        }
        let mut seen = Vec::new();
        features.retain(|f| {
            let fresh = !seen.contains(f);
            seen.push(f.clone());
            fresh
        });

        let steps = cfg.get_parsed("experiment.steps")?.unwrap_or(1000);
        if steps == 0 {
            return Err(Error::Config(
                "`experiment.steps` must be at least 1".into(),
            ));
        }
        let seeds = cfg.get_parsed("experiment.seeds")?.unwrap_or(1);
        if seeds == 0 {
            return Err(Error::Config(
                "`experiment.seeds` must be at least 1".into(),
            ));
        }
        let standardize = match cfg.get("feature.standardize") {
            // Heaviside measurements sit near the step height, where raw
            // monomials are badly conditioned.
            None => matches!(model, BuiltinModel::Heaviside(_)),
            Some("true") | Some("1") => true,
            Some("false") | Some("0") => false,
            Some(other) => {
                return Err(Error::Config(format!(
                    "invalid value `{other}` for `feature.standardize`"
                )))
            }
        };
        Ok(Self {
            model,
            engine,
            features,
            standardize,
            steps,
            seed: cfg.get_parsed("experiment.seed")?.unwrap_or(0),
            seeds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::HeavisideParams;

    #[test]
    fn defaults() {
        let s = Settings::from_config(&KeyValueConfig::default()).unwrap();
        assert_eq!(s.model.name(), "noise_magnitude");
        assert_eq!(
            s.engine,
            ExpectationEngine::MonteCarlo {
                samples: 10_000,
                seed: 0
            }
        );
        assert_eq!(
            s.features,
            vec![FeatureSpec::Monomial(1), FeatureSpec::Monomial(2)]
        );
        assert_eq!(s.steps, 1000);
        assert!(!s.standardize);
    }

    #[test]
    fn heaviside_standardizes_by_default() {
        let cfg = KeyValueConfig::parse("model = heaviside").unwrap();
        let s = Settings::from_config(&cfg).unwrap();
        assert!(s.standardize);
        assert_eq!(
            s.features,
            vec![FeatureSpec::Monomial(1), FeatureSpec::Monomial(3)]
        );
        let cfg = KeyValueConfig::parse("model = heaviside\nfeature.standardize = false").unwrap();
        assert!(!Settings::from_config(&cfg).unwrap().standardize);
    }

    #[test]
    fn full_file() {
        let text = "\
# heaviside run
model = heaviside
model.step_height = 20   # smaller step
engine.kind = sigma_point
engine.kappa = 1.5
feature.kind = monomial
feature.standardize = true
experiment.orders = 3, 2
experiment.steps = 50
";
        let s = Settings::from_config(&KeyValueConfig::parse(text).unwrap()).unwrap();
        assert_eq!(
            s.model,
            BuiltinModel::Heaviside(HeavisideParams {
                step_height: 20.0,
                ..Default::default()
            })
        );
        assert_eq!(s.engine, ExpectationEngine::SigmaPoint { kappa: 1.5 });
        assert_eq!(
            s.features,
            vec![
                FeatureSpec::Monomial(1),
                FeatureSpec::Monomial(3),
                FeatureSpec::Monomial(2)
            ]
        );
        assert!(s.standardize);
        assert_eq!(s.steps, 50);
    }

    #[test]
    fn named_feature() {
        let cfg = KeyValueConfig::parse("feature.kind = abs").unwrap();
        let s = Settings::from_config(&cfg).unwrap();
        assert_eq!(
            s.features,
            vec![FeatureSpec::Monomial(1), FeatureSpec::Named("abs".into())]
        );
        assert_eq!(s.features[1].label(), "abs");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(KeyValueConfig::parse("engine.kindd = x").is_err());
        assert!(KeyValueConfig::parse("model").is_err());
        assert!(KeyValueConfig::parse("model = a\nmodel = b").is_err());
        let cfg = KeyValueConfig::parse("engine.samples = many").unwrap();
        assert!(Settings::from_config(&cfg).is_err());
        let cfg = KeyValueConfig::parse("model.step_height = 3").unwrap();
        assert!(Settings::from_config(&cfg).is_err());
        let cfg = KeyValueConfig::parse("feature.kind = wavelets").unwrap();
        assert!(Settings::from_config(&cfg).is_err());
        assert!(parse_orders("1,0").is_err());
        assert_eq!(parse_orders("1, 2,3").unwrap(), vec![1, 2, 3]);
    }
}
