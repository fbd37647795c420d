//! Plain-text experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Unknown keys are
//! errors so typos do not silently fall back to defaults. Lists are
//! comma-separated.
//!
//! ```text
//! population = synthetic
//! sigma = 0.1
//! r2 = 0.75
//! methods = SRS, Ratio, AS
//! replications = 200
//! ```

use std::path::Path;

use active_sampling::parallel::Execution;
use active_sampling::{CharacteristicKind, FallbackKind, ModelKind, Population, VarianceMethod};

use crate::application::{generate_application_grid, ApplicationSpec};
use crate::error::HarnessError;
use crate::experiment::{ExperimentSpec, Method, PopulationInfo};
use crate::synthetic::{generate_synthetic, Scenario, SyntheticSpec};

/// Replications used when `full = true`.
pub const FULL_REPLICATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub enum PopulationSource {
    Synthetic(SyntheticSpec),
    Application(ApplicationSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub population: PopulationSource,
    pub experiment: ExperimentSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            population: PopulationSource::Synthetic(SyntheticSpec::new(0.1, 0.75, Scenario::StrictlyPositive, 1)),
            experiment: ExperimentSpec::new(
                vec![Method::Srs, Method::Ratio, Method::ControlVariate, Method::As],
                CharacteristicKind::LinearMean,
            ),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_list<T, F>(value: &str, f: F) -> Result<Vec<T>, HarnessError>
where
    F: Fn(&str) -> Result<T, HarnessError>,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(HarnessError::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

pub fn parse_characteristic(value: &str) -> Result<CharacteristicKind, HarnessError> {
    match value.to_ascii_lowercase().as_str() {
        "total" => Ok(CharacteristicKind::LinearTotal),
        "linear" | "mean" => Ok(CharacteristicKind::LinearMean),
        "hajek" => Ok(CharacteristicKind::HajekMean),
        "ratio" => Ok(CharacteristicKind::RatioOfWeightedTotals),
        other => Err(HarnessError::Config(format!("unknown characteristic '{other}'"))),
    }
}

pub fn parse_model(value: &str) -> Result<ModelKind, HarnessError> {
    match value.to_ascii_lowercase().as_str() {
        "linear" | "ols" => Ok(ModelKind::LinearLS),
        "knn" => Ok(ModelKind::KNearest),
        "kernel" | "krr" => Ok(ModelKind::KernelRidge),
        other => Err(HarnessError::Config(format!("unknown surrogate '{other}'"))),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), HarnessError> {
        let (key, value) =
            pair.split_once('=').ok_or_else(|| HarnessError::Config(format!("override '{pair}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let exp = &mut self.experiment;
        match key {
            "population" => {
                self.population = match value {
                    "synthetic" => PopulationSource::Synthetic(SyntheticSpec::new(0.1, 0.75, Scenario::StrictlyPositive, 1)),
                    "application" => PopulationSource::Application(ApplicationSpec::default()),
                    other => return Err(HarnessError::Config(format!("unknown population '{other}'"))),
                }
            }
            "sigma" | "r2" | "scenario" | "population_size" | "data_seed" => {
                let PopulationSource::Synthetic(s) = &mut self.population else {
                    return Err(HarnessError::Config(format!("{key} applies only to synthetic populations")));
                };
                match key {
                    "sigma" => s.bandwidth = parse_num(key, value)?,
                    "r2" => s.target_r2 = parse_num(key, value)?,
                    "scenario" => s.scenario = value.parse()?,
                    "population_size" => s.n = parse_num(key, value)?,
                    _ => s.seed = parse_num(key, value)?,
                }
            }
            "methods" => exp.methods = parse_list(value, str::parse)?,
            "characteristic" => exp.characteristic = parse_characteristic(value)?,
            "batch_size" => exp.batch_size = parse_num(key, value)?,
            "n_max" => exp.n_max = parse_num(key, value)?,
            "checkpoints" => {
                exp.checkpoints = if value == "all" { None } else { Some(parse_list(value, |v| parse_num(key, v))?) }
            }
            "replications" => exp.replications = parse_num(key, value)?,
            "full" => {
                if parse_bool(key, value)? {
                    exp.replications = FULL_REPLICATIONS;
                }
            }
            "surrogate" => exp.surrogate.kind = parse_model(value)?,
            "refit_every" => exp.surrogate.refit_every = parse_num(key, value)?,
            "knn_k" => exp.surrogate.config.knn_k = Some(parse_num(key, value)?),
            "folds" => exp.surrogate.config.folds = parse_num(key, value)?,
            "variance_methods" => {
                let replicates = exp
                    .variance_methods
                    .iter()
                    .find_map(|v| match v {
                        VarianceMethod::Bootstrap { replicates } => Some(*replicates),
                        _ => None,
                    })
                    .unwrap_or(1000);
                exp.variance_methods = parse_list(value, |v| {
                    VarianceMethod::parse(v, replicates)
                        .ok_or_else(|| HarnessError::Config(format!("unknown variance method '{v}'")))
                })?;
            }
            "bootstrap_replicates" => {
                let b: usize = parse_num(key, value)?;
                for v in &mut exp.variance_methods {
                    if let VarianceMethod::Bootstrap { replicates } = v {
                        *replicates = b;
                    }
                }
            }
            "fallback" => {
                exp.fallback = match value {
                    "uniform" => Some(FallbackKind::Uniform),
                    "density" => Some(FallbackKind::Density),
                    "auto" => None,
                    other => return Err(HarnessError::Config(format!("unknown fallback '{other}'"))),
                }
            }
            "floor_epsilon" => exp.floor_epsilon = parse_num(key, value)?,
            "alpha" => exp.alpha = parse_num(key, value)?,
            "seed" => exp.seed = parse_num(key, value)?,
            "execution" => {
                exp.execution = match value {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    other => return Err(HarnessError::Config(format!("unknown execution mode '{other}'"))),
                }
            }
            "aux_column" => exp.aux_column = parse_num(key, value)?,
            "severity_columns" => exp.severity_columns = parse_list(value, |v| parse_num(key, v))?,
            "leverage_columns" => exp.leverage_columns = Some(parse_list(value, |v| parse_num(key, v))?),
            other => return Err(HarnessError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Builds the population bound to the experiment's characteristic.
    pub fn build_population(&self) -> Result<(Population, PopulationInfo), HarnessError> {
        match &self.population {
            PopulationSource::Synthetic(spec) => {
                let data = generate_synthetic(spec)?;
                let info = PopulationInfo {
                    scenario: spec.scenario.name().to_string(),
                    sigma: Some(spec.bandwidth),
                    r2: Some(spec.target_r2),
                };
                Ok((data.population(self.experiment.characteristic)?, info))
            }
            PopulationSource::Application(spec) => {
                if self.experiment.characteristic != CharacteristicKind::RatioOfWeightedTotals {
                    return Err(HarnessError::Config("the application grid needs characteristic = ratio".into()));
                }
                let pop = generate_application_grid(spec)?;
                Ok((pop, PopulationInfo { scenario: "application".into(), sigma: None, r2: None }))
            }
        }
    }
}
