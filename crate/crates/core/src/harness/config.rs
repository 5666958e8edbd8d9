//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::broker::{Classifier, ClassifierSpec};
use crate::constraints::{AttackMode, Budget, LossConvention, LossSpec};
use crate::ensemble::CboConfig;
use crate::error::{Error, Result};
use crate::estimators::{ChNesConfig, EstimatorKind};
use crate::exec::Execution;
use crate::noise::EsConfig;
use crate::numerics::argmax;
use crate::rng::rng_from_seed;
use crate::spaces::{ImageTensor, SpaceKind};

/// Optimizer and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Cbo(CboConfig),
    Ch {
        #[serde(default = "default_ch_alpha")]
        alpha: f64,
        #[serde(flatten)]
        config: ChNesConfig,
    },
    Nes(ChNesConfig),
    OnePlusLambda(EsConfig),
    CauchyOnePlusOne {
        #[serde(default = "default_cauchy_scale")]
        scale: f64,
    },
}

fn default_ch_alpha() -> f64 {
    10.0
}

fn default_cauchy_scale() -> f64 {
    0.05
}

impl OptimizerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerSpec::Cbo(_) => "cbo",
            OptimizerSpec::Ch { .. } => "ch",
            OptimizerSpec::Nes(_) => "nes",
            OptimizerSpec::OnePlusLambda(_) => "one_plus_lambda",
            OptimizerSpec::CauchyOnePlusOne { .. } => "cauchy_one_plus_one",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerSpec::Cbo(c) => c.validate(),
            OptimizerSpec::Ch { alpha, config } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::InvalidConfig("CH alpha must be positive".into()));
                }
                config.validate()
            }
            OptimizerSpec::Nes(c) => c.validate(),
            OptimizerSpec::OnePlusLambda(c) => c.validate(),
            OptimizerSpec::CauchyOnePlusOne { scale } => EsConfig::cauchy(*scale).validate(),
        }
    }

    pub(crate) fn estimator(&self) -> Option<(EstimatorKind, ChNesConfig)> {
        match *self {
            OptimizerSpec::Ch { alpha, config } => Some((EstimatorKind::Ch { alpha }, config)),
            OptimizerSpec::Nes(config) => Some((EstimatorKind::Nes, config)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Untargeted,
    /// Targets come from the dataset; entries without one use `(label + 1) mod K`.
    Targeted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSettings {
    pub mode: LossMode,
    pub shift: f64,
    pub convention: LossConvention,
}

impl Default for LossSettings {
    fn default() -> Self {
        let base = LossSpec::untargeted(0);
        LossSettings {
            mode: LossMode::Untargeted,
            shift: base.shift,
            convention: base.convention,
        }
    }
}

impl LossSettings {
    /// The loss of one sample.
    pub fn spec(&self, sample: &Sample, num_classes: usize) -> Result<LossSpec> {
        let mode = match self.mode {
            LossMode::Untargeted => AttackMode::Untargeted { true_label: sample.label },
            LossMode::Targeted => {
                let target = sample.target.unwrap_or((sample.label + 1) % num_classes);
                if target == sample.label || target >= num_classes {
                    return Err(Error::InvalidConfig(format!(
                        "target {target} is invalid for label {} with {num_classes} classes",
                        sample.label
                    )));
                }
                AttackMode::Targeted { target_label: target }
            }
        };
        Ok(LossSpec {
            mode,
            shift: self.shift,
            convention: self.convention,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub input: PathBuf,
    pub label: usize,
    #[serde(default)]
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Files { entries: Vec<DatasetEntry> },
    /// Uniform random images labeled with the model's own prediction.
    Random { count: usize, shape: [usize; 3], seed: u64 },
}

/// One test point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: ImageTensor,
    pub label: usize,
    pub target: Option<usize>,
}

impl DatasetSpec {
    pub fn len(&self) -> usize {
        match self {
            DatasetSpec::Files { entries } => entries.len(),
            DatasetSpec::Random { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loads the samples. Random datasets are labeled by `classifier`
    /// without charging any query budget.
    pub fn load(&self, base: &Path, classifier: &dyn Classifier) -> Result<Vec<Sample>> {
        match self {
            DatasetSpec::Files { entries } => entries
                .iter()
                .map(|e| {
                    Ok(Sample {
                        input: ImageTensor::read(base.join(&e.input))?,
                        label: e.label,
                        target: e.target,
                    })
                })
                .collect(),
            DatasetSpec::Random { count, shape, seed } => {
                let mut rng = rng_from_seed(*seed);
                let len: usize = shape.iter().product();
                let mut samples = Vec::with_capacity(*count);
                for _ in 0..*count {
                    let values: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
                    let input = ImageTensor::from_flat(*shape, values)?;
                    let logits = classifier.logits_one(&input.to_flat())?;
                    samples.push(Sample {
                        input,
                        label: argmax(&logits),
                        target: None,
                    });
                }
                Ok(samples)
            }
        }
    }
}

/// A complete attack experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub optimizer: OptimizerSpec,
    pub space: SpaceKind,
    pub budget: Budget,
    #[serde(default)]
    pub loss: LossSettings,
    /// Total query budget Q per input.
    pub queries: u64,
    /// Per-restart budgets; when given they must sum to `queries`.
    #[serde(default)]
    pub restarts: Vec<u64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    pub classifier: ClassifierSpec,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default = "default_histogram_bins")]
    pub histogram_bins: usize,
}

fn default_histogram_bins() -> usize {
    40
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        Budget::new(self.budget.norm, self.budget.epsilon)?;
        if self.queries == 0 {
            return Err(Error::InvalidConfig("query budget must be positive".into()));
        }
        if !self.restarts.is_empty() {
            if self.restarts.contains(&0) {
                return Err(Error::InvalidConfig("restart budgets must be positive".into()));
            }
            let total: u64 = self.restarts.iter().sum();
            if total != self.queries {
                return Err(Error::InvalidConfig(format!(
                    "restart budgets sum to {total}, expected {}",
                    self.queries
                )));
            }
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::InvalidConfig("iteration cap must be positive".into()));
        }
        Ok(())
    }

    /// Query budget of each restart.
    pub fn restart_schedule(&self) -> Vec<u64> {
        if self.restarts.is_empty() {
            vec![self.queries]
        } else {
            self.restarts.clone()
        }
    }
}
