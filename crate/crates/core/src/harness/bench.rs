//! Analytic benchmark objectives for the optimizers.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::constraints::{LatentSet, Norm};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::median;
use crate::objective::{Domain, FunctionObjective, Objective};
use crate::record::Budgets;
use crate::rng::derive_seed;

use super::attack::run_optimizer;
use super::config::OptimizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchFunction {
    Sphere,
    Rastrigin,
    Rosenbrock,
}

impl BenchFunction {
    pub fn value(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self {
            BenchFunction::Sphere => x.dot(&x),
            BenchFunction::Rastrigin => {
                let tau = std::f64::consts::TAU;
                10.0 * x.len() as f64 + x.iter().map(|v| v * v - 10.0 * (tau * v).cos()).sum::<f64>()
            }
            BenchFunction::Rosenbrock => x
                .windows(2)
                .into_iter()
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum(),
        }
    }

    pub fn minimizer(&self, dim: usize) -> Array1<f64> {
        match self {
            BenchFunction::Sphere | BenchFunction::Rastrigin => Array1::zeros(dim),
            BenchFunction::Rosenbrock => Array1::ones(dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub function: BenchFunction,
    pub dim: usize,
    pub optimizer: OptimizerSpec,
    pub queries: u64,
    /// The search space is the ℓ∞ ball of this radius around the origin.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// The function is evaluated at `x − offset·1`, so its minimizer moves
    /// away from the neutral starting point.
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// A run succeeds once a query goes below this value.
    #[serde(default = "default_target")]
    pub target: f64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_radius() -> f64 {
    5.12
}

fn default_offset() -> f64 {
    1.0
}

fn default_target() -> f64 {
    1e-3
}

fn default_repeats() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub seed: u64,
    pub best_value: f64,
    pub distance_to_minimizer: f64,
    pub queries_used: u64,
    pub queries_to_target: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub runs: Vec<BenchRun>,
    pub median_best_value: f64,
    pub hit_rate: f64,
}

/// Runs `repeats` independent optimizations; repeat `r` uses seed
/// `derive_seed(seed, r)`.
pub fn run_bench(config: &BenchConfig, exec: Execution) -> Result<BenchReport> {
    config.optimizer.validate()?;
    if config.dim == 0 || config.repeats == 0 || config.queries == 0 {
        return Err(Error::InvalidConfig("dimension, repeats and queries must be positive".into()));
    }
    if config.offset.abs() >= config.radius {
        return Err(Error::InvalidConfig("the shifted minimizer must lie inside the search box".into()));
    }
    let function = config.function;
    let (offset, target) = (config.offset, config.target);
    let domain = Domain::new(LatentSet::Ball { norm: Norm::Linf, radius: config.radius }, config.dim);
    let optimum = function.minimizer(config.dim) + offset;
    let runs = exec.map_range(config.repeats, |r| {
        let seed = derive_seed(config.seed, r as u64);
        let f = move |x: ArrayView1<'_, f64>| function.value((&x - offset).view()) - target;
        let mut objective = FunctionObjective::new(config.dim, config.queries, f);
        let record = run_optimizer(&config.optimizer, &mut objective, &domain, Budgets::queries(config.queries), seed)?;
        let best = Array1::from(record.best_point.clone());
        Ok(BenchRun {
            seed,
            best_value: record.best_value + target,
            distance_to_minimizer: (&best - &optimum).mapv(|v| v * v).sum().sqrt(),
            queries_used: objective.ledger().used(),
            queries_to_target: record.queries_to_success,
        })
    });
    let runs: Vec<BenchRun> = runs.into_iter().collect::<Result<_>>()?;
    let bests: Vec<f64> = runs.iter().map(|r| r.best_value).collect();
    let hits = runs.iter().filter(|r| r.queries_to_target.is_some()).count();
    Ok(BenchReport {
        config: *config,
        median_best_value: median(&bests).unwrap_or(f64::NAN),
        hit_rate: hits as f64 / runs.len() as f64,
        runs,
    })
}
