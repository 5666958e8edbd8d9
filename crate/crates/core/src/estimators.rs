//! Consensus hopping (CH) and Gaussian NES as single-point schemes sharing
//! one loop: antithetic samples, a gradient estimate, ℓ2 normalization,
//! momentum, a projected step and one check query per iteration.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::mc_chunks;
use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;
use crate::numerics::{log_sum_exp, normalize_l2};
use crate::objective::{Domain, Objective};
use crate::record::{Budgets, Incumbent, RunRecord};
use crate::rng::{derive_seed, rng_from_seed};

/// `count` standard Gaussian rows in antithetic pairs `z, −z`; the first half
/// holds the draws and the second half their negations. An odd count leaves
/// one unpaired draw at the end.
pub(crate) fn antithetic_block<R: Rng + ?Sized>(count: usize, d: usize, rng: &mut R) -> Array2<f64> {
    let half = count / 2;
    let mut out = Array2::zeros((count, d));
    for i in 0..half {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            out[[i, j]] = z;
            out[[half + i, j]] = -z;
        }
    }
    if count % 2 == 1 {
        out.row_mut(count - 1)
            .mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
    }
    out
}

/// `n` antithetic Gaussian samples in `R^d`: rows `n/2 + i = −row i`.
pub fn antithetic_samples<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Array2<f64>> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::InvalidConfig(format!(
            "antithetic sampling needs a positive even sample count, got {n}"
        )));
    }
    Ok(antithetic_block(n, d, rng))
}

/// `Σ w_n z_n`, accumulated over the pairs `(n, n + N/2)` so that antithetic
/// rows with equal weights cancel exactly.
pub(crate) fn paired_weighted_sum(w: ArrayView1<'_, f64>, z: ArrayView2<'_, f64>) -> Array1<f64> {
    let n = z.nrows();
    let half = n / 2;
    let mut acc = Array1::zeros(z.ncols());
    for i in 0..half {
        let (a, b) = (z.row(i), z.row(half + i));
        for (j, out) in acc.iter_mut().enumerate() {
            *out += w[i] * a[j] + w[half + i] * b[j];
        }
    }
    if n % 2 == 1 {
        acc.scaled_add(w[n - 1], &z.row(n - 1));
    }
    acc
}

/// `(1/N) Σ f_n z_n`: an ascent direction for `f`.
pub fn nes_gradient(values: &[f64], samples: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    ensure_dim(samples.nrows(), values.len())?;
    if values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(paired_weighted_sum(ArrayView1::from(values), samples) / values.len() as f64)
}

/// `softmax(−α f)`-weighted mean of the samples: a descent displacement for `f`.
pub fn ch_gradient(values: &[f64], samples: ArrayView2<'_, f64>, alpha: f64) -> Result<Array1<f64>> {
    ensure_dim(samples.nrows(), values.len())?;
    if values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let lse = log_sum_exp(values.iter().map(|&v| -alpha * v));
    let w = Array1::from_iter(values.iter().map(|&v| (-alpha * v - lse).exp()));
    Ok(paired_weighted_sum(w.view(), samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    Nes,
    Ch {
        #[serde(default = "default_ch_alpha")]
        alpha: f64,
    },
}

fn default_ch_alpha() -> f64 {
    10.0
}

impl EstimatorKind {
    pub fn ch() -> Self {
        EstimatorKind::Ch { alpha: default_ch_alpha() }
    }

    /// Ascent-direction estimate for the minimized objective.
    pub fn ascent(&self, values: &[f64], samples: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match *self {
            EstimatorKind::Nes => nes_gradient(values, samples),
            EstimatorKind::Ch { alpha } => Ok(-ch_gradient(values, samples, alpha)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    /// Multiply η by `factor` once the best check value has not improved for
    /// `patience` iterations, never going below `η₀ · floor`.
    PlateauDecay { factor: f64, patience: usize, floor: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::PlateauDecay {
            factor: 0.5,
            patience: 20,
            floor: 1.0 / 64.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChNesConfig {
    pub sigma: f64,
    pub eta: f64,
    pub samples: usize,
    pub momentum: f64,
    pub schedule: StepSchedule,
}

impl Default for ChNesConfig {
    fn default() -> Self {
        ChNesConfig {
            sigma: 0.1,
            eta: 0.05,
            samples: 20,
            momentum: 0.9,
            schedule: StepSchedule::default(),
        }
    }
}

impl ChNesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0 && self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidConfig("sigma and eta must be positive".into()));
        }
        if self.samples == 0 || self.samples % 2 == 1 {
            return Err(Error::InvalidConfig(format!(
                "sample count must be positive and even, got {}",
                self.samples
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if let StepSchedule::PlateauDecay { factor, floor, .. } = self.schedule {
            if !(factor > 0.0 && factor <= 1.0 && floor > 0.0 && floor <= 1.0) {
                return Err(Error::InvalidConfig("decay factor and floor must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

struct StepSize {
    eta: f64,
    min: f64,
    schedule: StepSchedule,
    best: f64,
    stale: usize,
}

impl StepSize {
    fn new(eta: f64, schedule: StepSchedule) -> Self {
        let min = match schedule {
            StepSchedule::Constant => eta,
            StepSchedule::PlateauDecay { floor, .. } => eta * floor,
        };
        StepSize { eta, min, schedule, best: f64::INFINITY, stale: 0 }
    }

    fn observe(&mut self, value: f64) {
        let StepSchedule::PlateauDecay { factor, patience, .. } = self.schedule else {
            return;
        };
        if value < self.best {
            self.best = value;
            self.stale = 0;
            return;
        }
        self.stale += 1;
        if self.stale >= patience {
            self.eta = (self.eta * factor).max(self.min);
            self.stale = 0;
        }
    }
}

/// Runs CH or NES from the neutral point of the domain. Each iteration costs
/// `N + 1` queries; the loop stops once a query was adversarial (after that
/// iteration's check query), when fewer than `N + 1` queries remain, or at
/// the iteration cap.
pub fn run_ch_nes<O: Objective + ?Sized>(
    objective: &mut O,
    domain: &Domain,
    config: &ChNesConfig,
    kind: EstimatorKind,
    budgets: Budgets,
    seed: u64,
) -> Result<RunRecord> {
    config.validate()?;
    if let EstimatorKind::Ch { alpha } = kind {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidConfig("CH alpha must be positive".into()));
        }
    }
    ensure_dim(domain.dim, objective.dim())?;
    let mut rng = rng_from_seed(seed);
    let n = config.samples;
    let query_cap = budgets.queries.min(objective.ledger().budget());
    let mut x = domain.set.neutral(domain.dim);
    let mut record = RunRecord::empty(x.to_vec());
    let mut best = Incumbent::new(x.to_vec());
    let mut momentum = Array1::zeros(domain.dim);
    let mut step = StepSize::new(config.eta, config.schedule);

    for k in 0..budgets.max_iterations {
        if query_cap - objective.ledger().used() < n as u64 + 1 {
            break;
        }
        let z = antithetic_samples(n, domain.dim, &mut rng)?;
        let points = &z * config.sigma + x.view().insert_axis(Axis(0));
        let values = objective.evaluate(points.view())?;
        for (row, &v) in points.rows().into_iter().zip(&values) {
            best.offer(row, v);
        }
        let g = normalize_l2(&kind.ascent(&values, z.view())?);
        momentum = momentum * config.momentum + g;
        x.scaled_add(-step.eta, &momentum);
        domain.set.project(x.view_mut());

        let check = objective.evaluate(x.view().insert_axis(Axis(0)))?;
        best.offer(x.view(), check[0]);
        step.observe(check[0]);
        record.trajectory.push(x.to_vec());
        record.iterations = k + 1;
        objective.mark_iteration(k);
        if objective.succeeded() {
            break;
        }
    }

    let ledger = objective.ledger();
    record.success = ledger.first_success().is_some();
    record.queries_used = ledger.used();
    record.queries_to_success = ledger.first_success();
    record.best_point = best.point;
    record.best_value = best.value;
    Ok(record)
}

/// Monte-Carlo estimate of `ησ · E[f(μ+σξ) ξ]` from `m` antithetically paired
/// standard Gaussian samples. With equal seeds it draws the same samples as
/// [`crate::ensemble::ch_expected_step`].
pub fn nes_expected_step<F>(
    f: F,
    mu: ArrayView1<'_, f64>,
    sigma: f64,
    eta: f64,
    m: usize,
    seed: u64,
    exec: Execution,
) -> Array1<f64>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Sync + Send,
{
    let d = mu.len();
    let m = m.max(1);
    let parts = exec.map_slice(&mc_chunks(m), |&(k, count)| {
        let mut rng = rng_from_seed(derive_seed(seed, k as u64));
        let xi = antithetic_block(count, d, &mut rng);
        let vals = Array1::from_iter(xi.rows().into_iter().map(|z| f((&mu + &(sigma * &z)).view())));
        paired_weighted_sum(vals.view(), xi.view())
    });
    let mut sum = Array1::zeros(d);
    for p in parts {
        sum += &p;
    }
    sum * (eta * sigma / m as f64)
}
