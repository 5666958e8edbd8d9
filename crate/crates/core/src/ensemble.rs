//! Particle ensembles and consensus-based optimization (CBO).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::estimators::{antithetic_block, paired_weighted_sum};
use crate::exec::Execution;
use crate::noise::NoiseKind;
use crate::numerics::log_sum_exp;
use crate::objective::{Domain, Objective};
use crate::record::{Budgets, Incumbent, RunRecord};
use crate::rng::{derive_seed, rng_from_seed, RunRng};

/// `N×d` particle positions with cached objective values.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: Array2<f64>,
    /// Last value of each particle; `None` until its first evaluation.
    values: Vec<Option<f64>>,
    /// Whether the cached value belongs to the current position.
    fresh: Vec<bool>,
}

impl Ensemble {
    pub fn new(particles: Array2<f64>) -> Result<Self> {
        if particles.nrows() == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if particles.ncols() == 0 {
            return Err(Error::InvalidInput("particles need at least one coordinate".into()));
        }
        if particles.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("particles must be finite".into()));
        }
        let n = particles.nrows();
        Ok(Ensemble {
            particles,
            values: vec![None; n],
            fresh: vec![false; n],
        })
    }

    /// `n` particles drawn uniformly from the domain's feasible set.
    pub fn sample<R: Rng + ?Sized>(n: usize, domain: &Domain, rng: &mut R) -> Result<Self> {
        let mut particles = Array2::zeros((n, domain.dim));
        for mut row in particles.rows_mut() {
            row.assign(&domain.set.sample_uniform(domain.dim, rng));
        }
        Self::new(particles)
    }

    pub fn len(&self) -> usize {
        self.particles.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.particles.ncols()
    }

    pub fn particles(&self) -> &Array2<f64> {
        &self.particles
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn is_fresh(&self, index: usize) -> bool {
        self.fresh[index]
    }

    pub fn set_value(&mut self, index: usize, value: f64) {
        self.values[index] = Some(value);
        self.fresh[index] = true;
    }

    /// Positions and cached values of every particle evaluated at least
    /// once, stale values included.
    pub fn evaluated(&self) -> (Array2<f64>, Array1<f64>) {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.values[i].is_some()).collect();
        let values = idx.iter().filter_map(|&i| self.values[i]).collect();
        (self.particles.select(Axis(0), &idx), values)
    }

    /// Replaces all positions; every cached value becomes stale.
    pub fn set_particles(&mut self, particles: Array2<f64>) -> Result<()> {
        ensure_dim(self.len(), particles.nrows())?;
        ensure_dim(self.dim(), particles.ncols())?;
        self.particles = particles;
        self.fresh.fill(false);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusWeights {
    pub weights: Array1<f64>,
    pub alpha: f64,
}

impl ConsensusWeights {
    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(self.weights.view())
    }
}

/// Weighted mean of the particles under `softmax(-α·values)`, computed in
/// log space.
pub fn compute_consensus(
    particles: ArrayView2<'_, f64>,
    values: ArrayView1<'_, f64>,
    alpha: f64,
) -> Result<(Array1<f64>, ConsensusWeights)> {
    if particles.nrows() == 0 {
        return Err(Error::EmptyEnsemble);
    }
    ensure_dim(particles.nrows(), values.len())?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("objective values must be finite".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    // Shifting by the minimum is the LogSumExp trick: the largest term is 1.
    let min = values.fold(f64::INFINITY, |m, &v| m.min(v));
    let mut weights = values.mapv(|v| (-alpha * (v - min)).exp());
    weights /= weights.sum();
    let point = weights.dot(&particles);
    Ok((point, ConsensusWeights { weights, alpha }))
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: ArrayView1<'_, f64>) -> f64 {
    let s = weights.sum();
    s * s / weights.dot(&weights)
}

/// Effective sample size of the consensus weights at inverse temperature `alpha`.
pub fn ess_at(values: ArrayView1<'_, f64>, alpha: f64) -> f64 {
    let min = values.fold(f64::INFINITY, |m, &v| m.min(v));
    // Shifting by the minimum keeps the largest weight at exactly 1.
    let w = values.mapv(|v| (-alpha * (v - min)).exp());
    effective_sample_size(w.view())
}

pub const DEFAULT_ALPHA_BOUNDS: (f64, f64) = (1e-4, 1e8);
const ALPHA_BISECTION_STEPS: usize = 60;

/// Chooses α so that the effective sample size equals `eta · N`, by bisection
/// on `log α` within `bounds`. Returns the nearer bound when the target is
/// out of reach; all-equal values give the upper bound.
pub fn schedule_alpha(values: ArrayView1<'_, f64>, eta: f64, bounds: (f64, f64)) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("objective values must be finite".into()));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidConfig(format!("ESS fraction must lie in (0, 1], got {eta}")));
    }
    let (lo, hi) = bounds;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::InvalidConfig(format!("bad alpha bounds {bounds:?}")));
    }
    let target = eta * values.len() as f64;
    if target >= ess_at(values, lo) {
        return Ok(lo);
    }
    if target <= ess_at(values, hi) {
        return Ok(hi);
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..ALPHA_BISECTION_STEPS {
        let mid = 0.5 * (a + b);
        if ess_at(values, mid.exp()) > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// Draws index batches so that each epoch of `⌈N/b⌉` calls visits every
/// particle once. A short final chunk is topped up from the next permutation.
#[derive(Debug, Clone)]
pub struct MiniBatcher {
    n: usize,
    b: usize,
    queue: Vec<usize>,
}

impl MiniBatcher {
    pub fn new(n: usize, b: usize) -> Result<Self> {
        if b == 0 || b > n {
            return Err(Error::InvalidConfig(format!("batch size {b} must lie in 1..={n}")));
        }
        Ok(MiniBatcher { n, b, queue: Vec::new() })
    }

    fn permutation<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut p: Vec<usize> = (0..self.n).collect();
        p.shuffle(rng);
        p
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.queue.is_empty() {
            self.queue = self.permutation(rng);
        }
        if self.queue.len() >= self.b {
            return self.queue.drain(..self.b).collect();
        }
        let mut batch: Vec<usize> = std::mem::take(&mut self.queue);
        let mut fresh = self.permutation(rng);
        let need = self.b - batch.len();
        let mut taken = 0;
        fresh.retain(|i| {
            if taken < need && !batch.contains(i) {
                batch.push(*i);
                taken += 1;
                false
            } else {
                true
            }
        });
        self.queue = fresh;
        batch
    }
}

/// Entry `(n, j)` is `√τ · |drift[n, j]| · ξ`.
pub fn anisotropic_noise<R: Rng + ?Sized>(drift: ArrayView2<'_, f64>, tau: f64, rng: &mut R) -> Array2<f64> {
    let s = tau.sqrt();
    drift.mapv(|v| {
        let xi: f64 = rng.sample(StandardNormal);
        s * v.abs() * xi
    })
}

/// Row `n` is `√τ · ‖drift[n]‖ · ξ` with `ξ` standard Gaussian in `R^d`.
pub fn isotropic_noise<R: Rng + ?Sized>(drift: ArrayView2<'_, f64>, tau: f64, rng: &mut R) -> Array2<f64> {
    let s = tau.sqrt();
    let mut out = Array2::zeros(drift.raw_dim());
    for (mut row, d) in out.rows_mut().into_iter().zip(drift.rows()) {
        let scale = s * d.dot(&d).sqrt();
        row.mapv_inplace(|_| scale * rng.sample::<f64, _>(StandardNormal));
    }
    out
}

/// Source of the stochastic term of the CBO step.
pub trait NoiseModel: Send {
    /// Returns the `N×d` noise matrix for the drift `x - c`. `progress` is the
    /// consumed fraction of the query budget.
    fn sample(&mut self, drift: ArrayView2<'_, f64>, tau: f64, progress: f64, rng: &mut RunRng) -> Array2<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianNoise {
    pub isotropic: bool,
}

impl NoiseModel for GaussianNoise {
    fn sample(&mut self, drift: ArrayView2<'_, f64>, tau: f64, _progress: f64, rng: &mut RunRng) -> Array2<f64> {
        if self.isotropic {
            isotropic_noise(drift, tau, rng)
        } else {
            anisotropic_noise(drift, tau, rng)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaMode {
    Fixed { alpha: f64 },
    /// Target effective sample size `eta · b` on each batch.
    Ess {
        eta: f64,
        #[serde(default = "default_alpha_min")]
        alpha_min: f64,
        #[serde(default = "default_alpha_max")]
        alpha_max: f64,
    },
}

fn default_alpha_min() -> f64 {
    DEFAULT_ALPHA_BOUNDS.0
}

fn default_alpha_max() -> f64 {
    DEFAULT_ALPHA_BOUNDS.1
}

impl AlphaMode {
    pub fn ess(eta: f64) -> Self {
        AlphaMode::Ess {
            eta,
            alpha_min: DEFAULT_ALPHA_BOUNDS.0,
            alpha_max: DEFAULT_ALPHA_BOUNDS.1,
        }
    }

    pub fn alpha(&self, values: ArrayView1<'_, f64>) -> Result<f64> {
        match *self {
            AlphaMode::Fixed { alpha } => Ok(alpha),
            AlphaMode::Ess { eta, alpha_min, alpha_max } => schedule_alpha(values, eta, (alpha_min, alpha_max)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CboConfig {
    pub tau: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: AlphaMode,
    pub particles: usize,
    pub batch_size: usize,
    pub noise: NoiseKind,
}

impl Default for CboConfig {
    fn default() -> Self {
        CboConfig {
            tau: 1.3,
            lambda: 1.0,
            sigma: 1.0,
            alpha: AlphaMode::ess(0.1),
            particles: 50,
            batch_size: 10,
            noise: NoiseKind::Anisotropic,
        }
    }
}

impl CboConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        if !finite_nonneg(self.lambda) || !finite_nonneg(self.sigma) {
            return Err(Error::InvalidConfig("lambda and sigma must be non-negative".into()));
        }
        if let AlphaMode::Fixed { alpha } = self.alpha {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::InvalidConfig("alpha must be positive".into()));
            }
        }
        if self.particles == 0 {
            return Err(Error::EmptyEnsemble);
        }
        MiniBatcher::new(self.particles, self.batch_size).map(|_| ())
    }
}

/// One Euler–Maruyama step `x ← x − τλ(x − c) + σ·noise`, each row projected
/// onto the domain's feasible set. `noise` must already carry its `√τ` factor.
pub fn cbo_step(
    particles: &mut Array2<f64>,
    consensus: ArrayView1<'_, f64>,
    noise: ArrayView2<'_, f64>,
    config: &CboConfig,
    domain: &Domain,
) {
    let drift_scale = config.tau * config.lambda;
    Zip::from(particles.rows_mut()).and(noise.rows()).for_each(|mut x, xi| {
        Zip::from(&mut x).and(consensus).and(xi).for_each(|x, &c, &n| {
            // τλ = 1 is the infinite-drift limit: land on c exactly.
            let moved = if drift_scale == 1.0 { c } else { *x - drift_scale * (*x - c) };
            *x = moved + config.sigma * n;
        });
        domain.set.project(x);
    });
}

/// Runs CBO until the objective reports success, the query budget is spent or
/// the iteration cap is reached.
///
/// Each iteration evaluates one mini-batch, computes the consensus point over
/// every particle evaluated so far from its cached value and moves every
/// particle.
pub fn run_cbo<O: Objective + ?Sized>(
    objective: &mut O,
    domain: &Domain,
    config: &CboConfig,
    budgets: Budgets,
    seed: u64,
) -> Result<RunRecord> {
    config.validate()?;
    ensure_dim(domain.dim, objective.dim())?;
    let mut rng = rng_from_seed(seed);
    let mut record = RunRecord::empty(domain.set.neutral(domain.dim).to_vec());
    let query_cap = budgets.queries.min(objective.ledger().budget());
    if query_cap == 0 || budgets.max_iterations == 0 {
        return Ok(record);
    }
    let mut ensemble = Ensemble::sample(config.particles, domain, &mut rng)?;
    let mut batcher = MiniBatcher::new(config.particles, config.batch_size)?;
    let mut noise = config.noise.build(config.particles, domain)?;
    let mut best = Incumbent::new(record.best_point.clone());

    for k in 0..budgets.max_iterations {
        if objective.ledger().used() >= query_cap {
            break;
        }
        let idx = batcher.next_batch(&mut rng);
        let room = (query_cap - objective.ledger().used()).min(idx.len() as u64) as usize;
        let batch = ensemble.particles().select(Axis(0), &idx[..room]);
        let values = objective.evaluate(batch.view())?;
        for (j, &v) in values.iter().enumerate() {
            ensemble.set_value(idx[j], v);
            best.offer(batch.row(j), v);
        }
        record.iterations = k + 1;
        if objective.succeeded() || values.len() < idx.len() {
            break;
        }
        let (points, cached) = ensemble.evaluated();
        let alpha = config.alpha.alpha(cached.view())?;
        let (c, _) = compute_consensus(points.view(), cached.view(), alpha)?;
        let drift = ensemble.particles() - &c;
        let progress = objective.ledger().used() as f64 / query_cap as f64;
        let xi = noise.sample(drift.view(), config.tau, progress, &mut rng);
        let mut moved = ensemble.particles().clone();
        cbo_step(&mut moved, c.view(), xi.view(), config, domain);
        ensemble.set_particles(moved)?;
        record.trajectory.push(c.to_vec());
        objective.mark_iteration(k);
    }

    let ledger = objective.ledger();
    record.success = ledger.first_success().is_some();
    record.queries_used = ledger.used();
    record.queries_to_success = ledger.first_success();
    record.best_point = best.point;
    record.best_value = best.value;
    Ok(record)
}

/// Samples per Monte-Carlo chunk in the expected-step estimators. Chunks use
/// independent derived seeds, so results do not depend on the execution mode.
pub(crate) const MC_CHUNK: usize = 8192;

pub(crate) fn mc_chunks(m: usize) -> Vec<(usize, usize)> {
    (0..m.div_ceil(MC_CHUNK))
        .map(|k| (k, MC_CHUNK.min(m - k * MC_CHUNK)))
        .collect()
}

/// Monte-Carlo estimate of `σ̃ · E[exp(−αf(c+σ̃ξ)) ξ] / E[exp(−αf(c+σ̃ξ))]`
/// from `m` antithetically paired standard Gaussian samples.
pub fn ch_expected_step<F>(
    f: F,
    c: ArrayView1<'_, f64>,
    sigma_tilde: f64,
    alpha: f64,
    m: usize,
    seed: u64,
    exec: Execution,
) -> Array1<f64>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Sync + Send,
{
    let d = c.len();
    let parts = exec.map_slice(&mc_chunks(m.max(1)), |&(k, count)| {
        let mut rng = rng_from_seed(derive_seed(seed, k as u64));
        let xi = antithetic_block(count, d, &mut rng);
        let logw: Vec<f64> = xi
            .rows()
            .into_iter()
            .map(|z| -alpha * f((&c + &(sigma_tilde * &z)).view()))
            .collect();
        let lse = log_sum_exp(logw.iter().copied());
        let w = Array1::from_iter(logw.iter().map(|l| (l - lse).exp()));
        (lse, paired_weighted_sum(w.view(), xi.view()))
    });
    let total = log_sum_exp(parts.iter().map(|p| p.0));
    let mut out = Array1::zeros(d);
    for (lse, s) in parts {
        out.scaled_add((lse - total).exp(), &s);
    }
    out * sigma_tilde
}

#[cfg(test)]
mod tests;
