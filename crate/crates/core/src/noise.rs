//! Structured noise models for CBO and (1+λ)-type evolution strategies.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraints::LatentSet;
use crate::ensemble::{GaussianNoise, NoiseModel};
use crate::error::{ensure_dim, Error, Result};
use crate::objective::{Domain, Objective};
use crate::record::{Budgets, Incumbent, RunRecord};
use crate::rng::{rng_from_seed, RunRng};
use crate::spaces::dct::Dct2;

/// Noise model selection for CBO.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Anisotropic,
    Isotropic,
    /// Inverse-DCT basis images; needs an image-shaped latent.
    Dct,
    /// Random `±ε` squares; needs an image-shaped latent in an ℓ∞ ball.
    Square,
}

impl NoiseKind {
    pub fn build(self, particles: usize, domain: &Domain) -> Result<Box<dyn NoiseModel>> {
        let shape = || {
            domain.image_shape.ok_or_else(|| {
                Error::InvalidConfig(format!("{self:?} noise needs an image-shaped latent space"))
            })
        };
        Ok(match self {
            NoiseKind::Anisotropic => Box::new(GaussianNoise { isotropic: false }),
            NoiseKind::Isotropic => Box::new(GaussianNoise { isotropic: true }),
            NoiseKind::Dct => Box::new(DctNoise::new(particles, shape()?)),
            NoiseKind::Square => {
                let LatentSet::Ball { radius, .. } = domain.set else {
                    return Err(Error::InvalidConfig("square noise needs a norm-ball latent set".into()));
                };
                Box::new(SquareNoise::new(shape()?, radius))
            }
        })
    }
}

/// Inverse-DCT basis noise. Particle `n` walks through its own permutation
/// of the `d = C·H·W` basis indices; the cursor is shared and advances once
/// per draw. All permutations are redrawn when the cursor wraps.
#[derive(Debug, Clone)]
pub struct DctNoise {
    shape: [usize; 3],
    plan: Dct2,
    particles: usize,
    perms: Vec<Vec<usize>>,
    cursor: usize,
}

impl DctNoise {
    pub fn new(particles: usize, shape: [usize; 3]) -> Self {
        DctNoise {
            shape,
            plan: Dct2::new(shape[1], shape[2]),
            particles,
            perms: Vec::new(),
            cursor: 0,
        }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.perms
    }

    fn dim(&self) -> usize {
        self.shape.iter().product()
    }

    /// Basis index used by each particle in the next draw.
    fn indices<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        let d = self.dim();
        if self.perms.is_empty() || self.cursor == d {
            self.perms = (0..self.particles)
                .map(|_| {
                    let mut p: Vec<usize> = (0..d).collect();
                    p.shuffle(rng);
                    p
                })
                .collect();
            self.cursor = 0;
        }
        let idx = self.perms.iter().map(|p| p[self.cursor]).collect();
        self.cursor += 1;
        idx
    }

    /// Rows `√τ · D⁻¹(b^{I^n_j})`, flattened channel-major.
    pub fn draw<R: Rng + ?Sized>(&mut self, tau: f64, rng: &mut R) -> Array2<f64> {
        let [c, h, w] = self.shape;
        let scale = tau.sqrt();
        let idx = self.indices(rng);
        let mut out = Array2::zeros((self.particles, c * h * w));
        for (n, &k) in idx.iter().enumerate() {
            let (ch, rest) = (k / (h * w), k % (h * w));
            let mut img = out
                .row_mut(n)
                .into_shape_with_order((c, h, w))
                .expect("row is contiguous");
            self.plan
                .basis_image_into(rest / w, rest % w, scale, img.index_axis_mut(Axis(0), ch));
        }
        out
    }
}

impl NoiseModel for DctNoise {
    fn sample(&mut self, drift: ArrayView2<'_, f64>, tau: f64, _progress: f64, rng: &mut RunRng) -> Array2<f64> {
        debug_assert_eq!(drift.nrows(), self.particles);
        self.draw(tau, rng)
    }
}

/// Budget fractions at which the square area halves.
pub const SQUARE_SCHEDULE_STEPS: [f64; 5] = [0.001, 0.005, 0.02, 0.1, 0.5];
/// Fraction of pixels covered by the first squares.
pub const SQUARE_INITIAL_FRACTION: f64 = 0.1;

/// Fraction of pixels a square covers once `progress` of the budget is used.
pub fn square_fraction(progress: f64) -> f64 {
    let halvings = SQUARE_SCHEDULE_STEPS.iter().filter(|&&t| progress >= t).count();
    SQUARE_INITIAL_FRACTION * 0.5f64.powi(halvings as i32)
}

/// Square side `max(1, round(√(p·H·W)))`, at most `min(H, W)`.
pub fn square_side(progress: f64, height: usize, width: usize) -> usize {
    let p = square_fraction(progress);
    let side = (p * (height * width) as f64).sqrt().round() as usize;
    side.clamp(1, height.min(width))
}

/// Random square patches: row `n` is `√τ` times an `h×h` block at a uniform
/// position with one random sign `±ε` per channel, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareNoise {
    shape: [usize; 3],
    epsilon: f64,
}

impl SquareNoise {
    pub fn new(shape: [usize; 3], epsilon: f64) -> Self {
        SquareNoise { shape, epsilon }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rows: usize, tau: f64, progress: f64, rng: &mut R) -> Array2<f64> {
        let [c, h, w] = self.shape;
        let side = square_side(progress, h, w);
        let amp = tau.sqrt() * self.epsilon;
        let mut out = Array2::zeros((rows, c * h * w));
        for mut row in out.rows_mut() {
            let top = rng.random_range(0..=h - side);
            let left = rng.random_range(0..=w - side);
            let mut img = row.view_mut().into_shape_with_order((c, h, w)).expect("row is contiguous");
            for ch in 0..c {
                let v = if rng.random::<bool>() { amp } else { -amp };
                img.slice_mut(s![ch, top..top + side, left..left + side]).fill(v);
            }
        }
        out
    }
}

impl NoiseModel for SquareNoise {
    fn sample(&mut self, drift: ArrayView2<'_, f64>, tau: f64, progress: f64, rng: &mut RunRng) -> Array2<f64> {
        self.draw(drift.nrows(), tau, progress, rng)
    }
}

/// `scale · tan(π(u − ½))`: the inverse CDF of a Cauchy distribution.
pub fn cauchy_from_uniform(u: f64, scale: f64) -> f64 {
    scale * (std::f64::consts::PI * (u - 0.5)).tan()
}

/// `d` i.i.d. Cauchy draws with the given scale.
pub fn cauchy_mutation<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| cauchy_from_uniform(rng.random::<f64>(), scale))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsNoise {
    #[default]
    Gaussian,
    Cauchy,
    /// SimBA-style: `+τ·e_k` for a fresh coordinate axis, then `−τ·e_k` only
    /// if the first did not improve.
    BasisAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsConfig {
    pub tau: f64,
    pub candidates: usize,
    pub noise: EsNoise,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            tau: 0.05,
            candidates: 1,
            noise: EsNoise::Gaussian,
        }
    }
}

impl EsConfig {
    /// The Cauchy (1+1)-ES with a fixed mutation scale.
    pub fn cauchy(scale: f64) -> Self {
        EsConfig {
            tau: scale,
            candidates: 1,
            noise: EsNoise::Cauchy,
        }
    }

    pub fn simba(tau: f64) -> Self {
        EsConfig {
            tau,
            candidates: 1,
            noise: EsNoise::BasisAxis,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig("mutation scale must be positive".into()));
        }
        if self.candidates == 0 {
            return Err(Error::InvalidConfig("need at least one candidate".into()));
        }
        Ok(())
    }
}

/// Produces the non-zero candidate offsets of one ES iteration.
#[derive(Debug, Clone)]
pub struct CandidateSampler {
    config: EsConfig,
    axes: Vec<usize>,
}

impl CandidateSampler {
    pub fn new(config: EsConfig) -> Self {
        CandidateSampler { config, axes: Vec::new() }
    }

    fn offsets<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Array2<f64> {
        let tau = self.config.tau;
        let mut out = Array2::zeros((self.config.candidates, d));
        for mut row in out.rows_mut() {
            match self.config.noise {
                EsNoise::Gaussian => row.mapv_inplace(|_| tau * rng.sample::<f64, _>(StandardNormal)),
                EsNoise::Cauchy => row.assign(&cauchy_mutation(d, tau, rng)),
                EsNoise::BasisAxis => unreachable!("basis candidates are drawn one axis at a time"),
            }
        }
        out
    }

    /// Next coordinate axis; every axis is used once before any repeats.
    fn next_axis<R: Rng + ?Sized>(&mut self, d: usize, rng: &mut R) -> usize {
        if self.axes.is_empty() {
            self.axes = (0..d).collect();
            self.axes.shuffle(rng);
        }
        self.axes.pop().expect("axes were refilled")
    }
}

/// Current ES iterate and its cached objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct EsState {
    pub point: Array1<f64>,
    pub value: f64,
}

/// One `(1+λ)` iteration: the candidate `0` keeps the cached value, every
/// other candidate `s + s̃` (projected onto `set`) costs one query, and the
/// strictly best candidate wins (earlier candidates win ties). Returns the
/// number of queries issued.
pub fn one_plus_lambda_step<O: Objective + ?Sized>(
    objective: &mut O,
    state: &mut EsState,
    sampler: &mut CandidateSampler,
    set: &LatentSet,
    rng: &mut RunRng,
) -> Result<usize> {
    let d = state.point.len();
    ensure_dim(objective.dim(), d)?;
    let project = |offset: Array1<f64>| {
        let mut p = &state.point + &offset;
        set.project(p.view_mut());
        p
    };
    if sampler.config.noise == EsNoise::BasisAxis {
        let axis = sampler.next_axis(d, rng);
        let mut issued = 0;
        for sign in [1.0, -1.0] {
            let mut e = Array1::zeros(d);
            e[axis] = sign * sampler.config.tau;
            let cand = project(e);
            let v = objective.evaluate(cand.view().insert_axis(Axis(0)))?;
            let Some(&v) = v.first() else {
                return Ok(issued);
            };
            issued += 1;
            if v < state.value {
                state.point = cand;
                state.value = v;
                return Ok(issued);
            }
        }
        return Ok(issued);
    }
    let offsets = sampler.offsets(d, rng);
    let mut cands = Array2::zeros(offsets.raw_dim());
    for (mut row, off) in cands.rows_mut().into_iter().zip(offsets.rows()) {
        row.assign(&project(off.to_owned()));
    }
    let values = objective.evaluate(cands.view())?;
    for (i, &v) in values.iter().enumerate() {
        if v < state.value {
            state.point = cands.row(i).to_owned();
            state.value = v;
        }
    }
    Ok(values.len())
}

/// Runs a `(1+λ)`-ES from the neutral point: one query for the start, then
/// [`one_plus_lambda_step`] until success, budget exhaustion or the iteration cap.
pub fn run_one_plus_lambda<O: Objective + ?Sized>(
    objective: &mut O,
    domain: &Domain,
    config: &EsConfig,
    budgets: Budgets,
    seed: u64,
) -> Result<RunRecord> {
    config.validate()?;
    ensure_dim(domain.dim, objective.dim())?;
    let mut rng = rng_from_seed(seed);
    let start = domain.set.neutral(domain.dim);
    let mut record = RunRecord::empty(start.to_vec());
    let query_cap = budgets.queries.min(objective.ledger().budget());
    if query_cap == 0 || budgets.max_iterations == 0 {
        return Ok(record);
    }
    let first = objective.evaluate(start.view().insert_axis(Axis(0)))?;
    let mut state = EsState { point: start, value: first[0] };
    let mut best = Incumbent::new(state.point.to_vec());
    best.offer(state.point.view(), state.value);
    let mut sampler = CandidateSampler::new(*config);

    for k in 0..budgets.max_iterations {
        if objective.succeeded() || objective.ledger().used() >= query_cap {
            break;
        }
        one_plus_lambda_step(objective, &mut state, &mut sampler, &domain.set, &mut rng)?;
        best.offer(state.point.view(), state.value);
        record.trajectory.push(state.point.to_vec());
        record.iterations = k + 1;
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
