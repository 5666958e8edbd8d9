//! Single-input attacks: the latent-space objective, optimizer dispatch and
//! restarts.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::broker::{Classifier, QueryBroker, QueryLedger};
use crate::constraints::LossSpec;
use crate::ensemble::run_cbo;
use crate::error::{ensure_dim, Result};
use crate::estimators::run_ch_nes;
use crate::exec::Execution;
use crate::noise::{run_one_plus_lambda, EsConfig};
use crate::numerics::argmax;
use crate::objective::{Domain, Objective};
use crate::record::{Budgets, RunRecord};
use crate::rng::{derive_seed, rng_from_seed};
use crate::spaces::{AttackSpace, ImageTensor, SpaceContext};

use super::config::OptimizerSpec;

/// Geometry of every image sent to the classifier during one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryAudit {
    pub queries: u64,
    pub max_linf: f64,
    pub max_l2: f64,
    pub min_pixel: f64,
    pub max_pixel: f64,
    /// Queried images whose distance to the input exceeded the budget.
    pub budget_violations: u64,
}

impl Default for QueryAudit {
    fn default() -> Self {
        QueryAudit {
            queries: 0,
            max_linf: 0.0,
            max_l2: 0.0,
            min_pixel: f64::INFINITY,
            max_pixel: f64::NEG_INFINITY,
            budget_violations: 0,
        }
    }
}

impl QueryAudit {
    pub fn merge(&mut self, other: &QueryAudit) {
        self.queries += other.queries;
        self.max_linf = self.max_linf.max(other.max_linf);
        self.max_l2 = self.max_l2.max(other.max_l2);
        self.min_pixel = self.min_pixel.min(other.min_pixel);
        self.max_pixel = self.max_pixel.max(other.max_pixel);
        self.budget_violations += other.budget_violations;
    }

    /// No queried image left the budget ball or `[0, 1]`.
    pub fn is_sound(&self) -> bool {
        self.budget_violations == 0
            && (self.queries == 0 || (self.min_pixel >= 0.0 && self.max_pixel <= 1.0))
    }
}

/// Loss of the images `R(Π_B(T(s; x)))` for latent points `s`.
pub struct AttackObjective<'a> {
    space: &'a AttackSpace,
    context: SpaceContext,
    input: &'a ImageTensor,
    center: Array1<f64>,
    loss: LossSpec,
    broker: QueryBroker,
    exec: Execution,
    audit: QueryAudit,
}

impl<'a> AttackObjective<'a> {
    pub fn new(
        space: &'a AttackSpace,
        context: SpaceContext,
        input: &'a ImageTensor,
        loss: LossSpec,
        broker: QueryBroker,
        exec: Execution,
    ) -> Self {
        AttackObjective {
            space,
            context,
            input,
            center: Array1::from(input.to_flat()),
            loss,
            broker,
            exec,
            audit: QueryAudit::default(),
        }
    }

    pub fn audit(&self) -> &QueryAudit {
        &self.audit
    }

    pub fn context(&self) -> &SpaceContext {
        &self.context
    }

    /// The image that a latent point is mapped to.
    pub fn image(&self, s: ndarray::ArrayView1<'_, f64>) -> Result<ImageTensor> {
        self.space.query_image(s, self.input, &self.context)
    }

    fn record(&mut self, images: ArrayView2<'_, f64>) {
        let budget = self.space.budget();
        for row in images.rows() {
            let diff = &row - &self.center;
            let linf = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let l2 = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            let a = &mut self.audit;
            a.queries += 1;
            a.max_linf = a.max_linf.max(linf);
            a.max_l2 = a.max_l2.max(l2);
            for &v in row {
                a.min_pixel = a.min_pixel.min(v);
                a.max_pixel = a.max_pixel.max(v);
            }
            let distance = budget.distance(row, self.center.view());
            if distance > budget.epsilon {
                a.budget_violations += 1;
            }
        }
    }
}

impl Objective for AttackObjective<'_> {
    fn dim(&self) -> usize {
        self.space.latent_dim()
    }

    fn evaluate(&mut self, points: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), points.ncols())?;
        let remaining = self.broker.ledger().remaining();
        let granted = (points.nrows() as u64).min(remaining) as usize;
        let images = self
            .exec
            .map_range(granted, |i| self.image(points.row(i)).map(|img| img.to_flat()));
        let width = self.center.len();
        let mut batch = Array2::zeros((points.nrows(), width));
        for (i, img) in images.into_iter().enumerate() {
            batch.row_mut(i).assign(&Array1::from(img?));
        }
        // Rows past the budget are charged but never evaluated or audited.
        let center = self.center.view();
        for i in granted..points.nrows() {
            batch.row_mut(i).assign(&center);
        }
        self.record(batch.slice(ndarray::s![..granted, ..]));
        let out = self.broker.query_batch(batch.view())?;
        let mut values = Vec::with_capacity(out.logits.len());
        let mut hit = None;
        for (i, logits) in out.logits.iter().enumerate() {
            values.push(self.loss.objective(logits)?);
            if hit.is_none() && self.loss.is_adversarial(logits) {
                hit = Some(out.first_index + i as u64);
            }
        }
        if let Some(index) = hit {
            self.broker.ledger_mut().record_success(index);
        }
        Ok(values)
    }

    fn ledger(&self) -> &QueryLedger {
        self.broker.ledger()
    }

    fn mark_iteration(&mut self, iteration: usize) {
        self.broker.ledger_mut().mark_iteration(iteration);
    }
}

/// Runs the configured optimizer on any objective.
pub fn run_optimizer<O: Objective + ?Sized>(
    spec: &OptimizerSpec,
    objective: &mut O,
    domain: &Domain,
    budgets: Budgets,
    seed: u64,
) -> Result<RunRecord> {
    if let Some((kind, config)) = spec.estimator() {
        return run_ch_nes(objective, domain, &config, kind, budgets, seed);
    }
    match spec {
        OptimizerSpec::Cbo(config) => run_cbo(objective, domain, config, budgets, seed),
        OptimizerSpec::OnePlusLambda(config) => run_one_plus_lambda(objective, domain, config, budgets, seed),
        OptimizerSpec::CauchyOnePlusOne { scale } => {
            run_one_plus_lambda(objective, domain, &EsConfig::cauchy(*scale), budgets, seed)
        }
        OptimizerSpec::Ch { .. } | OptimizerSpec::Nes(_) => unreachable!("handled above"),
    }
}

/// Everything a single-input attack needs besides the input itself.
#[derive(Clone)]
pub struct AttackSetup<'a> {
    pub optimizer: &'a OptimizerSpec,
    pub space: &'a AttackSpace,
    pub classifier: Arc<dyn Classifier>,
    /// Query budget of each restart.
    pub schedule: &'a [u64],
    pub max_iterations: Option<usize>,
    pub exec: Execution,
}

/// Result of attacking one input, over all restarts.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub success: bool,
    pub queries_used: u64,
    /// 1-based index of the first adversarial query, counted across restarts.
    pub queries_to_success: Option<u64>,
    pub restarts: Vec<RunRecord>,
    /// `x*`: the image of the lowest-loss point over all restarts.
    pub adversarial: ImageTensor,
    pub best_value: f64,
    /// Prediction on `x*`; not charged to the query budget.
    pub final_prediction: usize,
    pub l2: f64,
    pub linf: f64,
    pub audit: QueryAudit,
}

/// Attacks one input. Restart `r` runs with budget `schedule[r]`, seed
/// `derive_seed(seed, r)` and a fresh space context; restarts stop at the
/// first success.
pub fn run_attack(setup: &AttackSetup<'_>, input: &ImageTensor, loss: LossSpec, seed: u64) -> Result<AttackOutcome> {
    let domain = Domain::from(setup.space);
    let mut restarts = Vec::new();
    let mut audit = QueryAudit::default();
    let mut spent = 0u64;
    let mut to_success = None;
    let mut best: Option<(f64, ImageTensor)> = None;

    for (r, &budget) in setup.schedule.iter().enumerate() {
        let run_seed = derive_seed(seed, r as u64);
        let context = setup.space.context(&mut rng_from_seed(derive_seed(run_seed, u64::MAX)));
        let broker = QueryBroker::new(setup.classifier.clone(), budget).with_execution(setup.exec);
        let mut objective = AttackObjective::new(setup.space, context, input, loss, broker, setup.exec);
        let budgets = Budgets {
            queries: budget,
            max_iterations: setup.max_iterations.unwrap_or(usize::MAX),
        };
        let record = run_optimizer(setup.optimizer, &mut objective, &domain, budgets, run_seed)?;
        audit.merge(objective.audit());
        if best.as_ref().is_none_or(|(v, _)| record.best_value < *v) {
            let image = objective.image(Array1::from(record.best_point.clone()).view())?;
            best = Some((record.best_value, image));
        }
        if let Some(q) = record.queries_to_success {
            to_success = Some(spent + q);
        }
        spent += record.queries_used;
        let done = record.success;
        restarts.push(record);
        if done {
            break;
        }
    }

    let (best_value, adversarial) = match best {
        Some(b) => b,
        None => (f64::INFINITY, input.clone()),
    };
    let final_prediction = argmax(&setup.classifier.logits_one(&adversarial.to_flat())?);
    let diff: Vec<f64> = adversarial
        .to_flat()
        .iter()
        .zip(input.to_flat())
        .map(|(a, b)| a - b)
        .collect();
    Ok(AttackOutcome {
        success: to_success.is_some(),
        queries_used: spent,
        queries_to_success: to_success,
        restarts,
        adversarial,
        best_value,
        final_prediction,
        l2: diff.iter().map(|d| d * d).sum::<f64>().sqrt(),
        linf: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
        audit,
    })
}
