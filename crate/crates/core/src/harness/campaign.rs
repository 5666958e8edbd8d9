//! Attack campaigns over a dataset and their summary metrics.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::broker::Classifier;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{argmax, median};
use crate::rng::derive_seed;
use crate::spaces::AttackSpace;

use super::attack::{run_attack, AttackOutcome, AttackSetup};
use super::config::{ExperimentConfig, Sample};

/// Query statistic of one attacked input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub success: bool,
    /// Queries to success; ignored for failures, which count as `Q`.
    pub queries: u64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub points: usize,
    pub attacked: usize,
    /// Inputs misclassified before the attack.
    pub skipped: usize,
    pub successes: usize,
    pub failures: usize,
    pub query_budget: u64,
    pub failure_rate: f64,
    /// Mean over successful runs.
    pub avg_queries_success: f64,
    /// Mean over all attacked runs, failures counting `Q`.
    pub avg_queries_all: f64,
    pub median_queries_success: f64,
    /// Mean ℓ2 perturbation norm of the successful runs.
    pub avg_l2: f64,
    pub robust_accuracy: f64,
}

impl CampaignStats {
    /// Aggregates attacked runs; `points`, `skipped` and `robust_accuracy`
    /// are left for the caller.
    pub fn from_outcomes(outcomes: &[RunOutcome], query_budget: u64) -> Self {
        let successes: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.success).collect();
        let n = outcomes.len();
        let s = successes.len();
        let mean = |xs: &mut dyn Iterator<Item = f64>, count: usize| {
            if count == 0 {
                0.0
            } else {
                xs.sum::<f64>() / count as f64
            }
        };
        let success_queries: Vec<f64> = successes.iter().map(|o| o.queries as f64).collect();
        CampaignStats {
            points: n,
            attacked: n,
            skipped: 0,
            successes: s,
            failures: n - s,
            query_budget,
            failure_rate: if n == 0 { 0.0 } else { 1.0 - s as f64 / n as f64 },
            avg_queries_success: mean(&mut success_queries.iter().copied(), s),
            avg_queries_all: mean(
                &mut outcomes
                    .iter()
                    .map(|o| if o.success { o.queries as f64 } else { query_budget as f64 }),
                n,
            ),
            median_queries_success: median(&success_queries).unwrap_or(0.0),
            avg_l2: mean(&mut successes.iter().map(|o| o.l2), s),
            robust_accuracy: 0.0,
        }
    }
}

/// Per-point robustness: the clean input is classified correctly and so is
/// the attack output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RobustnessRecord {
    pub label: usize,
    pub clean_prediction: usize,
    pub final_prediction: Option<usize>,
}

impl RobustnessRecord {
    pub fn is_robust(&self) -> bool {
        self.clean_prediction == self.label && self.final_prediction == Some(self.label)
    }
}

/// Fraction of points whose attack output is still classified correctly;
/// initially misclassified points count as non-robust.
pub fn robust_accuracy(records: &[RobustnessRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.is_robust()).count() as f64 / records.len() as f64
}

/// One dataset point of a campaign.
#[derive(Debug, Clone)]
pub struct PointRun {
    pub index: usize,
    pub label: usize,
    pub clean_prediction: usize,
    pub seed: u64,
    /// `None` for skipped points and for attacks that failed with an error.
    pub outcome: Option<AttackOutcome>,
    pub error: Option<String>,
}

impl PointRun {
    pub fn attacked(&self) -> bool {
        self.clean_prediction == self.label
    }

    pub fn robustness(&self) -> RobustnessRecord {
        let final_prediction = match (&self.outcome, self.attacked()) {
            (Some(o), _) => Some(o.final_prediction),
            (None, false) => Some(self.clean_prediction),
            (None, true) => None,
        };
        RobustnessRecord {
            label: self.label,
            clean_prediction: self.clean_prediction,
            final_prediction,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub stats: CampaignStats,
    pub runs: Vec<PointRun>,
    /// First attack error; statistics then cover the completed runs only.
    pub error: Option<String>,
}

impl CampaignResult {
    fn assemble(runs: Vec<PointRun>, query_budget: u64) -> Self {
        let outcomes: Vec<RunOutcome> = runs
            .iter()
            .filter_map(|r| r.outcome.as_ref())
            .map(|o| RunOutcome {
                success: o.success,
                queries: o.queries_to_success.unwrap_or(o.queries_used),
                l2: o.l2,
            })
            .collect();
        let mut stats = CampaignStats::from_outcomes(&outcomes, query_budget);
        stats.points = runs.len();
        stats.skipped = runs.iter().filter(|r| !r.attacked()).count();
        let robustness: Vec<RobustnessRecord> = runs.iter().map(PointRun::robustness).collect();
        stats.robust_accuracy = robust_accuracy(&robustness);
        let error = runs.iter().find_map(|r| r.error.clone());
        CampaignResult { stats, runs, error }
    }
}

/// Builds the classifier and dataset of `config` and runs the campaign.
pub fn run_campaign(config: &ExperimentConfig, base: &Path) -> Result<CampaignResult> {
    config.validate()?;
    let classifier = config.classifier.build(base)?;
    let samples = config.dataset.load(base, classifier.as_ref())?;
    run_campaign_on(config, classifier, &samples)
}

/// Attacks every initially correct sample. Point `i` uses the seed
/// `derive_seed(config.seed, i)`, so results do not depend on scheduling.
pub fn run_campaign_on(
    config: &ExperimentConfig,
    classifier: Arc<dyn Classifier>,
    samples: &[Sample],
) -> Result<CampaignResult> {
    config.validate()?;
    if samples.is_empty() {
        return Ok(CampaignResult::assemble(Vec::new(), config.queries));
    }
    let shape = samples[0].input.shape();
    if samples.iter().any(|s| s.input.shape() != shape) {
        return Err(Error::InvalidInput("dataset images differ in shape".into()));
    }
    let space = AttackSpace::new(config.space, shape, config.budget)?;
    let clean = clean_predictions(classifier.as_ref(), samples, config.execution)?;
    let schedule = config.restart_schedule();
    // Runs fan out over the pool; each run evaluates its batches sequentially.
    let inner = if config.execution.is_parallel() {
        Execution::Sequential
    } else {
        config.execution
    };
    let setup = AttackSetup {
        optimizer: &config.optimizer,
        space: &space,
        classifier: classifier.clone(),
        schedule: &schedule,
        max_iterations: config.max_iterations,
        exec: inner,
    };
    let num_classes = classifier.num_classes();
    let runs = config.execution.map_range(samples.len(), |i| {
        let sample = &samples[i];
        let seed = derive_seed(config.seed, i as u64);
        let mut run = PointRun {
            index: i,
            label: sample.label,
            clean_prediction: clean[i],
            seed,
            outcome: None,
            error: None,
        };
        if !run.attacked() {
            return run;
        }
        let attack = config
            .loss
            .spec(sample, num_classes)
            .and_then(|loss| run_attack(&setup, &sample.input, loss, seed));
        match attack {
            Ok(outcome) => run.outcome = Some(outcome),
            Err(e) => run.error = Some(e.to_string()),
        }
        run
    });
    Ok(CampaignResult::assemble(runs, config.queries))
}

/// Clean predictions; these are not charged to any attack budget.
fn clean_predictions(classifier: &dyn Classifier, samples: &[Sample], exec: Execution) -> Result<Vec<usize>> {
    let d = classifier.input_dim();
    let mut batch = Array2::zeros((samples.len(), d));
    for (mut row, s) in batch.rows_mut().into_iter().zip(samples) {
        let flat = s.input.to_flat();
        crate::error::ensure_dim(d, flat.len())?;
        row.assign(&ndarray::ArrayView1::from(&flat));
    }
    Ok(classifier.logits(batch.view(), exec)?.iter().map(|l| argmax(l)).collect())
}
