//! The query-counted classifier boundary.

pub mod classifier;
pub mod ledger;
pub mod remote;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use classifier::{load_tiny_mlp, toy_linear_classifier, Classifier, LinearSoftmax, TinyMlp};
pub use ledger::{Charge, QueryLedger};
pub use remote::{RemoteClassifier, RemoteConfig};

use crate::error::{ensure_dim, Result};
use crate::exec::Execution;

/// Logits for the granted prefix of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLogits {
    pub logits: Vec<Vec<f64>>,
    /// 1-based query index of the first row.
    pub first_index: u64,
    /// The batch was truncated because the budget ran out.
    pub exhausted: bool,
}

/// A classifier together with the ledger of one run.
pub struct QueryBroker {
    classifier: Arc<dyn Classifier>,
    ledger: QueryLedger,
    exec: Execution,
}

impl QueryBroker {
    pub fn new(classifier: Arc<dyn Classifier>, budget: u64) -> Self {
        QueryBroker {
            classifier,
            ledger: QueryLedger::new(budget),
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn classifier(&self) -> &Arc<dyn Classifier> {
        &self.classifier
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut QueryLedger {
        &mut self.ledger
    }

    /// Charges one query per row and evaluates the rows the budget allows.
    ///
    /// # Panics
    /// If any input entry lies outside `[0, 1]`.
    pub fn query_batch(&mut self, inputs: ArrayView2<'_, f64>) -> Result<BatchLogits> {
        ensure_dim(self.classifier.input_dim(), inputs.ncols())?;
        assert!(
            inputs.iter().all(|v| (0.0..=1.0).contains(v)),
            "queried inputs must lie in [0, 1]"
        );
        let charge = self.ledger.charge(inputs.nrows());
        let granted = inputs.slice(ndarray::s![..charge.granted, ..]);
        let logits = if charge.granted == 0 {
            Vec::new()
        } else {
            self.classifier.logits(granted, self.exec)?
        };
        Ok(BatchLogits {
            logits,
            first_index: charge.first_index,
            exhausted: charge.exhausted,
        })
    }
}

/// How to obtain a classifier. Relative paths resolve against a base directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    /// The built-in 16-input, 4-class linear model.
    Toy,
    Linear { path: PathBuf },
    TinyMlp { path: PathBuf },
    Remote(RemoteConfig),
}

impl ClassifierSpec {
    pub fn build(&self, base: &Path) -> Result<Arc<dyn Classifier>> {
        Ok(match self {
            ClassifierSpec::Toy => Arc::new(toy_linear_classifier()),
            ClassifierSpec::Linear { path } => Arc::new(LinearSoftmax::load(base.join(path))?),
            ClassifierSpec::TinyMlp { path } => Arc::new(load_tiny_mlp(base.join(path))?),
            ClassifierSpec::Remote(cfg) => Arc::new(RemoteClassifier::new(cfg.clone())?),
        })
    }
}
