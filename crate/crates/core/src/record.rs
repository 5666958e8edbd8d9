use serde::{Deserialize, Serialize};

/// Hard limits for one optimizer run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    /// Query budget Q. Enforced by the objective's ledger; kept here so the
    /// loops can stop before issuing a batch they cannot complete.
    pub queries: u64,
    pub max_iterations: usize,
}

impl Budgets {
    pub fn queries(queries: u64) -> Self {
        Budgets {
            queries,
            max_iterations: usize::MAX,
        }
    }

    pub fn iterations(max_iterations: usize) -> Self {
        Budgets {
            queries: u64::MAX,
            max_iterations,
        }
    }
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// A queried point attained a negative objective value.
    pub success: bool,
    pub queries_used: u64,
    /// 1-based index of the first adversarial query.
    pub queries_to_success: Option<u64>,
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub iterations: usize,
    /// Consensus point (CBO) or iterate (CH/NES/ES) after every iteration.
    pub trajectory: Vec<Vec<f64>>,
}

impl RunRecord {
    pub(crate) fn empty(start: Vec<f64>) -> Self {
        RunRecord {
            success: false,
            queries_used: 0,
            queries_to_success: None,
            best_point: start,
            best_value: f64::INFINITY,
            iterations: 0,
            trajectory: Vec::new(),
        }
    }
}

/// Best point seen so far; ties keep the earlier point.
#[derive(Debug, Clone)]
pub(crate) struct Incumbent {
    pub point: Vec<f64>,
    pub value: f64,
}

impl Incumbent {
    pub fn new(start: Vec<f64>) -> Self {
        Incumbent {
            point: start,
            value: f64::INFINITY,
        }
    }

    pub fn offer(&mut self, point: ndarray::ArrayView1<'_, f64>, value: f64) {
        if value < self.value {
            self.value = value;
            self.point = point.to_vec();
        }
    }
}
