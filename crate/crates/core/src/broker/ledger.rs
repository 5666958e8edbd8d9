use serde::{Deserialize, Serialize};

/// Result of asking the ledger for `requested` queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Charge {
    /// 1-based index of the first granted query.
    pub first_index: u64,
    pub granted: usize,
    /// Set when fewer queries were granted than requested.
    pub exhausted: bool,
}

/// Query accounting for a single optimizer run. `used <= budget` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLedger {
    budget: u64,
    used: u64,
    first_success: Option<u64>,
    per_iteration: Vec<(usize, u64)>,
}

impl QueryLedger {
    pub fn new(budget: u64) -> Self {
        QueryLedger {
            budget,
            used: 0,
            first_success: None,
            per_iteration: Vec::new(),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX)
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.used
    }

    pub fn is_exhausted(&self) -> bool {
        self.used == self.budget
    }

    pub fn charge(&mut self, requested: usize) -> Charge {
        let granted = (requested as u64).min(self.remaining()) as usize;
        let first_index = self.used + 1;
        self.used += granted as u64;
        assert!(self.used <= self.budget, "query ledger overran its budget");
        Charge {
            first_index,
            granted,
            exhausted: granted < requested,
        }
    }

    /// Records that the query with the given 1-based index was adversarial.
    /// Only the first such index is kept.
    pub fn record_success(&mut self, query_index: u64) {
        assert!(query_index >= 1 && query_index <= self.used);
        if self.first_success.is_none() {
            self.first_success = Some(query_index);
        }
    }

    pub fn first_success(&self) -> Option<u64> {
        self.first_success
    }

    /// Logs the cumulative query count at the end of an iteration.
    pub fn mark_iteration(&mut self, iteration: usize) {
        self.per_iteration.push((iteration, self.used));
    }

    pub fn per_iteration(&self) -> &[(usize, u64)] {
        &self.per_iteration
    }
}
