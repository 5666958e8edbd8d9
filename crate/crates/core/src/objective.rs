//! The minimization objective seen by every optimizer.

use ndarray::{ArrayView1, ArrayView2};

use crate::broker::QueryLedger;
use crate::constraints::LatentSet;
use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;
use crate::spaces::AttackSpace;

/// Where an optimizer searches: a feasible set in `R^dim`, optionally with an
/// image layout that structured noise models can exploit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub set: LatentSet,
    pub dim: usize,
    pub image_shape: Option<[usize; 3]>,
}

impl Domain {
    pub fn new(set: LatentSet, dim: usize) -> Self {
        Domain {
            set,
            dim,
            image_shape: None,
        }
    }

    pub fn with_image_shape(mut self, shape: [usize; 3]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.dim {
            return Err(Error::InvalidConfig(format!(
                "image shape {shape:?} does not match dimension {}",
                self.dim
            )));
        }
        self.image_shape = Some(shape);
        Ok(self)
    }
}

impl From<&AttackSpace> for Domain {
    fn from(space: &AttackSpace) -> Self {
        Domain {
            set: space.latent_set(),
            dim: space.latent_dim(),
            image_shape: space.latent_image_shape(),
        }
    }
}

/// A query-counted closed-box function from latent points to scalar loss.
///
/// Implementations charge one query per evaluated row and record the first
/// row with a negative value as the success query in their ledger.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Evaluates the rows of `points` in order. Once the budget is spent the
    /// returned vector is shorter than the number of rows.
    fn evaluate(&mut self, points: ArrayView2<'_, f64>) -> Result<Vec<f64>>;

    fn ledger(&self) -> &QueryLedger;

    /// Logs the end of an optimizer iteration in the ledger.
    fn mark_iteration(&mut self, iteration: usize);

    fn succeeded(&self) -> bool {
        self.ledger().first_success().is_some()
    }
}

/// Wraps a plain function `f: R^d -> R` with a query ledger.
pub struct FunctionObjective<F> {
    f: F,
    dim: usize,
    ledger: QueryLedger,
    exec: Execution,
}

impl<F> FunctionObjective<F>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Sync + Send,
{
    pub fn new(dim: usize, budget: u64, f: F) -> Self {
        FunctionObjective {
            f,
            dim,
            ledger: QueryLedger::new(budget),
            exec: Execution::Sequential,
        }
    }

    pub fn unlimited(dim: usize, f: F) -> Self {
        Self::new(dim, u64::MAX, f)
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}

impl<F> Objective for FunctionObjective<F>
where
    F: Fn(ArrayView1<'_, f64>) -> f64 + Sync + Send,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, points: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        ensure_dim(self.dim, points.ncols())?;
        let charge = self.ledger.charge(points.nrows());
        let f = &self.f;
        let values = self
            .exec
            .map_range(charge.granted, |i| f(points.row(i)));
        if let Some(pos) = values.iter().position(|&v| v < 0.0) {
            self.ledger.record_success(charge.first_index + pos as u64);
        }
        Ok(values)
    }

    fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    fn mark_iteration(&mut self, iteration: usize) {
        self.ledger.mark_iteration(iteration);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn truncates_and_attributes_success() {
        let mut obj = FunctionObjective::new(1, 3, |x: ArrayView1<f64>| x[0]);
        let vals = obj.evaluate(array![[1.0], [-1.0]].view()).unwrap();
        assert_eq!(vals, vec![1.0, -1.0]);
        assert_eq!(obj.ledger().first_success(), Some(2));
        let vals = obj.evaluate(array![[5.0], [6.0]].view()).unwrap();
        assert_eq!(vals.len(), 1);
        assert_eq!(obj.ledger().used(), 3);
    }

    #[test]
    fn rejects_wrong_width() {
        let mut obj = FunctionObjective::unlimited(2, |x: ArrayView1<f64>| x.sum());
        assert!(obj.evaluate(array![[1.0]].view()).is_err());
    }
}
