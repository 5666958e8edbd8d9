//! Norm-ball projections, the tanh reparameterization and attack losses.
//!
//! All losses are returned as *minimization* objectives: an input is
//! adversarial exactly when its (shifted) loss is negative.

use ndarray::{Array1, ArrayView1, ArrayViewMut1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, ball_clamp, log_sum_exp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Linf,
    L2,
}

/// An ε-ball budget around a center point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub norm: Norm,
    pub epsilon: f64,
}

impl Budget {
    pub fn new(norm: Norm, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "budget epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(Budget { norm, epsilon })
    }

    pub fn project(&self, z: ArrayViewMut1<'_, f64>, center: ArrayView1<'_, f64>) {
        match self.norm {
            Norm::Linf => project_linf(z, center, self.epsilon),
            Norm::L2 => project_l2(z, center, self.epsilon),
        }
    }

    /// φ(z, center) in this budget's norm.
    pub fn distance(&self, z: ArrayView1<'_, f64>, center: ArrayView1<'_, f64>) -> f64 {
        let diffs = z.iter().zip(center.iter()).map(|(a, b)| a - b);
        match self.norm {
            Norm::Linf => diffs.fold(0.0, |m, d| m.max(d.abs())),
            Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        }
    }
}

/// Componentwise clamp into `[center - eps, center + eps]`.
pub fn project_linf(mut z: ArrayViewMut1<'_, f64>, center: ArrayView1<'_, f64>, eps: f64) {
    z.zip_mut_with(&center, |v, &c| *v = ball_clamp(*v, c, eps));
}

/// Radial projection onto the closed ℓ2 ball of radius `eps`.
pub fn project_l2(mut z: ArrayViewMut1<'_, f64>, center: ArrayView1<'_, f64>, eps: f64) {
    let dist = z
        .iter()
        .zip(center.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if dist <= eps {
        return;
    }
    let original = z.to_owned();
    let mut scale = eps / dist;
    loop {
        z.zip_mut_with(&original, |v, &o| *v = o);
        z.zip_mut_with(&center, |v, &c| *v = c + scale * (*v - c));
        let projected = z
            .iter()
            .zip(center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if projected <= eps {
            return;
        }
        scale = scale.next_down();
    }
}

/// `center + eps * tanh(w)`, strictly inside the open ℓ∞ ball.
pub fn tanh_reparam(w: ArrayView1<'_, f64>, center: ArrayView1<'_, f64>, eps: f64) -> Array1<f64> {
    let mut out = center.to_owned();
    out.zip_mut_with(&w, |c, &wi| *c += eps * wi.tanh());
    out
}

/// Feasible set of latent points: where ensembles are initialized and what the
/// projection step maps back onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentSet {
    /// Norm ball of the given radius around the origin.
    Ball { norm: Norm, radius: f64 },
    /// The box `[lower, upper]^d`.
    Box { lower: f64, upper: f64 },
}

impl LatentSet {
    pub fn project(&self, mut z: ArrayViewMut1<'_, f64>) {
        match *self {
            LatentSet::Ball { norm, radius } => {
                let origin = Array1::zeros(z.len());
                Budget { norm, epsilon: radius }.project(z, origin.view());
            }
            LatentSet::Box { lower, upper } => z.mapv_inplace(|v| v.clamp(lower, upper)),
        }
    }

    pub fn contains(&self, z: ArrayView1<'_, f64>) -> bool {
        match *self {
            LatentSet::Ball { norm, radius } => {
                let origin = Array1::zeros(z.len());
                Budget { norm, epsilon: radius }.distance(z, origin.view()) <= radius
            }
            LatentSet::Box { lower, upper } => z.iter().all(|&v| (lower..=upper).contains(&v)),
        }
    }

    /// The "no perturbation" point: the origin for balls, the midpoint for boxes.
    pub fn neutral(&self, dim: usize) -> Array1<f64> {
        match *self {
            LatentSet::Ball { .. } => Array1::zeros(dim),
            LatentSet::Box { lower, upper } => Array1::from_elem(dim, 0.5 * (lower + upper)),
        }
    }

    /// Uniform sample from the set.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Array1<f64> {
        match *self {
            LatentSet::Ball {
                norm: Norm::Linf,
                radius,
            } => Array1::from_shape_fn(dim, |_| rng.random_range(-radius..=radius)),
            LatentSet::Ball {
                norm: Norm::L2,
                radius,
            } => {
                let dir: Array1<f64> = Array1::from_shape_fn(dim, |_| rng.sample(StandardNormal));
                let norm = dir.dot(&dir).sqrt().max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
                dir * (r / norm)
            }
            LatentSet::Box { lower, upper } => {
                Array1::from_shape_fn(dim, |_| rng.random_range(lower..=upper))
            }
        }
    }
}

/// Margin loss as a minimization objective: `y_κ - max_{j≠κ} y_j`.
/// Negative exactly when some wrong class outscores the true class.
pub fn margin_loss(logits: &[f64], true_label: usize) -> Result<f64> {
    check_logits(logits, true_label)?;
    let best_other = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != true_label)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(logits[true_label] - best_other)
}

/// Negative log-softmax of the target class, `LSE(y) - y_target`; always `>= 0`.
pub fn targeted_ce_loss(logits: &[f64], target: usize) -> Result<f64> {
    check_logits(logits, target)?;
    Ok((log_sum_exp(logits.iter().copied()) - logits[target]).max(0.0))
}

fn check_logits(logits: &[f64], label: usize) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Untargeted { true_label: usize },
    Targeted { target_label: usize },
}

/// Sign convention of the raw loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossConvention {
    /// Negative ⇔ adversarial; what every optimizer here expects.
    #[default]
    Minimization,
    /// The textbook forms `-y_κ + max_{j≠κ} y_j` and `y_κ̄ - LSE(y)`, which are
    /// meant to be maximized. Only useful for reporting.
    Maximization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub mode: AttackMode,
    /// Success shift M of the targeted loss.
    #[serde(default = "default_shift")]
    pub shift: f64,
    #[serde(default)]
    pub convention: LossConvention,
}

fn default_shift() -> f64 {
    10.0
}

impl LossSpec {
    pub fn untargeted(true_label: usize) -> Self {
        LossSpec {
            mode: AttackMode::Untargeted { true_label },
            shift: default_shift(),
            convention: LossConvention::Minimization,
        }
    }

    pub fn targeted(target_label: usize) -> Self {
        LossSpec {
            mode: AttackMode::Targeted { target_label },
            shift: default_shift(),
            convention: LossConvention::Minimization,
        }
    }

    /// Raw loss under this spec's convention.
    pub fn loss(&self, logits: &[f64]) -> Result<f64> {
        let value = match self.mode {
            AttackMode::Untargeted { true_label } => margin_loss(logits, true_label)?,
            AttackMode::Targeted { target_label } => targeted_ce_loss(logits, target_label)?,
        };
        Ok(match self.convention {
            LossConvention::Minimization => value,
            LossConvention::Maximization => -value,
        })
    }

    /// Loss fed to the optimizers: the raw minimization loss, minus `shift`
    /// when a targeted attack already hits its target class.
    pub fn objective(&self, logits: &[f64]) -> Result<f64> {
        let minimization = LossSpec {
            convention: LossConvention::Minimization,
            ..*self
        };
        Ok(shifted_loss(minimization.loss(logits)?, logits, self))
    }

    /// Adversarial-success predicate, independent of loss magnitudes.
    pub fn is_adversarial(&self, logits: &[f64]) -> bool {
        let predicted = argmax(logits);
        match self.mode {
            AttackMode::Untargeted { true_label } => {
                margin_loss(logits, true_label).is_ok_and(|m| m < 0.0)
            }
            AttackMode::Targeted { target_label } => predicted == target_label,
        }
    }
}

/// `f - M·δ(argmax y, target)` for targeted specs, `f` otherwise.
pub fn shifted_loss(f_value: f64, logits: &[f64], spec: &LossSpec) -> f64 {
    match spec.mode {
        AttackMode::Untargeted { .. } => f_value,
        AttackMode::Targeted { target_label } => {
            if argmax(logits) == target_label {
                f_value - spec.shift
            } else {
                f_value
            }
        }
    }
}
