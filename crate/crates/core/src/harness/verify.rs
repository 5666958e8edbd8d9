//! Numerical checks of the small-step behavior of the NES and CH expected
//! steps: error-vs-τ slopes and the agreement of the two directions.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::ch_expected_step;
use crate::estimators::nes_expected_step;
use crate::exec::Execution;
use crate::numerics::l2_norm;
use crate::rng::rng_from_seed;

pub const DEFAULT_TAUS: [f64; 3] = [0.04, 0.01, 0.0025];

/// Error of an expected step at each τ and the fitted log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub taus: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// A smooth test function with its gradient.
pub struct TestFunction {
    pub f: fn(ArrayView1<'_, f64>) -> f64,
    pub grad: fn(ArrayView1<'_, f64>) -> Array1<f64>,
}

/// `½‖x‖²`.
pub const HALF_SQUARED_NORM: TestFunction = TestFunction {
    f: |x| 0.5 * x.dot(&x),
    grad: |x| x.to_owned(),
};

/// `Σ x_i|x_i| / 2`: once but not twice differentiable at the origin.
pub const SIGNED_SQUARE: TestFunction = TestFunction {
    f: |x| 0.5 * x.iter().map(|v| v * v.abs()).sum::<f64>(),
    grad: |x| x.mapv(f64::abs),
};

/// `‖nes_expected_step − τ∇f(μ)‖` with `σ² = τ/η`.
pub fn nes_consistency(
    func: &TestFunction,
    mu: ArrayView1<'_, f64>,
    taus: &[f64],
    eta: f64,
    m: usize,
    seed: u64,
    exec: Execution,
) -> SlopeReport {
    let errors: Vec<f64> = taus
        .iter()
        .map(|&tau| {
            let step = nes_expected_step(func.f, mu, (tau / eta).sqrt(), eta, m, seed, exec);
            l2_norm((step - tau * (func.grad)(mu)).view())
        })
        .collect();
    SlopeReport {
        taus: taus.to_vec(),
        slope: loglog_slope(taus, &errors),
        errors,
    }
}

/// `‖ch_expected_step + τ∇f(c)‖` with `σ̃² = τ/α`.
pub fn ch_consistency(
    func: &TestFunction,
    c: ArrayView1<'_, f64>,
    taus: &[f64],
    alpha: f64,
    m: usize,
    seed: u64,
    exec: Execution,
) -> SlopeReport {
    let errors: Vec<f64> = taus
        .iter()
        .map(|&tau| {
            let step = ch_expected_step(func.f, c, (tau / alpha).sqrt(), alpha, m, seed, exec);
            l2_norm((step + tau * (func.grad)(c)).view())
        })
        .collect();
    SlopeReport {
        taus: taus.to_vec(),
        slope: loglog_slope(taus, &errors),
        errors,
    }
}

/// A random positive-definite quadratic `½(x−b)ᵀA(x−b)` with `A = BᵀB/d + I/2`.
pub struct Quadratic {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

impl Quadratic {
    pub fn random(d: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let m = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
        let a = m.t().dot(&m) / d as f64 + Array2::<f64>::eye(d) * 0.5;
        let b = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        Quadratic { a, b }
    }

    pub fn value(&self, x: ArrayView1<'_, f64>) -> f64 {
        let r = &x - &self.b;
        0.5 * r.dot(&self.a.dot(&r))
    }

    pub fn gradient(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.a.dot(&(&x - &self.b))
    }
}

pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.dot(&b) / (l2_norm(a) * l2_norm(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub nes_descent: Vec<f64>,
    pub ch_step: Vec<f64>,
    pub cosine: f64,
}

/// Cosine between the descent-convention NES step `−nes_expected_step`
/// (`σ² = τ/η`) and the CH step (`σ̃² = τ/α`) on a random quadratic, at a
/// random point, with both drawing the same `m` samples.
pub fn ch_nes_agreement(d: usize, tau: f64, eta: f64, alpha: f64, m: usize, seed: u64, exec: Execution) -> AgreementReport {
    let q = Quadratic::random(d, seed);
    let mut rng = rng_from_seed(seed.wrapping_add(1));
    let x = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
    let f = |p: ArrayView1<'_, f64>| q.value(p);
    let nes = -nes_expected_step(f, x.view(), (tau / eta).sqrt(), eta, m, seed, exec);
    let ch = ch_expected_step(f, x.view(), (tau / alpha).sqrt(), alpha, m, seed, exec);
    AgreementReport {
        cosine: cosine(nes.view(), ch.view()),
        nes_descent: nes.to_vec(),
        ch_step: ch.to_vec(),
    }
}
