use consensus_attack::constraints::{LatentSet, Norm};
use consensus_attack::ensemble::{run_cbo, CboConfig};
use consensus_attack::estimators::{run_ch_nes, ChNesConfig, EstimatorKind};
use consensus_attack::rng::rng_from_seed;
use consensus_attack::{Budgets, Domain, FunctionObjective};
use ndarray::{Array1, ArrayView1};
use rand::Rng;

fn target(d: usize, seed: u64) -> Array1<f64> {
    let mut rng = rng_from_seed(seed.wrapping_mul(7919));
    Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5))
}

fn distance(a: &[f64], b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn cbo_consensus_reaches_quadratic_minimizer() {
    let d = 10;
    let domain = Domain::new(LatentSet::Ball { norm: Norm::Linf, radius: 1.0 }, d);
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..20u64 {
        let star = target(d, seed);
        let f = |s: ArrayView1<'_, f64>| (&s - &star).mapv(|v| v * v).sum();
        let mut objective = FunctionObjective::new(d, u64::MAX, f);
        let record = run_cbo(&mut objective, &domain, &CboConfig::default(), Budgets::iterations(300), seed).unwrap();
        assert_eq!(record.iterations, 300);
        let consensus = record.trajectory.last().expect("non-empty path");
        let err = distance(consensus, &star);
        if err <= 1e-2 {
            hits += 1;
        } else {
            misses.push((seed, err));
        }
    }
    assert!(hits >= 18, "{hits}/20 within 1e-2, misses {misses:?}");
}

#[test]
fn ch_and_nes_iterates_reach_quadratic_minimizer() {
    let d = 10;
    let domain = Domain::new(LatentSet::Ball { norm: Norm::Linf, radius: 2.0 }, d);
    let config = ChNesConfig::default();
    for kind in [EstimatorKind::Nes, EstimatorKind::Ch { alpha: 10.0 }] {
        let mut hits = 0;
        let mut misses = Vec::new();
        for seed in 0..20u64 {
            let star = target(d, seed);
            let f = |s: ArrayView1<'_, f64>| (&s - &star).mapv(|v| v * v).sum();
            let mut objective = FunctionObjective::new(d, u64::MAX, f);
            let record = run_ch_nes(&mut objective, &domain, &config, kind, Budgets::iterations(500), seed).unwrap();
            assert_eq!(record.iterations, 500);
            let err = distance(record.trajectory.last().expect("non-empty path"), &star);
            if err <= 5e-2 {
                hits += 1;
            } else {
                misses.push((seed, err));
            }
        }
        assert!(hits >= 18, "{kind:?}: {hits}/20 within 5e-2, misses {misses:?}");
    }
}
