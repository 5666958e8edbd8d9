use super::*;
use rand::Rng;
use crate::constraints::{LatentSet, Norm};
use crate::objective::FunctionObjective;
use ndarray::array;
use proptest::prelude::*;

fn random_matrix(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn equal_values_give_the_mean() {
    let (c, w) = compute_consensus(array![[1.0, 0.0], [0.0, 1.0]].view(), array![2.0, 2.0].view(), 5.0).unwrap();
    assert_eq!(c, array![0.5, 0.5]);
    assert_eq!(w.weights, array![0.5, 0.5]);
    assert_eq!(w.alpha, 5.0);
}

#[test]
fn large_gap_selects_the_best() {
    let (c, _) = compute_consensus(array![[1.0, 0.0], [0.0, 1.0]].view(), array![0.0, 100.0].view(), 10.0).unwrap();
    assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12);
}

#[test]
fn matches_direct_softmax_mean() {
    let x = random_matrix(3, 4, 1);
    let v = [0.3, 0.1, 0.7];
    let (c, _) = compute_consensus(x.view(), ArrayView1::from(&v), 2.0).unwrap();
    // Naive evaluation without any stabilization.
    let e: Vec<f64> = v.iter().map(|vi| (-2.0 * vi).exp()).collect();
    let z: f64 = e.iter().sum();
    for j in 0..4 {
        let expected: f64 = (0..3).map(|i| e[i] / z * x[[i, j]]).sum();
        assert!((c[j] - expected).abs() < 1e-14);
    }
}

#[test]
fn consensus_rejects_bad_input() {
    let x = random_matrix(2, 2, 0);
    assert!(matches!(
        compute_consensus(x.view(), array![0.0, f64::NAN].view(), 1.0),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        compute_consensus(Array2::zeros((0, 2)).view(), Array1::zeros(0).view(), 1.0),
        Err(Error::EmptyEnsemble)
    ));
    assert!(compute_consensus(x.view(), array![0.0, 1.0].view(), 0.0).is_err());
}

#[test]
fn survives_huge_alpha_times_range() {
    let x = random_matrix(5, 3, 2);
    let v = array![0.0, 1.0, 2.0, 3.0, 4.0];
    let (c, w) = compute_consensus(x.view(), v.view(), 2.5e5).unwrap();
    assert!(c.iter().all(|v| v.is_finite()));
    assert!((w.weights.sum() - 1.0).abs() < 1e-12);
    assert!((&c - &x.row(0)).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn ess_of_uniform_and_degenerate_weights() {
    assert!((effective_sample_size(array![0.25, 0.25, 0.25, 0.25].view()) - 4.0).abs() < 1e-12);
    assert_eq!(effective_sample_size(array![1.0, 0.0, 0.0].view()), 1.0);
}

#[test]
fn schedule_saturates_for_equal_values() {
    let v = Array1::from_elem(10, 3.0);
    assert_eq!(schedule_alpha(v.view(), 0.1, DEFAULT_ALPHA_BOUNDS).unwrap(), 1e8);
}

#[test]
fn full_ess_target_gives_minimum_alpha() {
    let v = array![0.0, 2.0, 5.0, 1.0];
    assert_eq!(schedule_alpha(v.view(), 1.0, DEFAULT_ALPHA_BOUNDS).unwrap(), 1e-4);
}

#[test]
fn two_particle_schedule_matches_closed_form_root() {
    // Independent oracle: plain bisection on α of (1+e^{-α})² / (1+e^{-2α}) = 1.5.
    let j = |a: f64| (1.0 + (-a).exp()).powi(2) / (1.0 + (-2.0 * a).exp());
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if j(mid) > 1.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = schedule_alpha(array![0.0, 1.0].view(), 0.75, DEFAULT_ALPHA_BOUNDS).unwrap();
    assert!((alpha - lo).abs() < 1e-9 * lo, "{alpha} vs {lo}");
}

#[test]
fn schedule_rejects_bad_parameters() {
    let v = array![0.0, 1.0];
    assert!(schedule_alpha(v.view(), 0.0, DEFAULT_ALPHA_BOUNDS).is_err());
    assert!(schedule_alpha(v.view(), 1.5, DEFAULT_ALPHA_BOUNDS).is_err());
    assert!(schedule_alpha(v.view(), 0.5, (2.0, 1.0)).is_err());
    assert!(schedule_alpha(array![f64::INFINITY].view(), 0.5, DEFAULT_ALPHA_BOUNDS).is_err());
}

#[test]
fn moved_particles_keep_stale_values() {
    let mut e = Ensemble::new(array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).unwrap();
    assert_eq!(e.evaluated().1.len(), 0);
    e.set_value(2, 5.0);
    e.set_value(0, 3.0);
    assert!(e.is_fresh(0) && !e.is_fresh(1));
    e.set_particles(array![[9.0, 9.0], [8.0, 8.0], [7.0, 7.0]]).unwrap();
    assert!(!e.is_fresh(0) && !e.is_fresh(2));
    let (points, values) = e.evaluated();
    assert_eq!(points, array![[9.0, 9.0], [7.0, 7.0]]);
    assert_eq!(values, array![3.0, 5.0]);
    assert_eq!(e.values(), &[Some(3.0), None, Some(5.0)]);
}

#[test]
fn full_batch_is_every_index() {
    let mut b = MiniBatcher::new(4, 4).unwrap();
    let mut batch = b.next_batch(&mut rng_from_seed(0));
    batch.sort();
    assert_eq!(batch, vec![0, 1, 2, 3]);
}

#[test]
fn consecutive_batches_partition_the_ensemble() {
    let mut rng = rng_from_seed(3);
    let mut b = MiniBatcher::new(4, 2).unwrap();
    let mut all = b.next_batch(&mut rng);
    all.extend(b.next_batch(&mut rng));
    all.sort();
    assert_eq!(all, vec![0, 1, 2, 3]);

    let mut b = MiniBatcher::new(50, 10).unwrap();
    for _ in 0..3 {
        let mut epoch: Vec<usize> = (0..5).flat_map(|_| b.next_batch(&mut rng)).collect();
        epoch.sort();
        assert_eq!(epoch, (0..50).collect::<Vec<_>>());
    }
}

#[test]
fn ragged_epochs_top_up_without_duplicates() {
    let mut rng = rng_from_seed(9);
    let mut b = MiniBatcher::new(5, 2).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..3 {
        let batch = b.next_batch(&mut rng);
        assert_eq!(batch.len(), 2);
        assert_ne!(batch[0], batch[1]);
        seen.extend(batch);
    }
    assert_eq!(seen.len(), 5);
    for _ in 0..50 {
        let batch = b.next_batch(&mut rng);
        assert_ne!(batch[0], batch[1]);
    }
    assert!(MiniBatcher::new(3, 4).is_err());
    assert!(MiniBatcher::new(3, 0).is_err());
}

#[test]
fn batches_are_seed_deterministic() {
    let run = |seed| {
        let mut rng = rng_from_seed(seed);
        let mut b = MiniBatcher::new(7, 3).unwrap();
        (0..10).map(|_| b.next_batch(&mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(run(5), run(5));
}

#[test]
fn zero_drift_silences_noise() {
    let mut rng = rng_from_seed(0);
    assert_eq!(anisotropic_noise(Array2::zeros((3, 4)).view(), 1.0, &mut rng), Array2::<f64>::zeros((3, 4)));
    assert_eq!(isotropic_noise(Array2::zeros((3, 4)).view(), 1.0, &mut rng), Array2::<f64>::zeros((3, 4)));
}

#[test]
fn anisotropic_noise_masks_components() {
    let mut rng = rng_from_seed(1);
    for _ in 0..100 {
        let n = anisotropic_noise(array![[3.0, 0.0]].view(), 1.0, &mut rng);
        assert_eq!(n[[0, 1]], 0.0);
    }
}

#[test]
fn anisotropic_noise_variance() {
    let mut rng = rng_from_seed(2);
    let drift = Array2::from_elem((100_000, 1), 2.0);
    let n = anisotropic_noise(drift.view(), 0.25, &mut rng);
    let m = n.len() as f64;
    let var = n.iter().map(|v| v * v).sum::<f64>() / m;
    // Standard error of a Gaussian sample variance: σ²·√(2/m).
    let se = (2.0 / m).sqrt();
    assert!((var - 1.0).abs() < 3.0 * se, "{var}");
}

#[test]
fn isotropic_noise_scales_by_row_norm() {
    let mut rng = rng_from_seed(4);
    let drift = Array2::from_shape_fn((50_000, 2), |(_, j)| if j == 0 { 3.0 } else { 4.0 });
    let n = isotropic_noise(drift.view(), 1.0, &mut rng);
    let var = n.column(1).iter().map(|v| v * v).sum::<f64>() / 50_000.0;
    assert!((var - 25.0).abs() < 3.0 * 25.0 * (2.0 / 50_000f64).sqrt());
}

fn wide_domain(d: usize) -> Domain {
    Domain::new(LatentSet::Ball { norm: Norm::Linf, radius: 10.0 }, d)
}

fn config(tau: f64, lambda: f64, sigma: f64) -> CboConfig {
    CboConfig { tau, lambda, sigma, ..CboConfig::default() }
}

#[test]
fn infinite_drift_collapses_onto_consensus() {
    let mut x = random_matrix(6, 3, 5);
    let c = array![0.1, -0.2, 0.3];
    let cfg = config(0.5, 2.0, 0.0);
    cbo_step(&mut x, c.view(), Array2::zeros((6, 3)).view(), &cfg, &wide_domain(3));
    for row in x.rows() {
        assert_eq!(row, c);
    }
}

#[test]
fn overshooting_drift_step() {
    let mut x = array![[1.0, 0.0]];
    cbo_step(&mut x, array![0.0, 0.0].view(), Array2::zeros((1, 2)).view(), &config(1.3, 1.0, 0.0), &wide_domain(2));
    assert!((x[[0, 0]] + 0.3).abs() < 1e-15);
    assert_eq!(x[[0, 1]], 0.0);
}

#[test]
fn no_drift_no_noise_leaves_particles() {
    let mut x = random_matrix(4, 2, 6);
    let before = x.clone();
    cbo_step(&mut x, array![5.0, 5.0].view(), Array2::zeros((4, 2)).view(), &config(1.3, 0.0, 0.0), &wide_domain(2));
    assert_eq!(x, before);
}

#[test]
fn step_projects_onto_the_feasible_set() {
    let domain = Domain::new(LatentSet::Ball { norm: Norm::Linf, radius: 0.1 }, 2);
    let mut x = array![[0.05, 0.05]];
    cbo_step(&mut x, array![0.0, 0.0].view(), array![[1.0, -1.0]].view(), &config(1.0, 0.0, 1.0), &domain);
    assert_eq!(x, array![[0.1, -0.1]]);
}

fn sphere(center: Array1<f64>) -> impl Fn(ArrayView1<'_, f64>) -> f64 + Sync + Send {
    move |x| (&x - &center).mapv(|v| v * v).sum()
}

#[test]
fn zero_budget_issues_no_queries() {
    let mut obj = FunctionObjective::new(3, 0, sphere(Array1::zeros(3)));
    let rec = run_cbo(&mut obj, &wide_domain(3), &CboConfig::default(), Budgets::queries(0), 1).unwrap();
    assert!(!rec.success);
    assert_eq!(rec.queries_used, 0);
    assert_eq!(rec.iterations, 0);
}

#[test]
fn cbo_respects_query_budget_and_batches() {
    let mut obj = FunctionObjective::new(4, 95, sphere(Array1::from_elem(4, 0.5)));
    let rec = run_cbo(&mut obj, &wide_domain(4), &CboConfig::default(), Budgets::queries(95), 2).unwrap();
    assert_eq!(rec.queries_used, 95);
    assert_eq!(rec.iterations, 10);
    assert_eq!(rec.trajectory.len(), 9);
    let log = obj.ledger().per_iteration();
    assert!(log.iter().enumerate().all(|(k, &(i, used))| i == k && used == 10 * (k as u64 + 1)));
}

#[test]
fn first_batch_success_stops_immediately() {
    let mut obj = FunctionObjective::new(2, 1000, |_x: ArrayView1<f64>| -1.0);
    let rec = run_cbo(&mut obj, &wide_domain(2), &CboConfig::default(), Budgets::queries(1000), 3).unwrap();
    assert!(rec.success);
    assert_eq!(rec.queries_to_success, Some(1));
    assert_eq!(rec.queries_used, 10);
}

#[test]
fn cbo_is_seed_deterministic() {
    let run = |seed| {
        let mut obj = FunctionObjective::new(5, 2000, sphere(Array1::from_elem(5, 0.3)));
        run_cbo(&mut obj, &wide_domain(5), &CboConfig::default(), Budgets::queries(2000), seed).unwrap()
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11).trajectory, run(12).trajectory);
}

#[test]
fn parallel_and_sequential_objectives_agree() {
    let run = |exec| {
        let mut obj = FunctionObjective::new(5, 500, sphere(Array1::from_elem(5, 0.3))).with_execution(exec);
        run_cbo(&mut obj, &wide_domain(5), &CboConfig::default(), Budgets::queries(500), 4).unwrap()
    };
    assert_eq!(run(Execution::Parallel), run(Execution::Sequential));
}

#[test]
fn rejects_invalid_configs() {
    let mut obj = FunctionObjective::new(2, 10, sphere(Array1::zeros(2)));
    let bad = [
        CboConfig { batch_size: 60, ..CboConfig::default() },
        CboConfig { tau: 0.0, ..CboConfig::default() },
        CboConfig { sigma: -1.0, ..CboConfig::default() },
        CboConfig { alpha: AlphaMode::Fixed { alpha: 0.0 }, ..CboConfig::default() },
        CboConfig { noise: crate::noise::NoiseKind::Dct, ..CboConfig::default() },
    ];
    for cfg in bad {
        assert!(run_cbo(&mut obj, &wide_domain(2), &cfg, Budgets::queries(10), 0).is_err(), "{cfg:?}");
    }
}

#[test]
fn ch_step_vanishes_for_constant_functions() {
    let c = array![0.5, -1.0, 2.0];
    let even = ch_expected_step(|_x| 4.0, c.view(), 0.3, 7.0, 10_000, 1, Execution::Sequential);
    assert_eq!(even, Array1::<f64>::zeros(3));
}

#[test]
fn ch_step_for_linear_function() {
    // E[e^{-aξ}ξ] / E[e^{-aξ}] = -a for ξ ~ N(0,1), a = ασ̃, so the step is -ασ̃².
    let (alpha, st, m) = (1.0, 0.1, 1_000_000);
    let step = ch_expected_step(|x| x[0], array![0.0].view(), st, alpha, m, 7, Execution::Parallel);
    let se = st / (m as f64).sqrt();
    assert!((step[0] + alpha * st * st).abs() < 3.0 * se, "{}", step[0]);
}

#[test]
fn expected_step_is_mode_independent() {
    let f = |x: ArrayView1<f64>| 0.5 * x.dot(&x);
    let c = array![1.0, -0.5];
    let a = ch_expected_step(f, c.view(), 0.05, 3.0, 50_000, 9, Execution::Parallel);
    let b = ch_expected_step(f, c.view(), 0.05, 3.0, 50_000, 9, Execution::Sequential);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_form_a_convex_combination(seed in 0u64..10_000, n in 1usize..12, alpha in 1e-3f64..1e3) {
        let x = random_matrix(n, 3, seed);
        let mut rng = rng_from_seed(seed ^ 0xABCD);
        let v = Array1::from_shape_fn(n, |_| rng.random_range(-5.0..5.0));
        let (c, w) = compute_consensus(x.view(), v.view(), alpha).unwrap();
        prop_assert!((w.weights.sum() - 1.0).abs() < 1e-12);
        prop_assert!(w.weights.iter().all(|&wi| (0.0..=1.0).contains(&wi)));
        for j in 0..3 {
            let col = x.column(j);
            let lo = col.fold(f64::INFINITY, |m, &v| m.min(v));
            let hi = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            prop_assert!(c[j] >= lo - 1e-12 && c[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn consensus_limits(seed in 0u64..10_000, n in 2usize..10) {
        let x = random_matrix(n, 4, seed);
        let mut rng = rng_from_seed(seed + 1);
        let mut v = Array1::from_shape_fn(n, |_| rng.random_range(1.0..2.0));
        let best = rng.random_range(0..n);
        v[best] = 0.0;
        // Gap ≥ 1, so α = 60 puts α·gap above 50.
        let (c, _) = compute_consensus(x.view(), v.view(), 60.0).unwrap();
        prop_assert!((&c - &x.row(best)).iter().all(|d| d.abs() < 1e-9));
        // α·range below 1e-12 gives the mean.
        let (c, _) = compute_consensus(x.view(), v.view(), 1e-13).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        prop_assert!((&c - &mean).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn shift_invariance_and_large_values(seed in 0u64..10_000, shift in -1e3f64..1e3) {
        let x = random_matrix(6, 3, seed);
        let mut rng = rng_from_seed(seed + 2);
        let v = Array1::from_shape_fn(6, |_| rng.random_range(0.0..1.0));
        let (a, _) = compute_consensus(x.view(), v.view(), 3.0).unwrap();
        let (b, _) = compute_consensus(x.view(), (&v + shift).view(), 3.0).unwrap();
        prop_assert!((&a - &b).iter().all(|d| d.abs() < 1e-9));
        let big = &v * 1e5;
        let (c, _) = compute_consensus(x.view(), big.view(), 10.0).unwrap();
        let min = big.fold(f64::INFINITY, |m, &v| m.min(v));
        let (d, _) = compute_consensus(x.view(), (&big - min).view(), 10.0).unwrap();
        prop_assert!(c.iter().all(|v| v.is_finite()));
        prop_assert!((&c - &d).iter().all(|e| e.abs() < 1e-9));
    }

    #[test]
    fn ess_is_monotone_and_hits_its_target(seed in 0u64..10_000, eta in 0.05f64..0.95) {
        let mut rng = rng_from_seed(seed);
        let v = Array1::from_shape_fn(10, |_| rng.random_range(0.0..1.0));
        let mut prev = f64::INFINITY;
        for k in -4..8 {
            let j = ess_at(v.view(), 10f64.powi(k));
            prop_assert!(j <= prev + 1e-9);
            prev = j;
        }
        let alpha = schedule_alpha(v.view(), eta, DEFAULT_ALPHA_BOUNDS).unwrap();
        let target = eta * 10.0;
        let lo = ess_at(v.view(), DEFAULT_ALPHA_BOUNDS.1);
        if target > lo {
            prop_assert!((ess_at(v.view(), alpha) - target).abs() <= 0.01 * target);
        } else {
            prop_assert_eq!(alpha, DEFAULT_ALPHA_BOUNDS.1);
        }
    }
}
