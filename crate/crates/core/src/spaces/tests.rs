use super::*;
use crate::constraints::Norm;
use crate::rng::rng_from_seed;
use ndarray::{array, Array1};
use proptest::prelude::*;
use rand::Rng;

fn linf(a: &ImageTensor, b: &ImageTensor) -> f64 {
    a.array()
        .iter()
        .zip(b.array().iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn l2(a: &ImageTensor, b: &ImageTensor) -> f64 {
    a.array()
        .iter()
        .zip(b.array().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn random_image(shape: [usize; 3], seed: u64) -> ImageTensor {
    let mut rng = rng_from_seed(seed);
    ImageTensor::new(Array3::from_shape_fn(shape, |_| rng.random::<f64>())).unwrap()
}

fn linf_budget(eps: f64) -> Budget {
    Budget::new(Norm::Linf, eps).unwrap()
}

#[test]
fn clip_examples() {
    let z = array![[[-0.2, 0.4, 1.7]]];
    let out = clip_r(z).unwrap();
    assert_eq!(out.to_flat(), vec![0.0, 0.4, 1.0]);
    assert_eq!(clip_r(out.array().clone()).unwrap(), out);
    assert!(clip_r(array![[[f64::NAN]]]).is_err());
}

#[test]
fn direct_examples() {
    let x = ImageTensor::filled([1, 2, 2], 0.5).unwrap();
    assert_eq!(apply_direct(Array1::zeros(4).view(), &x).unwrap(), x);
    let ones = apply_direct(Array1::ones(4).view(), &x).unwrap();
    assert!(ones.to_flat().iter().all(|&v| v == 1.0));
    assert!(apply_direct(Array1::zeros(3).view(), &x).is_err());
}

#[test]
fn lowres_tiles_on_four_by_four() {
    let x = ImageTensor::filled([1, 4, 4], 0.0).unwrap();
    let s = array![0.1, 0.2, 0.3, 0.4];
    let out = apply_lowres(s.view(), (2, 2), &x).unwrap();
    // Tile (i, j) covers rows 2i..2i+2 and columns 2j..2j+2.
    let expected = [
        [0.1, 0.1, 0.2, 0.2],
        [0.1, 0.1, 0.2, 0.2],
        [0.3, 0.3, 0.4, 0.4],
        [0.3, 0.3, 0.4, 0.4],
    ];
    for (i, row) in expected.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert_eq!(out.array()[[0, i, j]], *v);
        }
    }
    assert!(apply_lowres(s.view(), (5, 2), &ImageTensor::filled([1, 4, 4], 0.0).unwrap()).is_err());
}

#[test]
fn full_resolution_lowres_equals_direct() {
    let x = random_image([2, 3, 5], 1);
    let mut rng = rng_from_seed(2);
    let s = Array1::from_shape_fn(30, |_| rng.random_range(-0.3..0.3));
    assert_eq!(apply_lowres(s.view(), (3, 5), &x).unwrap(), apply_direct(s.view(), &x).unwrap());
}

#[test]
fn gamma_examples() {
    assert_eq!(pixel_gamma((0.5, 0.5), 224, 224).unwrap(), (112, 112));
    assert_eq!(pixel_gamma((0.0, 0.0), 224, 224).unwrap(), (0, 0));
    assert_eq!(pixel_gamma((1.0, 1.0), 32, 32).unwrap(), (31, 31));
    assert!(pixel_gamma((1.2, 0.0), 32, 32).is_err());
}

#[test]
fn pixel_examples() {
    let x = ImageTensor::filled([3, 4, 4], 0.0).unwrap();
    let zero = array![0.0, 0.0, 0.0, 0.3, 0.7];
    assert_eq!(apply_pixels(zero.view(), 1, &x).unwrap(), x);

    let s = array![0.3, 0.4, 0.5, 0.0, 0.0];
    let out = apply_pixels(s.view(), 1, &x).unwrap();
    assert_eq!(out.array()[[0, 0, 0]], 0.3);
    assert_eq!(out.array()[[1, 0, 0]], 0.4);
    assert_eq!(out.array()[[2, 0, 0]], 0.5);
    assert_eq!(out.to_flat().iter().filter(|v| **v != 0.0).count(), 3);

    // Two tuples on the same pixel add up before clipping.
    let s = array![0.2, 0.3, 0.6, 0.5, 0.5, 0.1, 0.3, 0.6, 0.5, 0.5];
    let out = apply_pixels(s.view(), 2, &x).unwrap();
    assert!((out.array()[[0, 2, 2]] - 0.3).abs() < 1e-15);
    assert!((out.array()[[1, 2, 2]] - 0.6).abs() < 1e-15);
    assert_eq!(out.array()[[2, 2, 2]], 1.0);

    assert!(apply_pixels(array![0.1, 0.2].view(), 1, &x).is_err());
}

#[test]
fn dct_space_dimension_for_28_modes() {
    let space = AttackSpace::new(SpaceKind::Dct { modes: 28 }, [3, 224, 224], Budget::new(Norm::L2, 3.0).unwrap()).unwrap();
    assert_eq!(space.latent_dim(), 2352);
}

#[test]
fn latent_dims_follow_kind() {
    let b = linf_budget(0.05);
    let shape = [3, 8, 8];
    let dims = [
        (SpaceKind::Direct, 192),
        (SpaceKind::LowRes { height: 2, width: 4 }, 24),
        (SpaceKind::Pixel { count: 2 }, 10),
        (SpaceKind::Dct { modes: 3 }, 27),
        (SpaceKind::Square { count: 4, stripes_seed: 0 }, 12),
    ];
    for (kind, dim) in dims {
        assert_eq!(AttackSpace::new(kind, shape, b).unwrap().latent_dim(), dim);
    }
    assert!(AttackSpace::new(SpaceKind::Dct { modes: 9 }, shape, b).is_err());
    assert!(AttackSpace::new(SpaceKind::LowRes { height: 9, width: 1 }, shape, b).is_err());
}

fn square_ctx(count: usize, shape: [usize; 3], eps: f64) -> SquareContext {
    SquareContext::sample(count, shape, eps, 9, &mut rng_from_seed(4))
}

#[test]
fn stripes_are_vertical_and_signed() {
    let img = stripes_image([3, 6, 5], 0.05, 1);
    for c in 0..3 {
        for w in 0..5 {
            let top = img[[c, 0, w]];
            assert!(top == 0.05 || top == -0.05);
            for h in 1..6 {
                assert_eq!(img[[c, h, w]], top);
            }
        }
    }
    assert_eq!(img, stripes_image([3, 6, 5], 0.05, 1));
}

#[test]
fn zero_side_square_is_single_pixel() {
    let shape = [1, 8, 8];
    let eps = 0.1;
    let x = ImageTensor::filled(shape, 0.5).unwrap();
    let mut ctx = square_ctx(1, shape, eps);
    ctx.stripes.fill(0.0);
    let out = apply_squares(array![0.0, 0.3, 0.6].view(), &x, &ctx).unwrap();
    let changed: Vec<_> = out
        .array()
        .indexed_iter()
        .filter(|(_, v)| **v != 0.5)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(changed, vec![(0, 2, 4)]);
}

#[test]
fn saturated_square_covers_everything() {
    let shape = [2, 5, 5];
    let eps = 0.05;
    let x = ImageTensor::filled(shape, 0.5).unwrap();
    let ctx = square_ctx(1, shape, eps);
    let out = apply_squares(array![1.0, 0.2, 0.9].view(), &x, &ctx).unwrap();
    let expected = (&ctx.stripes + &Array3::from_shape_fn(shape, |(c, _, _)| ctx.zeta[[0, c]]))
        .mapv(|v| 0.5 + v.clamp(-eps, eps));
    for (a, b) in out.array().iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn neutral_latents_reproduce_input() {
    let x = random_image([3, 8, 8], 7);
    let b = linf_budget(0.05);
    for kind in [
        SpaceKind::Direct,
        SpaceKind::LowRes { height: 4, width: 4 },
        SpaceKind::Pixel { count: 3 },
        SpaceKind::Dct { modes: 4 },
    ] {
        let space = AttackSpace::new(kind, [3, 8, 8], b).unwrap();
        let ctx = space.context(&mut rng_from_seed(0));
        let out = space.apply(space.neutral_latent().view(), &x, &ctx).unwrap();
        let err = linf(&out, &x);
        assert!(err < 1e-12, "{kind:?}: {err}");
    }
}

#[test]
fn square_neutral_latent_leaves_only_stripes() {
    let x = ImageTensor::filled([1, 4, 4], 0.5).unwrap();
    let space = AttackSpace::new(SpaceKind::Square { count: 2, stripes_seed: 3 }, [1, 4, 4], linf_budget(0.1)).unwrap();
    let ctx = space.context(&mut rng_from_seed(0));
    // Neutral box latent is the midpoint: two squares of half side centered.
    let out = space.apply(Array1::from_elem(6, 0.0).view(), &x, &ctx).unwrap();
    assert!(out.array().iter().all(|v| (v - 0.5).abs() <= 0.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn direct_is_one_lipschitz(seed in 0u64..1000, scale in 0.0f64..2.0) {
        let x = random_image([2, 3, 3], seed);
        let mut rng = rng_from_seed(seed + 1);
        let s = Array1::from_shape_fn(18, |_| rng.random_range(-scale..=scale));
        let out = apply_direct(s.view(), &x).unwrap();
        let s_inf = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(linf(&out, &x) <= s_inf + 1e-15);
    }

    #[test]
    fn lowres_perturbation_is_tile_constant(seed in 0u64..1000) {
        let mut rng = rng_from_seed(seed);
        let (h, w, hl, wl) = (7, 9, 3, 4);
        let s = Array1::from_shape_fn(2 * hl * wl, |_| rng.random_range(-1.0..1.0));
        let delta = upsample_nearest(s.view(), 2, (hl, wl), (h, w)).unwrap();
        for c in 0..2 {
            for i in 0..h {
                for j in 0..w {
                    prop_assert_eq!(delta[[c, i, j]], s[(c * hl + i * hl / h) * wl + j * wl / w]);
                }
            }
        }
    }

    #[test]
    fn pixel_attack_is_sparse(seed in 0u64..1000, count in 1usize..5) {
        let x = random_image([3, 6, 6], seed);
        let mut rng = rng_from_seed(seed + 7);
        let s = Array1::from_shape_fn(count * 5, |_| rng.random::<f64>());
        let out = apply_pixels(s.view(), count, &x).unwrap();
        let mut sites = std::collections::BTreeSet::new();
        for ((c, i, j), v) in out.array().indexed_iter() {
            if *v != x.array()[[c, i, j]] {
                sites.insert((i, j));
            }
        }
        prop_assert!(sites.len() <= count);
    }

    #[test]
    fn dct_perturbation_is_norm_bounded(seed in 0u64..1000) {
        let x = random_image([3, 8, 8], seed);
        let mut rng = rng_from_seed(seed + 3);
        let s = Array1::from_shape_fn(3 * 16, |_| rng.random_range(-1.0..1.0));
        let out = apply_dct(s.view(), 4, &x, &Dct2::new(8, 8)).unwrap();
        let sn = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(l2(&out, &x) <= sn + 1e-6);
    }

    #[test]
    fn squares_respect_linf_budget(seed in 0u64..1000, count in 1usize..6) {
        let x = random_image([3, 7, 7], seed);
        let eps = 0.05;
        let ctx = SquareContext::sample(count, [3, 7, 7], eps, seed, &mut rng_from_seed(seed));
        let mut rng = rng_from_seed(seed + 11);
        let s = Array1::from_shape_fn(3 * count, |_| rng.random::<f64>());
        let out = apply_squares(s.view(), &x, &ctx).unwrap();
        for (a, b) in out.array().iter().zip(x.array().iter()) {
            prop_assert!((a - b).abs() <= eps);
        }
    }

    #[test]
    fn queried_images_meet_budget(seed in 0u64..500, kind_idx in 0usize..5, l2_norm in any::<bool>()) {
        let shape = [3, 6, 6];
        let kind = [
            SpaceKind::Direct,
            SpaceKind::LowRes { height: 3, width: 2 },
            SpaceKind::Pixel { count: 2 },
            SpaceKind::Dct { modes: 3 },
            SpaceKind::Square { count: 3, stripes_seed: 5 },
        ][kind_idx];
        let norm = if l2_norm && kind_idx != 4 { Norm::L2 } else { Norm::Linf };
        let eps = if norm == Norm::L2 { 0.7 } else { 0.05 };
        let budget = Budget::new(norm, eps).unwrap();
        let space = AttackSpace::new(kind, shape, budget).unwrap();
        let x = random_image(shape, seed);
        let mut rng = rng_from_seed(seed + 99);
        let ctx = space.context(&mut rng);
        // Deliberately infeasible latent: far outside its set.
        let s = Array1::from_shape_fn(space.latent_dim(), |_| rng.random_range(-3.0..3.0));
        let out = space.query_image(s.view(), &x, &ctx).unwrap();
        let flat_out = Array1::from(out.to_flat());
        let flat_x = Array1::from(x.to_flat());
        let d = budget.distance(flat_out.view(), flat_x.view());
        match norm {
            Norm::Linf => prop_assert!(d <= eps),
            Norm::L2 => prop_assert!(d <= eps + 1e-9),
        }
        prop_assert!(out.to_flat().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
