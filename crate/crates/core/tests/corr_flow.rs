use evdecomp::corr::{
    argmax_flow, build_correlation, extract_features, iterative_refine, pool_correlation,
    FeatureGrid, FeaturePyramid, DEFAULT_BETA,
};
use evdecomp::grid::{FlowField, Grid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(w: usize, h: usize, seed: u64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h).map(|_| rng.random_range(0.1..0.9)).collect();
    Grid::new(w, h, 1, data).unwrap()
}

/// `dst(x, y) = src(x - dx, y - dy)`, so content moves by `(dx, dy)`.
fn shifted(src: &Grid, dx: isize, dy: isize) -> Grid {
    Grid::from_fn(src.width(), src.height(), 1, |x, y, _| {
        src.get_clamped(x as isize - dx, y as isize - dy, 0)
    })
}

fn smooth(x: f64, y: f64) -> f64 {
    use std::f64::consts::PI;
    0.5 + 0.15 * (2.0 * PI * x / 6.0).sin()
        + 0.15 * (2.0 * PI * y / 5.0).sin()
        + 0.1 * (2.0 * PI * (x + y) / 17.0).sin()
}

#[test]
fn correlation_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rand_grid = || {
        let d: Vec<f64> = (0..4 * 4 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureGrid::new(4, 4, 8, d).unwrap()
    };
    let (f1, f2) = (rand_grid(), rand_grid());
    let c = build_correlation(&f1, &f2).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                for l in 0..4 {
                    let mut s = 0.0;
                    for h in 0..8 {
                        s += f1.descriptor(j, i)[h] * f2.descriptor(l, k)[h];
                    }
                    assert_eq!(c.get(i, j, k, l), s);
                }
            }
        }
    }
    let cff = build_correlation(&f1, &f1).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let d = f1.descriptor(j, i);
            let n: f64 = d.iter().map(|v| v * v).sum();
            assert!((cff.get(i, j, i, j) - n).abs() < 1e-12);
        }
    }
}

#[test]
fn orthogonal_descriptors_give_identity_pattern() {
    let mut d = vec![0.0; 4 * 4];
    for p in 0..4 {
        d[p * 4 + p] = 1.0;
    }
    let f = FeatureGrid::new(2, 2, 4, d).unwrap();
    let c = build_correlation(&f, &f).unwrap();
    for p in 0..4 {
        for q in 0..4 {
            let expected = if p == q { 1.0 } else { 0.0 };
            assert_eq!(c.get(p / 2, p % 2, q / 2, q % 2), expected);
        }
    }
}

#[test]
fn pooling_matches_block_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d: Vec<f64> = (0..6 * 4 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = FeatureGrid::new(6, 4, 3, d).unwrap();
    let c = build_correlation(&f, &f).unwrap();
    let p = pool_correlation(&c, 3).unwrap();
    assert_eq!(p.levels()[0], c);
    let l1 = &p.levels()[1];
    assert_eq!(l1.dims(), (4, 6, 2, 3));
    for (i, j, k, l) in [(0, 0, 0, 0), (3, 5, 1, 2), (2, 1, 1, 0)] {
        let mean = (c.get(i, j, 2 * k, 2 * l)
            + c.get(i, j, 2 * k, 2 * l + 1)
            + c.get(i, j, 2 * k + 1, 2 * l)
            + c.get(i, j, 2 * k + 1, 2 * l + 1))
            / 4.0;
        assert!((l1.get(i, j, k, l) - mean).abs() < 1e-15);
    }
    assert_eq!(p.levels()[2].dims(), (4, 6, 1, 1));
    assert!(pool_correlation(&c, 4).is_err());
}

#[test]
fn argmax_recovers_integer_shift() {
    let a = noise(32, 32, 1);
    let b = shifted(&a, 3, -2);
    let f1 = extract_features(&a, 2).unwrap();
    let f2 = extract_features(&b, 2).unwrap();
    let m = argmax_flow(&build_correlation(&f1, &f2).unwrap(), 4);
    let margin = 4 + 2;
    let mut checked = 0;
    for y in margin..32 - margin {
        for x in margin..32 - margin {
            let i = y * 32 + x;
            assert!(m.valid[i]);
            assert_eq!(m.flow.get(x, y), (3.0, -2.0), "pixel {x},{y}");
            checked += 1;
        }
    }
    assert!(checked > 300);
    assert!(m.score.iter().all(|&s| s <= 1.0 + 1e-6));
}

#[test]
fn descriptors_are_translation_covariant() {
    let a = noise(20, 20, 4);
    let b = shifted(&a, 2, 1);
    let fa = extract_features(&a, 1).unwrap();
    let fb = extract_features(&b, 1).unwrap();
    for y in 3..17 {
        for x in 3..16 {
            assert_eq!(fa.descriptor(x, y), fb.descriptor(x + 2, y + 1));
        }
    }
}

#[test]
fn truth_init_is_stable() {
    let a = noise(32, 32, 5);
    let b = shifted(&a, 2, 1);
    let p = FeaturePyramid::new(extract_features(&a, 3).unwrap(), extract_features(&b, 3).unwrap(), 3).unwrap();
    let truth = FlowField::uniform(32, 32, 2.0, 1.0);
    let r = iterative_refine(&truth, &p, 3, 2, DEFAULT_BETA).unwrap();
    for y in 8..24 {
        for x in 8..24 {
            let (u, v) = r.flow.get(x, y);
            assert!((u - 2.0).hypot(v - 1.0) < 0.1, "{x},{y}: {u},{v}");
        }
    }
}

#[test]
fn refine_resolves_half_pixel_shift() {
    let a = Grid::from_fn(40, 40, 1, |x, y, _| smooth(x as f64, y as f64));
    let b = Grid::from_fn(40, 40, 1, |x, y, _| smooth(x as f64 - 0.5, y as f64));
    let f1 = extract_features(&a, 3).unwrap();
    let f2 = extract_features(&b, 3).unwrap();
    let seed = argmax_flow(&build_correlation(&f1, &f2).unwrap(), 3).flow;
    let p = FeaturePyramid::new(f1, f2, 3).unwrap();
    let r = iterative_refine(&seed, &p, 8, 2, DEFAULT_BETA).unwrap();
    let mut worst: f64 = 0.0;
    for y in 10..30 {
        for x in 10..30 {
            let (u, v) = r.flow.get(x, y);
            worst = worst.max((u - 0.5).hypot(v));
        }
    }
    assert!(worst < 0.25, "worst error {worst}");
}

#[test]
fn refinement_updates_are_bounded() {
    let a = noise(24, 24, 6);
    let b = shifted(&a, -1, 2);
    let p = FeaturePyramid::new(extract_features(&a, 1).unwrap(), extract_features(&b, 1).unwrap(), 2).unwrap();
    let r = iterative_refine(&FlowField::zeros(24, 24), &p, 4, 2, DEFAULT_BETA).unwrap();
    // level 1 may jump 2 nodes of 2 pixels, level 0 another 2 pixels
    let per_axis = 2.0 * 2.0 + 2.0;
    let bound = f64::hypot(per_axis, per_axis);
    assert!(r.max_update.iter().all(|&m| m <= bound + 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn descriptors_ignore_brightness_offset(seed in 0u64..1000, offset in -0.05f64..0.05) {
        let a = noise(10, 10, seed);
        let b = a.map(|v| v + offset);
        let fa = extract_features(&a, 1).unwrap();
        let fb = extract_features(&b, 1).unwrap();
        for (x, y) in fa.data().iter().zip(fb.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn self_matching_is_zero_flow(seed in 0u64..1000) {
        let a = noise(9, 8, seed);
        let f = extract_features(&a, 1).unwrap();
        let m = argmax_flow(&build_correlation(&f, &f).unwrap(), 2);
        for i in 0..72 {
            if m.valid[i] {
                prop_assert_eq!((m.flow.u()[i], m.flow.v()[i]), (0.0, 0.0));
            }
        }
    }
}
