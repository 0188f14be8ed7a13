use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semstyle::colorspace::{LabColor, LabImage};
use semstyle::features::{
    contextual_features, global_features, pixelwise_features, FeatureConfig, FeatureExtractor,
    FeatureNormalizer, PoolingConfig, PoolingLayout, BRIGHTNESS_RANGE, CLIPPING_RANGE,
    EQUALIZATION_RANGE, PERCENTILE_RANGE,
};
use semstyle::semantics::{build_integral_stack, SemanticLabelMap};

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> SemanticLabelMap {
    SemanticLabelMap::new(w, h, (0..w * h).map(|_| rng.gen_range(0..n) as u8).collect()).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> LabImage {
    let pixels = (0..w * h)
        .map(|_| LabColor::new(rng.gen_range(0.0..100.0), rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)))
        .collect();
    LabImage::new(w, h, pixels).unwrap()
}

proptest! {
    #[test]
    fn context_matches_counting(seed in 0u64..10_000, lambda0 in 1usize..6, tau in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h, n) = (rng.gen_range(1..40), rng.gen_range(1..40), rng.gen_range(1..5));
        let map = random_map(&mut rng, w, h, n);
        let stack = build_integral_stack(&map, n).unwrap();
        let layout = PoolingLayout::new(tau, lambda0).unwrap();
        let (cx, cy) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let ctx = contextual_features(&stack, cx, cy, &layout);
        prop_assert_eq!(ctx.len(), layout.region_count() * n);
        for (r, rect) in layout.regions_at(cx, cy).iter().enumerate() {
            let mut counts = vec![0usize; n];
            let mut area = 0usize;
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    if rect.contains(x, y) {
                        counts[map.get(x as usize, y as usize) as usize] += 1;
                        area += 1;
                    }
                }
            }
            for c in 0..n {
                let expected = if area == 0 { 0.0 } else { counts[c] as f64 / area as f64 };
                prop_assert!((ctx[r * n + c] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn context_block_sums(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h, n) = (rng.gen_range(1..80), rng.gen_range(1..80), rng.gen_range(1..6));
        let map = random_map(&mut rng, w, h, n);
        let stack = build_integral_stack(&map, n).unwrap();
        let layout = PoolingLayout::new(3, rng.gen_range(1..5)).unwrap();
        let (cx, cy) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let ctx = contextual_features(&stack, cx, cy, &layout);
        prop_assert!(ctx.iter().sum::<f64>() <= layout.region_count() as f64 + 1e-9);
        for (r, rect) in layout.regions_at(cx, cy).iter().enumerate() {
            let s: f64 = ctx[r * n..(r + 1) * n].iter().sum();
            prop_assert!(s <= 1.0 + 1e-12);
            let inside = rect.x0 >= 0 && rect.y0 >= 0 && rect.x1 <= w as i64 && rect.y1 <= h as i64 && !rect.is_empty();
            if inside {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_is_fixed(seed in 0u64..1000, context in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = FeatureConfig { pooling: PoolingConfig::default(), categories: 3, context };
        for _ in 0..3 {
            let (w, h) = (rng.gen_range(1..30), rng.gen_range(1..30));
            let img = random_image(&mut rng, w, h);
            let map = random_map(&mut rng, w, h, 3);
            let ex = FeatureExtractor::new(&img, &map, &cfg).unwrap();
            let v = ex.extract(rng.gen_range(0..w), rng.gen_range(0..h)).unwrap();
            prop_assert_eq!(v.len(), cfg.dim());
            prop_assert_eq!(v.len(), if context { 153 } else { 69 });
        }
    }

    #[test]
    fn global_groups_ignore_pixel_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.gen_range(2..30), rng.gen_range(2..30));
        let img = random_image(&mut rng, w, h);
        let mut shuffled = img.pixels.clone();
        shuffled.shuffle(&mut rng);
        let a = global_features(&img);
        let b = global_features(&LabImage::new(w, h, shuffled).unwrap());
        // the detail-weighted curve depends on image gradients and the
        // spatial block on positions; every other group is order-free
        for range in [PERCENTILE_RANGE, BRIGHTNESS_RANGE, EQUALIZATION_RANGE, CLIPPING_RANGE] {
            for i in range {
                prop_assert!((a[i] - b[i]).abs() < 1e-9, "feature {}", i);
            }
        }
    }

    #[test]
    fn normalizer_round_trip(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(1..10);
        let vs: Vec<Vec<f64>> = (0..rng.gen_range(2..40))
            .map(|_| (0..d).map(|j| if j == 0 { 4.0 } else { rng.gen_range(-50.0..50.0) }).collect())
            .collect();
        let norm = FeatureNormalizer::fit(&vs).unwrap();
        let z: Vec<Vec<f64>> = vs.iter().map(|v| norm.normalize(v).unwrap()).collect();
        let n = vs.len() as f64;
        for j in 0..d {
            let mean = z.iter().map(|v| v[j]).sum::<f64>() / n;
            let std = (z.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            if j == 0 {
                prop_assert!(z.iter().all(|v| v[0] == 0.0));
            } else {
                prop_assert!((std - 1.0).abs() < 1e-6);
            }
        }
        for v in &vs {
            let back = norm.denormalize(&norm.normalize(v).unwrap()).unwrap();
            for (x, y) in v.iter().zip(&back) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn innermost_share_shrinks_with_distance() {
    // category 1 occupies x < 20 of a 100x40 map
    let map = SemanticLabelMap::new(100, 40, (0..4000).map(|i| u8::from(i % 100 < 20)).collect()).unwrap();
    let stack = build_integral_stack(&map, 2).unwrap();
    let layout = PoolingLayout::new(3, 15).unwrap();
    let shares: Vec<f64> = [22, 26, 35]
        .iter()
        .map(|&cx| contextual_features(&stack, cx, 20, &layout)[1])
        .collect();
    assert!(shares[0] > shares[1] && shares[1] > shares[2], "{shares:?}");
    assert_eq!(shares[2], 0.0);
}

#[test]
fn pixelwise_examples() {
    let flat = LabImage::filled(5, 4, LabColor::new(30.0, 5.0, -5.0));
    assert_eq!(pixelwise_features(&flat, 4, 2).unwrap(), [30.0, 5.0, -5.0, 1.0, 2.0 / 3.0]);
    let grad = LabImage::from_fn(6, 6, |x, y| LabColor::new((x * 10 + y) as f64, x as f64, -(y as f64)));
    let f = pixelwise_features(&grad, 0, 0).unwrap();
    assert_eq!(&f[3..], &[0.0, 0.0]);
    let f = pixelwise_features(&grad, 3, 2).unwrap();
    let mut direct = [0.0; 3];
    for y in 1..=3 {
        for x in 2..=4 {
            let c = grad.pixels[y * 6 + x];
            direct[0] += c.l / 9.0;
            direct[1] += c.a / 9.0;
            direct[2] += c.b / 9.0;
        }
    }
    for i in 0..3 {
        assert!((f[i] - direct[i]).abs() < 1e-12);
    }
    assert!(pixelwise_features(&grad, 6, 0).is_err());
}
