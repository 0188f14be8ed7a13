//! Whole-image descriptor (64 values), six groups in this order:
//!
//! | group | values | definition |
//! |---|---|---|
//! | intensity distribution | 16 | L percentiles at 2.5% .. 97.5%, equally spaced, linear interpolation |
//! | scene brightness | 1 | mean of `ln(max(Y, 1e-4))`, Y = relative luminance |
//! | equalization curve | 16 | CDF of L at `100 * (i + 0.5) / 16` |
//! | detail-weighted equalization | 16 | same CDF, pixels weighted by Sobel magnitude of L |
//! | highlight clipping | 8 | fraction with L above 95, 97.5, 99, 99.5, 100-1e-6 and below 1, 2.5, 5 |
//! | spatial distribution | 7 | L-weighted mean and std of x, y; L-weighted second moments about the image center (xx, yy, xy) |
//!
//! Coordinates are normalized to `[0, 1]`.

use crate::colorspace::{lightness_to_luminance, LabImage};

pub const GLOBAL_DIM: usize = 64;

pub const PERCENTILE_RANGE: std::ops::Range<usize> = 0..16;
pub const BRIGHTNESS_RANGE: std::ops::Range<usize> = 16..17;
pub const EQUALIZATION_RANGE: std::ops::Range<usize> = 17..33;
pub const DETAIL_EQUALIZATION_RANGE: std::ops::Range<usize> = 33..49;
pub const CLIPPING_RANGE: std::ops::Range<usize> = 49..57;
pub const SPATIAL_RANGE: std::ops::Range<usize> = 57..64;

pub const LUMINANCE_FLOOR: f64 = 1e-4;

const CURVE_POINTS: usize = 16;
const UPPER_CLIP: [f64; 5] = [95.0, 97.5, 99.0, 99.5, 100.0 - 1e-6];
const LOWER_CLIP: [f64; 3] = [1.0, 2.5, 5.0];

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

#[cfg(test)]
fn curve_threshold(i: usize) -> f64 {
    100.0 * (i as f64 + 0.5) / CURVE_POINTS as f64
}

/// Weighted CDF of `values` sampled at the curve thresholds.
fn weighted_cdf(values: &[f64], weights: &[f64]) -> [f64; CURVE_POINTS] {
    let mut bins = [0.0; CURVE_POINTS];
    let mut total = 0.0;
    for (&v, &w) in values.iter().zip(weights) {
        // first threshold >= v
        let idx = ((v / 100.0 * CURVE_POINTS as f64 - 0.5).ceil().max(0.0) as usize)
            .min(CURVE_POINTS);
        if idx < CURVE_POINTS {
            bins[idx] += w;
        }
        total += w;
    }
    let mut out = [0.0; CURVE_POINTS];
    let mut acc = 0.0;
    for i in 0..CURVE_POINTS {
        acc += bins[i];
        out[i] = if total > 0.0 { acc / total } else { 0.0 };
    }
    out
}

fn sobel_magnitude(l: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| {
        let xx = x.clamp(0, w as isize - 1) as usize;
        let yy = y.clamp(0, h as isize - 1) as usize;
        l[yy * w + xx]
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1);
            let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1);
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Compute the 64-value global descriptor. The image must be non-empty.
pub fn global_features(img: &LabImage) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let n = img.len();
    assert!(n > 0, "global features need a non-empty image");
    let lightness: Vec<f64> = img.pixels.iter().map(|p| p.l).collect();
    let mut out = Vec::with_capacity(GLOBAL_DIM);

    let mut sorted = lightness.clone();
    sorted.sort_by(f64::total_cmp);
    for i in 0..16 {
        out.push(percentile(&sorted, 2.5 + i as f64 * 95.0 / 15.0));
    }

    let log_mean = lightness
        .iter()
        .map(|&l| lightness_to_luminance(l).max(LUMINANCE_FLOOR).ln())
        .sum::<f64>()
        / n as f64;
    out.push(log_mean);

    let ones = vec![1.0; n];
    let plain = weighted_cdf(&lightness, &ones);
    out.extend_from_slice(&plain);

    let grad = sobel_magnitude(&lightness, w, h);
    if grad.iter().sum::<f64>() > 0.0 {
        out.extend_from_slice(&weighted_cdf(&lightness, &grad));
    } else {
        out.extend_from_slice(&plain);
    }

    for t in UPPER_CLIP {
        out.push(lightness.iter().filter(|&&l| l > t).count() as f64 / n as f64);
    }
    for t in LOWER_CLIP {
        out.push(lightness.iter().filter(|&&l| l < t).count() as f64 / n as f64);
    }

    let norm = |v: usize, extent: usize| {
        if extent > 1 {
            v as f64 / (extent - 1) as f64
        } else {
            0.0
        }
    };
    let total_l: f64 = lightness.iter().sum();
    let weight = |l: f64| if total_l > 0.0 { l / total_l } else { 1.0 / n as f64 };
    let (mut mx, mut my) = (0.0, 0.0);
    for (i, &l) in lightness.iter().enumerate() {
        let wt = weight(l);
        mx += wt * norm(i % w, w);
        my += wt * norm(i / w, h);
    }
    let (mut vx, mut vy, mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &l) in lightness.iter().enumerate() {
        let wt = weight(l);
        let (x, y) = (norm(i % w, w), norm(i / w, h));
        vx += wt * (x - mx) * (x - mx);
        vy += wt * (y - my) * (y - my);
        cxx += wt * (x - 0.5) * (x - 0.5);
        cyy += wt * (y - 0.5) * (y - 0.5);
        cxy += wt * (x - 0.5) * (y - 0.5);
    }
    out.extend_from_slice(&[mx, my, vx.sqrt(), vy.sqrt(), cxx, cyy, cxy]);

    debug_assert_eq!(out.len(), GLOBAL_DIM);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::LabColor;

    #[test]
    fn layout_adds_up() {
        assert_eq!(SPATIAL_RANGE.end, GLOBAL_DIM);
        let img = LabImage::from_fn(9, 7, |x, y| LabColor::new((x * 10 + y) as f64, 0.0, 0.0));
        assert_eq!(global_features(&img).len(), GLOBAL_DIM);
    }

    #[test]
    fn mid_gray() {
        let img = LabImage::filled(12, 10, LabColor::new(50.0, 0.0, 0.0));
        let g = global_features(&img);
        assert!(g[PERCENTILE_RANGE].iter().all(|&v| v == 50.0));
        assert!(g[CLIPPING_RANGE].iter().all(|&v| v == 0.0));
        // detail weights are all zero: falls back to the plain curve
        assert_eq!(g[EQUALIZATION_RANGE], g[DETAIL_EQUALIZATION_RANGE]);
    }

    #[test]
    fn black_hits_luminance_floor() {
        let img = LabImage::filled(5, 5, LabColor::new(0.0, 0.0, 0.0));
        let g = global_features(&img);
        assert!((g[BRIGHTNESS_RANGE.start] - LUMINANCE_FLOOR.ln()).abs() < 1e-12);
        assert!(g[CLIPPING_RANGE.start + 5..CLIPPING_RANGE.end].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn curve_matches_direct_count() {
        let img = LabImage::from_fn(16, 16, |x, y| LabColor::new(((x * 16 + y) as f64 * 0.39) % 100.0, 0.0, 0.0));
        let g = global_features(&img);
        for i in 0..16 {
            let t = curve_threshold(i);
            let direct = img.pixels.iter().filter(|p| p.l <= t).count() as f64 / 256.0;
            assert!((g[EQUALIZATION_RANGE.start + i] - direct).abs() < 1e-12, "point {i}");
        }
    }

    #[test]
    fn spatial_group_tracks_bright_side() {
        let img = LabImage::from_fn(20, 10, |x, _| LabColor::new(if x >= 10 { 90.0 } else { 10.0 }, 0.0, 0.0));
        let g = global_features(&img);
        assert!(g[SPATIAL_RANGE.start] > 0.5);
        assert!((g[SPATIAL_RANGE.start + 1] - 0.5).abs() < 1e-12);
    }
}
