//! Feature descriptors fed to the network.
//!
//! A feature vector is the concatenation of
//! - pixelwise features: mean Lab over the 3x3 neighbourhood (replicated
//!   borders) and the normalized position `(x / (W - 1), y / (H - 1))`;
//! - contextual features: area-normalized category histograms over the
//!   `9 tau + 1` pooling regions (omitted when context is disabled);
//! - global features: the 64-value whole-image descriptor.

mod global;
mod pooling;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use global::{
    global_features, BRIGHTNESS_RANGE, CLIPPING_RANGE, DETAIL_EQUALIZATION_RANGE,
    EQUALIZATION_RANGE, GLOBAL_DIM, LUMINANCE_FLOOR, PERCENTILE_RANGE, SPATIAL_RANGE,
};
pub use pooling::{pooling_regions, PoolingConfig, PoolingLayout};

use crate::colorspace::LabImage;
use crate::error::{contract, Result};
use crate::segmentation::{segment_image, SegmentationParams, SuperpixelSegmentation};
use crate::semantics::{
    build_integral_stack, cleanup_labels, fuse_label_maps, rect_histogram_into, ConfidenceMap,
    IntegralLabelStack, SemanticLabelMap,
};

pub const PIXELWISE_DIM: usize = 5;

pub const NORMALIZER_STD_FLOOR: f64 = 1e-6;

/// Everything that determines the shape and meaning of a feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub pooling: PoolingConfig,
    /// Number of semantic categories.
    pub categories: usize,
    /// Include the contextual block.
    pub context: bool,
}

impl FeatureConfig {
    pub fn contextual_dim(&self) -> usize {
        if self.context {
            self.pooling.region_count() * self.categories
        } else {
            0
        }
    }

    pub fn dim(&self) -> usize {
        PIXELWISE_DIM + self.contextual_dim() + GLOBAL_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 {
            return Err(contract("at least one semantic category is required"));
        }
        self.pooling.validate()
    }
}

pub fn pixelwise_features(img: &LabImage, x: usize, y: usize) -> Result<[f64; PIXELWISE_DIM]> {
    let (w, h) = (img.width, img.height);
    if x >= w || y >= h {
        return Err(contract(format!("position ({x}, {y}) outside {w}x{h} image")));
    }
    let mut acc = [0.0; 3];
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let c = img.pixels[yy * w + xx];
            acc[0] += c.l;
            acc[1] += c.a;
            acc[2] += c.b;
        }
    }
    let norm = |v: usize, extent: usize| {
        if extent > 1 {
            v as f64 / (extent - 1) as f64
        } else {
            0.0
        }
    };
    Ok([
        acc[0] / 9.0,
        acc[1] / 9.0,
        acc[2] / 9.0,
        norm(x, w),
        norm(y, h),
    ])
}

/// Area-normalized category histograms over every pooling region centered at
/// `(cx, cy)`. Regions entirely outside the image contribute zeros.
pub fn contextual_features(
    stack: &IntegralLabelStack,
    cx: usize,
    cy: usize,
    layout: &PoolingLayout,
) -> Vec<f64> {
    let n = stack.categories();
    let mut out = Vec::with_capacity(layout.region_count() * n);
    let mut counts = vec![0u32; n];
    for rect in layout.regions_at(cx, cy) {
        let area = rect.clip(stack.width, stack.height).area();
        rect_histogram_into(stack, rect, &mut counts);
        if area == 0 {
            out.extend(std::iter::repeat_n(0.0, n));
        } else {
            out.extend(counts.iter().map(|&c| c as f64 / area as f64));
        }
    }
    out
}

pub fn assemble(pixelwise: &[f64], contextual: &[f64], global: &[f64]) -> Result<Vec<f64>> {
    if pixelwise.len() != PIXELWISE_DIM {
        return Err(contract(format!(
            "pixelwise block has {} values, expected {PIXELWISE_DIM}",
            pixelwise.len()
        )));
    }
    if global.len() != GLOBAL_DIM {
        return Err(contract(format!(
            "global block has {} values, expected {GLOBAL_DIM}",
            global.len()
        )));
    }
    let mut v = Vec::with_capacity(pixelwise.len() + contextual.len() + global.len());
    v.extend_from_slice(pixelwise);
    v.extend_from_slice(contextual);
    v.extend_from_slice(global);
    Ok(v)
}

/// Per-dimension z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn fit<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| contract("cannot fit a normalizer on zero vectors"))?;
        let d = first.as_ref().len();
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; d];
        for v in vectors {
            let v = v.as_ref();
            if v.len() != d {
                return Err(contract(format!("vector of dim {} in a dim-{d} set", v.len())));
            }
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for v in vectors {
            for ((s, x), m) in var.iter_mut().zip(v.as_ref()).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt().max(NORMALIZER_STD_FLOOR))
            .collect();
        Ok(FeatureNormalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        Ok(v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    pub fn denormalize(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        Ok(v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| x * s + m)
            .collect())
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(contract(format!(
                "feature vector has dim {}, normalizer expects {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Per-image state needed to compute feature vectors at arbitrary pixels.
pub struct FeatureExtractor<'a> {
    img: &'a LabImage,
    stack: Option<IntegralLabelStack>,
    layout: PoolingLayout,
    global: Vec<f64>,
    dim: usize,
}

impl<'a> FeatureExtractor<'a> {
    /// `labels` should already be fused and cleaned.
    pub fn new(img: &'a LabImage, labels: &SemanticLabelMap, cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        if img.is_empty() {
            return Err(contract("cannot extract features from an empty image"));
        }
        if labels.width != img.width || labels.height != img.height {
            return Err(contract(format!(
                "label map is {}x{} but image is {}x{}",
                labels.width, labels.height, img.width, img.height
            )));
        }
        labels.check_categories(cfg.categories)?;
        let stack = if cfg.context {
            Some(build_integral_stack(labels, cfg.categories)?)
        } else {
            None
        };
        Ok(FeatureExtractor {
            img,
            stack,
            layout: cfg.pooling.layout_for(img.width, img.height),
            global: global_features(img),
            dim: cfg.dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> &PoolingLayout {
        &self.layout
    }

    pub fn global(&self) -> &[f64] {
        &self.global
    }

    pub fn extract(&self, x: usize, y: usize) -> Result<Vec<f64>> {
        let pix = pixelwise_features(self.img, x, y)?;
        let ctx = match &self.stack {
            Some(s) => contextual_features(s, x, y, &self.layout),
            None => Vec::new(),
        };
        assemble(&pix, &ctx, &self.global)
    }
}

/// Segmentation, cleaned labels and raw (unnormalized) centroid features of
/// one image.
#[derive(Debug, Clone)]
pub struct ImageAnalysis {
    pub segmentation: SuperpixelSegmentation,
    pub labels: SemanticLabelMap,
    /// Centroid pixel of each superpixel.
    pub centroids: Vec<(usize, usize)>,
    /// Feature vector at each centroid.
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub segmentation: SegmentationParams,
    pub detection_threshold: f64,
    pub features: FeatureConfig,
}

/// Segment, fuse and clean labels, and extract one feature vector per superpixel.
pub fn analyze_image(
    img: &LabImage,
    parsing: &SemanticLabelMap,
    detections: &[ConfidenceMap],
    params: &AnalysisParams,
) -> Result<ImageAnalysis> {
    let segmentation = segment_image(img, &params.segmentation)?;
    analyze_segmented(img, parsing, detections, params, segmentation)
}

pub fn analyze_segmented(
    img: &LabImage,
    parsing: &SemanticLabelMap,
    detections: &[ConfidenceMap],
    params: &AnalysisParams,
    segmentation: SuperpixelSegmentation,
) -> Result<ImageAnalysis> {
    if parsing.width != img.width || parsing.height != img.height {
        return Err(contract(format!(
            "label map is {}x{} but image is {}x{}",
            parsing.width, parsing.height, img.width, img.height
        )));
    }
    parsing.check_categories(params.features.categories)?;
    for d in detections {
        if d.category >= params.features.categories {
            return Err(crate::Error::Compatibility(format!(
                "detection category {} not in the {}-category table",
                d.category, params.features.categories
            )));
        }
    }
    let fused = fuse_label_maps(parsing, detections, params.detection_threshold)?;
    let labels = cleanup_labels(&fused, &segmentation)?;
    let extractor = FeatureExtractor::new(img, &labels, &params.features)?;
    let centroids = (0..segmentation.len())
        .map(|id| segmentation.centroid_pixel(id))
        .collect::<Result<Vec<_>>>()?;
    let features = centroids
        .par_iter()
        .map(|&(x, y)| extractor.extract(x, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageAnalysis {
        segmentation,
        labels,
        centroids,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::LabColor;
    use crate::semantics::Rect;

    #[test]
    fn pixelwise_examples() {
        let c = LabColor::new(30.0, -4.0, 9.0);
        let img = LabImage::filled(5, 4, c);
        let f = pixelwise_features(&img, 2, 3).unwrap();
        assert_eq!(f, [30.0, -4.0, 9.0, 0.5, 1.0]);
        let f = pixelwise_features(&img, 0, 0).unwrap();
        assert_eq!(&f[3..], &[0.0, 0.0]);
        assert!(pixelwise_features(&img, 5, 0).is_err());

        let grad = LabImage::from_fn(6, 6, |x, y| LabColor::new((x * 7 + y * 3) as f64, x as f64, -(y as f64)));
        let f = pixelwise_features(&grad, 2, 3).unwrap();
        let mut direct = [0.0; 3];
        for y in 2..5 {
            for x in 1..4 {
                let p = grad.get(x, y);
                direct[0] += p.l / 9.0;
                direct[1] += p.a / 9.0;
                direct[2] += p.b / 9.0;
            }
        }
        for i in 0..3 {
            assert!((f[i] - direct[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_category_context_is_one_hot() {
        let map = SemanticLabelMap::filled(40, 30, 1);
        let stack = build_integral_stack(&map, 3).unwrap();
        let layout = PoolingLayout::new(2, 3).unwrap();
        let ctx = contextual_features(&stack, 20, 15, &layout);
        for (region, block) in layout.regions_at(20, 15).iter().zip(ctx.chunks(3)) {
            if region.clip(40, 30).is_empty() {
                assert_eq!(block, &[0.0, 0.0, 0.0]);
            } else {
                assert_eq!(block, &[0.0, 1.0, 0.0]);
            }
        }
    }

    #[test]
    fn outer_square_is_weighted_sum_of_parts() {
        let labels: Vec<u8> = (0..50 * 50).map(|i| ((i * 7919) % 13 % 3) as u8).collect();
        let map = SemanticLabelMap::new(50, 50, labels).unwrap();
        let stack = build_integral_stack(&map, 3).unwrap();
        let layout = PoolingLayout::new(2, 3).unwrap();
        let regions = layout.regions_at(25, 25);
        let ctx = contextual_features(&stack, 25, 25, &layout);
        let block = |i: usize| &ctx[i * 3..i * 3 + 3];
        let area = |r: Rect| r.clip(50, 50).area() as f64;
        for k in 0..2 {
            let mut sum = [0.0; 3];
            let parts = std::iter::once(k).chain(3 + 8 * k..3 + 8 * (k + 1));
            for i in parts {
                for c in 0..3 {
                    sum[c] += block(i)[c] * area(regions[i]);
                }
            }
            for c in 0..3 {
                let whole = block(k + 1)[c] * area(regions[k + 1]);
                assert!((whole - sum[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalizer_examples() {
        let set = vec![vec![1.0, 5.0, 2.0], vec![3.0, 5.0, -1.0], vec![8.0, 5.0, 0.5]];
        let norm = FeatureNormalizer::fit(&set).unwrap();
        let z: Vec<Vec<f64>> = set.iter().map(|v| norm.normalize(v).unwrap()).collect();
        for d in [0, 2] {
            let m: f64 = z.iter().map(|v| v[d]).sum::<f64>() / 3.0;
            let s = (z.iter().map(|v| (v[d] - m).powi(2)).sum::<f64>() / 3.0).sqrt();
            assert!(m.abs() < 1e-9);
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(z.iter().all(|v| v[1] == 0.0));
        assert_eq!(norm.std[1], NORMALIZER_STD_FLOOR);
        let back = norm.denormalize(&z[2]).unwrap();
        for (a, b) in back.iter().zip(&set[2]) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(norm.normalize(&[1.0]).is_err());
        assert!(FeatureNormalizer::fit::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn assemble_checks_blocks() {
        assert!(assemble(&[0.0; 4], &[], &[0.0; GLOBAL_DIM]).is_err());
        assert!(assemble(&[0.0; 5], &[], &[0.0; 3]).is_err());
        assert_eq!(assemble(&[0.0; 5], &[1.0; 6], &[0.0; GLOBAL_DIM]).unwrap().len(), 75);
    }

    #[test]
    fn dimension_formula() {
        let cfg = FeatureConfig {
            pooling: PoolingConfig::default(),
            categories: 3,
            context: true,
        };
        assert_eq!(cfg.dim(), 5 + 28 * 3 + 64);
        let no_ctx = FeatureConfig { context: false, ..cfg };
        assert_eq!(no_ctx.dim(), 69);
    }
}
