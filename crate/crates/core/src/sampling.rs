//! Training data: manifests, superpixel-stratified sampling and splits.
//!
//! Every superpixel contributes one centroid feature vector and up to
//! `samples_per_superpixel` member pixels drawn without replacement. All
//! samples of a superpixel share its feature vector.

use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::{BasisKind, LabColor, LabImage};
use crate::error::{contract, Error, Result};
use crate::features::{analyze_image, AnalysisParams, FeatureNormalizer};
use crate::io::load_lab_image;
use crate::semantics::{CategoryTable, ConfidenceMap, SemanticLabelMap};

pub const DEFAULT_SAMPLES_PER_SUPERPIXEL: usize = 10;

/// One manifest row, paths resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub input: PathBuf,
    pub target: Option<PathBuf>,
    pub labels: PathBuf,
    /// `(category index, confidence map path)`
    pub detections: Vec<(usize, PathBuf)>,
}

/// CSV manifest with header `input,target,labels[,det...]`.
///
/// Extra columns hold detector confidence maps. A column is bound to a
/// category either by naming it (`person`) or by index (`det3`). Empty
/// cells are allowed in the target and detection columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub style: String,
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn load(path: &Path, categories: &CategoryTable) -> Result<Self> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let csv_err = |source| Error::Csv {
            path: path.into(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let headers = reader.headers().map_err(csv_err)?.clone();
        let fixed: Vec<&str> = headers.iter().take(3).collect();
        if fixed != ["input", "target", "labels"] {
            return Err(Error::Format(format!(
                "{}: manifest header must start with input,target,labels (got {:?})",
                path.display(),
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut det_categories = Vec::new();
        for h in headers.iter().skip(3) {
            let cat = categories.index_of(h).or_else(|| {
                h.strip_prefix("det")
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|&i| i < categories.len())
            });
            match cat {
                Some(c) => det_categories.push(c),
                None => {
                    return Err(Error::Format(format!(
                        "{}: detection column '{h}' names no known category",
                        path.display()
                    )))
                }
            }
        }

        let resolve = |s: &str| -> Option<PathBuf> {
            if s.is_empty() {
                None
            } else {
                Some(base.join(s))
            }
        };
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let row_err = |m: &str| Error::Format(format!("{} row {}: {m}", path.display(), i + 1));
            let input = rec.get(0).and_then(resolve).ok_or_else(|| row_err("missing input"))?;
            let labels = rec.get(2).and_then(resolve).ok_or_else(|| row_err("missing labels"))?;
            let target = rec.get(1).and_then(resolve);
            let detections = det_categories
                .iter()
                .enumerate()
                .filter_map(|(j, &c)| rec.get(3 + j).and_then(resolve).map(|p| (c, p)))
                .collect();
            rows.push(ManifestRow {
                input,
                target,
                labels,
                detections,
            });
        }
        let style = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(DatasetManifest { style, rows })
    }

    /// Write rows with paths relative to `path`'s directory where possible.
    pub fn save(&self, path: &Path, categories: &CategoryTable) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let csv_err = |source| Error::Csv {
            path: path.into(),
            source,
        };
        let mut headers: Vec<String> = vec!["input".into(), "target".into(), "labels".into()];
        let mut det_cols: Vec<usize> = Vec::new();
        for row in &self.rows {
            for (c, _) in &row.detections {
                if !det_cols.contains(c) {
                    det_cols.push(*c);
                }
            }
        }
        det_cols.sort_unstable();
        headers.extend(det_cols.iter().map(|&c| categories.names()[c].clone()));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(&headers).map_err(csv_err)?;
        let rel = |p: &Path| -> String {
            let abs_base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
            let abs_p = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
            abs_p
                .strip_prefix(&abs_base)
                .map(|r| r.to_path_buf())
                .unwrap_or(abs_p)
                .to_string_lossy()
                .into_owned()
        };
        for row in &self.rows {
            let mut rec = vec![
                rel(&row.input),
                row.target.as_deref().map(rel).unwrap_or_default(),
                rel(&row.labels),
            ];
            for c in &det_cols {
                rec.push(
                    row.detections
                        .iter()
                        .find(|(d, _)| d == c)
                        .map(|(_, p)| rel(p))
                        .unwrap_or_default(),
                );
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Decoded images of one manifest row.
#[derive(Debug, Clone)]
pub struct Example {
    pub name: String,
    pub input: LabImage,
    pub target: Option<LabImage>,
    pub parsing: SemanticLabelMap,
    pub detections: Vec<ConfidenceMap>,
}

impl Example {
    pub fn load(row: &ManifestRow) -> Result<Self> {
        let ctx = row.input.display().to_string();
        let input = load_lab_image(&row.input)?;
        let target = row.target.as_deref().map(load_lab_image).transpose()?;
        let parsing = SemanticLabelMap::load(&row.labels)?;
        let detections = row
            .detections
            .iter()
            .map(|(c, p)| ConfidenceMap::load(*c, p))
            .collect::<Result<Vec<_>>>()?;
        let ex = Example {
            name: ctx,
            input,
            target,
            parsing,
            detections,
        };
        ex.check_dimensions()?;
        Ok(ex)
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let (w, h) = (self.input.width, self.input.height);
        let mut dims = vec![("labels", self.parsing.width, self.parsing.height)];
        if let Some(t) = &self.target {
            dims.push(("target", t.width, t.height));
        }
        for d in &self.detections {
            dims.push(("detection map", d.width, d.height));
        }
        for (what, dw, dh) in dims {
            if (dw, dh) != (w, h) {
                return Err(contract(format!(
                    "{}: {what} is {dw}x{dh} but input is {w}x{h}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn require_target(&self) -> Result<&LabImage> {
        self.target
            .as_ref()
            .ok_or_else(|| Error::Format(format!("{}: manifest row has no target image", self.name)))
    }
}

pub fn load_examples(manifest: &DatasetManifest) -> Result<Vec<Example>> {
    manifest
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| Example::load(row).map_err(|e| e.context(format!("manifest row {}", i + 1))))
        .collect()
}

/// One sampled pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    /// Index into [`TrainingSet::superpixels`].
    pub superpixel: usize,
    /// Row-major pixel index within its image.
    pub pixel: u32,
    /// Input color `c_j` (the basis vector is built from it).
    pub input: LabColor,
    /// Target color in scaled Lab units.
    pub target: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelRecord {
    pub image: usize,
    pub segment: u32,
    pub centroid: (usize, usize),
    /// Raw (unnormalized) feature vector at the centroid pixel.
    pub feature: Vec<f64>,
    /// Range of this superpixel's samples in [`TrainingSet::samples`].
    pub samples: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub superpixels: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub samples_per_superpixel: usize,
    pub analysis: AnalysisParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub superpixels: Vec<SuperpixelRecord>,
    pub samples: Vec<TrainingSample>,
    pub images: Vec<ImageRecord>,
    /// Fitted on exactly the centroid features of this set (for a split,
    /// on the training side).
    pub normalizer: FeatureNormalizer,
    pub categories: CategoryTable,
    pub params: SamplingParams,
    pub basis: BasisKind,
}

impl TrainingSet {
    pub fn feature_dim(&self) -> usize {
        self.params.analysis.features.dim()
    }

    pub fn samples_of(&self, superpixel: usize) -> &[TrainingSample] {
        &self.samples[self.superpixels[superpixel].samples.clone()]
    }
}

pub(crate) fn image_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Segment, label and sample every example. Examples must carry targets.
pub fn build_training_set(
    examples: &[Example],
    categories: &CategoryTable,
    params: &SamplingParams,
    basis: BasisKind,
    seed: u64,
) -> Result<TrainingSet> {
    if params.samples_per_superpixel == 0 {
        return Err(contract("samples_per_superpixel must be >= 1"));
    }
    if params.analysis.features.categories != categories.len() {
        return Err(Error::Compatibility(format!(
            "feature config expects {} categories, table has {}",
            params.analysis.features.categories,
            categories.len()
        )));
    }
    if examples.is_empty() {
        return Err(contract("training needs at least one example"));
    }

    struct PerImage {
        records: Vec<(u32, (usize, usize), Vec<f64>)>,
        samples: Vec<Vec<(u32, LabColor, [f64; 3])>>,
    }

    let per_image = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<PerImage> {
            ex.check_dimensions()?;
            let target = ex.require_target()?;
            let analysis = analyze_image(&ex.input, &ex.parsing, &ex.detections, &params.analysis)
                .map_err(|e| e.context(&ex.name))?;
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, i));
            let mut records = Vec::with_capacity(analysis.segmentation.len());
            let mut samples = Vec::with_capacity(analysis.segmentation.len());
            for (id, members) in analysis.segmentation.segments().iter().enumerate() {
                let take = members.len().min(params.samples_per_superpixel);
                let picked = index::sample(&mut rng, members.len(), take);
                samples.push(
                    picked
                        .iter()
                        .map(|k| {
                            let p = members[k];
                            (p, ex.input.pixels[p as usize], target.pixels[p as usize].scaled())
                        })
                        .collect(),
                );
                records.push((
                    id as u32,
                    analysis.centroids[id],
                    analysis.features[id].clone(),
                ));
            }
            Ok(PerImage { records, samples })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut superpixels = Vec::new();
    let mut samples = Vec::new();
    let mut images = Vec::new();
    for (i, (img, ex)) in per_image.into_iter().zip(examples).enumerate() {
        let start = superpixels.len();
        for ((segment, centroid, feature), picked) in img.records.into_iter().zip(img.samples) {
            let sp = superpixels.len();
            let s0 = samples.len();
            samples.extend(picked.into_iter().map(|(pixel, input, target)| TrainingSample {
                superpixel: sp,
                pixel,
                input,
                target,
            }));
            superpixels.push(SuperpixelRecord {
                image: i,
                segment,
                centroid,
                feature,
                samples: s0..samples.len(),
            });
        }
        images.push(ImageRecord {
            name: ex.name.clone(),
            width: ex.input.width,
            height: ex.input.height,
            superpixels: start..superpixels.len(),
        });
    }
    let normalizer = FeatureNormalizer::fit(
        &superpixels.iter().map(|s| s.feature.as_slice()).collect::<Vec<_>>(),
    )?;
    Ok(TrainingSet {
        superpixels,
        samples,
        images,
        normalizer,
        categories: categories.clone(),
        params: params.clone(),
        basis,
    })
}

fn subset(set: &TrainingSet, ids: &[usize], normalizer: FeatureNormalizer) -> TrainingSet {
    let mut superpixels = Vec::with_capacity(ids.len());
    let mut samples = Vec::new();
    for &id in ids {
        let sp = &set.superpixels[id];
        let s0 = samples.len();
        let new_id = superpixels.len();
        samples.extend(set.samples_of(id).iter().map(|s| TrainingSample {
            superpixel: new_id,
            ..*s
        }));
        superpixels.push(SuperpixelRecord {
            samples: s0..samples.len(),
            ..sp.clone()
        });
    }
    let images = set
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let lo = superpixels.partition_point(|s: &SuperpixelRecord| s.image < i);
            let hi = superpixels.partition_point(|s: &SuperpixelRecord| s.image <= i);
            ImageRecord {
                superpixels: lo..hi,
                ..img.clone()
            }
        })
        .collect();
    TrainingSet {
        superpixels,
        samples,
        images,
        normalizer,
        categories: set.categories.clone(),
        params: set.params.clone(),
        basis: set.basis,
    }
}

/// Split by whole superpixels. `fraction` is the share (rounded) that goes
/// to the first (training) part. Both parts keep the original superpixel
/// order; both use a normalizer fitted on the training part only.
pub fn split(set: &TrainingSet, fraction: f64, seed: u64) -> Result<(TrainingSet, TrainingSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(contract(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let n = set.superpixels.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(contract(format!(
            "fraction {fraction} of {n} superpixels leaves one side of the split empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_ids = order[..n_train].to_vec();
    let mut val_ids = order[n_train..].to_vec();
    train_ids.sort_unstable();
    val_ids.sort_unstable();
    let normalizer = FeatureNormalizer::fit(
        &train_ids
            .iter()
            .map(|&i| set.superpixels[i].feature.as_slice())
            .collect::<Vec<_>>(),
    )?;
    Ok((
        subset(set, &train_ids, normalizer.clone()),
        subset(set, &val_ids, normalizer),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureConfig, PoolingConfig};
    use crate::segmentation::SegmentationParams;

    fn params() -> SamplingParams {
        SamplingParams {
            samples_per_superpixel: 10,
            analysis: AnalysisParams {
                segmentation: SegmentationParams::default(),
                detection_threshold: 0.5,
                features: FeatureConfig {
                    pooling: PoolingConfig::default(),
                    categories: 2,
                    context: true,
                },
            },
        }
    }

    /// Blocks of distinct flat colors so the segmentation is predictable.
    fn blocky(w: usize, h: usize, block: usize) -> LabImage {
        LabImage::from_fn(w, h, |x, y| {
            let id = (x / block) * 7 + (y / block) * 13;
            LabColor::new((id * 37 % 80) as f64 + 10.0, (id * 11 % 60) as f64 - 30.0, 0.0)
        })
    }

    fn example(w: usize, h: usize, block: usize) -> Example {
        let input = blocky(w, h, block);
        Example {
            name: "ex".into(),
            target: Some(input.clone()),
            input,
            parsing: SemanticLabelMap::filled(w, h, 1),
            detections: vec![],
        }
    }

    fn table() -> CategoryTable {
        CategoryTable::parse("ground\nsky\n").unwrap()
    }

    #[test]
    fn small_superpixels_use_every_pixel() {
        let ex = example(12, 6, 3);
        let mut p = params();
        p.analysis.segmentation.min_size = 1;
        p.analysis.segmentation.sigma = 0.0;
        let set = build_training_set(&[ex], &table(), &p, BasisKind::Quadratic, 1).unwrap();
        assert_eq!(set.superpixels.len(), 8);
        for (i, sp) in set.superpixels.iter().enumerate() {
            let s = set.samples_of(i);
            assert_eq!(s.len(), 9);
            let mut px: Vec<u32> = s.iter().map(|s| s.pixel).collect();
            px.sort_unstable();
            px.dedup();
            assert_eq!(px.len(), 9);
            assert_eq!(sp.samples.len(), 9);
        }
    }

    #[test]
    fn sample_count_formula() {
        let ex = example(64, 48, 8);
        let set = build_training_set(&[ex.clone()], &table(), &params(), BasisKind::Quadratic, 3)
            .unwrap();
        let an = analyze_image(&ex.input, &ex.parsing, &[], &params().analysis).unwrap();
        let expected: usize = an.segmentation.segments().iter().map(|m| m.len().min(10)).sum();
        assert_eq!(set.samples.len(), expected);
        for s in &set.samples {
            let sp = &set.superpixels[s.superpixel];
            assert_eq!(an.segmentation.labels()[s.pixel as usize], sp.segment);
            assert_eq!(s.target, ex.input.pixels[s.pixel as usize].scaled());
        }
    }

    #[test]
    fn missing_target_is_an_error() {
        let mut ex = example(16, 16, 4);
        ex.target = None;
        assert!(build_training_set(&[ex], &table(), &params(), BasisKind::Quadratic, 0).is_err());
    }

    #[test]
    fn mismatched_target_is_an_error() {
        let mut ex = example(16, 16, 4);
        ex.target = Some(blocky(16, 8, 4));
        let err = build_training_set(&[ex], &table(), &params(), BasisKind::Quadratic, 0)
            .unwrap_err();
        assert!(err.to_string().contains("target"), "{err}");
    }

    #[test]
    fn split_partitions_superpixels() {
        let ex = example(40, 40, 4);
        let mut p = params();
        p.analysis.segmentation.min_size = 1;
        p.analysis.segmentation.sigma = 0.0;
        let set = build_training_set(&[ex], &table(), &p, BasisKind::Quadratic, 0).unwrap();
        assert_eq!(set.superpixels.len(), 100);
        let (a, b) = split(&set, 0.5, 9).unwrap();
        assert_eq!((a.superpixels.len(), b.superpixels.len()), (50, 50));
        assert_eq!(a.samples.len() + b.samples.len(), set.samples.len());
        let mut all: Vec<u32> = a.samples.iter().chain(&b.samples).map(|s| s.pixel).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), set.samples.len());
        let (a2, b2) = split(&set, 0.5, 9).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert_eq!(a.normalizer, b.normalizer);
        assert_eq!(a.images[0].superpixels, 0..50);

        for bad in [0.0, 1.0, -0.3, 1.5, 0.001] {
            assert!(split(&set, bad, 0).is_err(), "fraction {bad}");
        }
    }
}
