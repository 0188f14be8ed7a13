//! End-to-end training, enhancement, evaluation and dataset tooling.

mod enhance;
mod evaluate;
mod model_file;
mod synth;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use enhance::{check_category_table, enhance, EnhanceMode, EnhanceOptions, Enhancement};
pub use evaluate::{
    evaluate, ErrorHistogram, EvaluationReport, ImageEvaluation, HISTOGRAM_BIN_WIDTH, HISTOGRAM_RANGE,
};
pub use model_file::{load_model, model_from_json, model_to_json, save_model, MODEL_VERSION};
pub use synth::{
    generate_scene, scatter_points, synthesize_target, Modulation, ScatterPoint, Scene, SceneParams,
    SyntheticStyleSpec,
};

use crate::colorspace::{BasisKind, LabColor, LabImage};
use crate::error::{Error, Result};
use crate::features::{AnalysisParams, FeatureConfig, ImageAnalysis, PoolingConfig};
use crate::io::save_lab_image;
use crate::network::{train, HeadKind, TrainedModel, TrainingHyperparams};
use crate::sampling::{
    build_training_set, image_seed, load_examples, DatasetManifest, Example, ManifestRow,
    SamplingParams, DEFAULT_SAMPLES_PER_SUPERPIXEL,
};
use crate::segmentation::{SegmentationParams, SuperpixelSegmentation};
use crate::semantics::{fuse_label_maps, CategoryTable, DEFAULT_DETECTION_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub head: HeadKind,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![192, 192],
            head: HeadKind::Transform,
        }
    }
}

fn default_basis() -> BasisKind {
    BasisKind::Quadratic
}
fn default_true() -> bool {
    true
}
fn default_threshold() -> f64 {
    DEFAULT_DETECTION_THRESHOLD
}
fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_SUPERPIXEL
}

/// Training configuration. Relative paths are resolved against the
/// config file's directory by [`StyleConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleConfig {
    pub manifest: PathBuf,
    /// Defaults to `categories.txt` next to the manifest.
    #[serde(default)]
    pub categories: Option<PathBuf>,
    pub output: PathBuf,
    #[serde(default = "default_basis")]
    pub basis: BasisKind,
    #[serde(default)]
    pub pooling: PoolingConfig,
    #[serde(default = "default_true")]
    pub context: bool,
    #[serde(default)]
    pub segmentation: SegmentationParams,
    #[serde(default = "default_threshold")]
    pub detection_threshold: f64,
    #[serde(default = "default_samples")]
    pub samples_per_superpixel: usize,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub hyper: TrainingHyperparams,
    /// Seeds sampling and training.
    #[serde(default)]
    pub seed: u64,
}

impl StyleConfig {
    /// Defaults for everything but the paths.
    pub fn new(manifest: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        StyleConfig {
            manifest: manifest.into(),
            categories: None,
            output: output.into(),
            basis: default_basis(),
            pooling: PoolingConfig::default(),
            context: true,
            segmentation: SegmentationParams::default(),
            detection_threshold: DEFAULT_DETECTION_THRESHOLD,
            samples_per_superpixel: DEFAULT_SAMPLES_PER_SUPERPIXEL,
            network: NetworkConfig::default(),
            hyper: TrainingHyperparams::default(),
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: StyleConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.output = base.join(&cfg.output);
        cfg.categories = cfg.categories.map(|c| base.join(c));
        Ok(cfg)
    }

    pub fn categories_path(&self) -> PathBuf {
        self.categories
            .clone()
            .unwrap_or_else(|| default_categories_path(&self.manifest))
    }

    pub fn analysis(&self, categories: usize) -> AnalysisParams {
        AnalysisParams {
            segmentation: self.segmentation,
            detection_threshold: self.detection_threshold,
            features: FeatureConfig {
                pooling: self.pooling,
                categories,
                context: self.context,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.pooling.validate()?;
        self.hyper.validate()?;
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(crate::error::contract("detection threshold must be in [0, 1]"));
        }
        if self.samples_per_superpixel == 0 {
            return Err(crate::error::contract("samples_per_superpixel must be >= 1"));
        }
        Ok(())
    }
}

/// `categories.txt` in the manifest's directory.
pub fn default_categories_path(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join("categories.txt")
}

/// Sample, train and return the model. Paths in `cfg` are ignored.
pub fn train_examples(examples: &[Example], categories: &CategoryTable, cfg: &StyleConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let params = SamplingParams {
        samples_per_superpixel: cfg.samples_per_superpixel,
        analysis: cfg.analysis(categories.len()),
    };
    let set = build_training_set(examples, categories, &params, cfg.basis, cfg.seed)?;
    log::info!(
        "training on {} superpixels / {} samples from {} images",
        set.superpixels.len(),
        set.samples.len(),
        set.images.len()
    );
    let hyper = TrainingHyperparams {
        seed: cfg.seed,
        ..cfg.hyper.clone()
    };
    train(&set, &cfg.network.hidden, cfg.network.head, &hyper)
}

/// Load the manifest, train and write the model file.
pub fn train_style(cfg: &StyleConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let categories = CategoryTable::load(&cfg.categories_path())?;
    let manifest = DatasetManifest::load(&cfg.manifest, &categories)?;
    let examples = load_examples(&manifest)?;
    let model = train_examples(&examples, &categories, cfg)?;
    save_model(&cfg.output, &model)?;
    Ok(model)
}

/// Load a manifest's examples and evaluate the model on them.
pub fn evaluate_manifest(
    model: &TrainedModel,
    manifest: &Path,
    categories: &CategoryTable,
    opts: EnhanceOptions,
) -> Result<EvaluationReport> {
    check_category_table(model, categories)?;
    let manifest = DatasetManifest::load(manifest, categories)?;
    let examples = load_examples(&manifest)?;
    evaluate(model, &examples, opts)
}

/// Input image with superpixel boundaries drawn in black.
pub fn segmentation_overlay(img: &LabImage, seg: &SuperpixelSegmentation) -> LabImage {
    let labels = seg.labels();
    let (w, h) = (img.width, img.height);
    LabImage::from_fn(w, h, |x, y| {
        let id = labels[y * w + x];
        let edge = (x + 1 < w && labels[y * w + x + 1] != id) || (y + 1 < h && labels[(y + 1) * w + x] != id);
        if edge {
            LabColor::new(0.0, 0.0, 0.0)
        } else {
            img.get(x, y)
        }
    })
}

/// One row per superpixel: id, centroid, cleaned label, raw features.
pub fn write_features_csv(path: &Path, analysis: &ImageAnalysis) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let dim = analysis.features.first().map_or(0, Vec::len);
    let mut header = vec!["segment".to_string(), "x".into(), "y".into(), "label".into()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, (&(x, y), f)) in analysis.centroids.iter().zip(&analysis.features).enumerate() {
        let mut rec = vec![
            id.to_string(),
            x.to_string(),
            y.to_string(),
            analysis.labels.get(x, y).to_string(),
        ];
        rec.extend(f.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Result of styling a manifest.
pub struct SynthesizedSet {
    pub manifest: DatasetManifest,
    pub scatter: Vec<ScatterPoint>,
}

/// Write a styled target for every row into `out_dir` and return a
/// manifest pointing at them. Labels are fused with the detections first.
pub fn synthesize_manifest(
    spec: &SyntheticStyleSpec,
    manifest: &DatasetManifest,
    out_dir: &Path,
    scatter_stride: usize,
) -> Result<SynthesizedSet> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = manifest
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| -> Result<(ManifestRow, Vec<ScatterPoint>)> {
            let ex = Example::load(row).map_err(|e| e.context(format!("manifest row {}", i + 1)))?;
            let labels = fuse_label_maps(&ex.parsing, &ex.detections, DEFAULT_DETECTION_THRESHOLD)?;
            let target = synthesize_target(spec, &ex.input, &labels, image_seed(spec.seed, i))
                .map_err(|e| e.context(&ex.name))?
                .quantized();
            let stem = row
                .input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("image{i}"));
            let out = out_dir.join(format!("{i:04}_{stem}_target.png"));
            save_lab_image(&out, &target)?;
            let points = scatter_points(i, &ex.input, &target, &labels, scatter_stride);
            Ok((
                ManifestRow {
                    target: Some(out),
                    ..row.clone()
                },
                points,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(results.len());
    let mut scatter = Vec::new();
    for (row, pts) in results {
        rows.push(row);
        scatter.extend(pts);
    }
    Ok(SynthesizedSet {
        manifest: DatasetManifest {
            style: manifest.style.clone(),
            rows,
        },
        scatter,
    })
}

/// Write `count` synthetic scenes (input, label map, optional styled target),
/// `categories.txt` and `manifest.csv` into `dir`.
pub fn write_scene_dataset(
    dir: &Path,
    params: &SceneParams,
    count: usize,
    style: Option<&SyntheticStyleSpec>,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<String> = (0..params.categories).map(|i| format!("region{i}")).collect();
    let categories = CategoryTable::new(names)?;
    let cat_path = dir.join("categories.txt");
    std::fs::write(&cat_path, categories.names().join("\n") + "\n").map_err(|e| Error::io(&cat_path, e))?;
    let rows = (0..count)
        .into_par_iter()
        .map(|i| -> Result<ManifestRow> {
            let scene = generate_scene(params, i)?;
            let input = dir.join(format!("scene{i:04}.png"));
            let labels = dir.join(format!("scene{i:04}_labels.png"));
            save_lab_image(&input, &scene.image)?;
            scene.labels.save(&labels)?;
            let target = match style {
                Some(spec) => {
                    let t = synthesize_target(spec, &scene.image, &scene.labels, image_seed(spec.seed, i))?;
                    let p = dir.join(format!("scene{i:04}_target.png"));
                    save_lab_image(&p, &t)?;
                    Some(p)
                }
                None => None,
            };
            Ok(ManifestRow {
                input,
                target,
                labels,
                detections: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        style: "scenes".into(),
        rows,
    };
    manifest.save(&dir.join("manifest.csv"), &categories)?;
    Ok(manifest)
}

/// In-memory [`Example`]s from scenes; targets pass through 8-bit sRGB like
/// images read from disk.
pub fn scene_examples(
    params: &SceneParams,
    indices: std::ops::Range<usize>,
    style: &SyntheticStyleSpec,
) -> Result<Vec<Example>> {
    indices
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(params, i)?;
            let target = synthesize_target(style, &scene.image, &scene.labels, image_seed(style.seed, i))?.quantized();
            Ok(Example {
                name: format!("scene{i:04}"),
                input: scene.image,
                target: Some(target),
                parsing: scene.labels,
                detections: Vec::new(),
            })
        })
        .collect()
}
