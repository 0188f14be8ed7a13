//! Versioned JSON model files.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::colorspace::{BasisKind, LAB_SCALE};
use crate::error::{Error, Result};
use crate::features::{AnalysisParams, FeatureConfig, FeatureNormalizer, PoolingConfig};
use crate::network::{
    Activation, HeadKind, Layer, NetworkArchitecture, NetworkWeights, TrainedModel, TrainingMeta,
};
use crate::segmentation::SegmentationParams;
use crate::semantics::CategoryTable;

pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArchRecord {
    input_dim: usize,
    hidden: Vec<usize>,
    output_dim: usize,
    activation: Activation,
    head: HeadKind,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoolingRecord {
    tau: usize,
    lambda0: f64,
    reference_size: usize,
    context: bool,
}

#[derive(Serialize, Deserialize)]
struct BasisRecord {
    kind: BasisKind,
    scale: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    segmentation: SegmentationParams,
    detection_threshold: f64,
    training: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    version: u32,
    arch: ArchRecord,
    weights: Vec<LayerRecord>,
    normalizer: FeatureNormalizer,
    pooling: PoolingRecord,
    categories: CategoryTable,
    basis: BasisRecord,
    meta: MetaRecord,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn model_to_json(model: &TrainedModel) -> Result<String> {
    model.check()?;
    let f = &model.analysis.features;
    let record = ModelRecord {
        version: MODEL_VERSION,
        arch: ArchRecord {
            input_dim: model.arch.input_dim,
            hidden: model.arch.hidden.clone(),
            output_dim: model.arch.output_dim(),
            activation: model.arch.activation,
            head: model.arch.head,
        },
        weights: model
            .weights
            .layers
            .iter()
            .map(|l| LayerRecord {
                weights: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
        normalizer: model.normalizer.clone(),
        pooling: PoolingRecord {
            tau: f.pooling.tau,
            lambda0: f.pooling.lambda0,
            reference_size: f.pooling.reference_size,
            context: f.context,
        },
        categories: model.categories.clone(),
        basis: BasisRecord {
            kind: model.arch.basis,
            scale: LAB_SCALE,
        },
        meta: MetaRecord {
            segmentation: model.analysis.segmentation,
            detection_threshold: model.analysis.detection_threshold,
            training: model.meta.clone(),
        },
    };
    let mut s = serde_json::to_string_pretty(&record).map_err(|source| Error::Json {
        context: "serializing model".into(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str) -> Result<TrainedModel> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|source| Error::Json {
        context: "model file".into(),
        source,
    })?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == MODEL_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Compatibility(format!(
                "model file version {v} is not supported (expected {MODEL_VERSION})"
            )))
        }
        None => return Err(format_err("model file has no version tag")),
    }
    let r: ModelRecord = serde_json::from_value(value).map_err(|source| Error::Json {
        context: "model file".into(),
        source,
    })?;
    if r.basis.scale != LAB_SCALE {
        return Err(Error::Compatibility(format!(
            "model uses basis scaling {:?}, this build uses {:?}",
            r.basis.scale, LAB_SCALE
        )));
    }
    let arch = NetworkArchitecture {
        input_dim: r.arch.input_dim,
        hidden: r.arch.hidden,
        basis: r.basis.kind,
        head: r.arch.head,
        activation: r.arch.activation,
    };
    arch.validate()?;
    if arch.output_dim() != r.arch.output_dim {
        return Err(format_err(format!(
            "output dim {} inconsistent with {:?} head on {:?} basis",
            r.arch.output_dim, arch.head, arch.basis
        )));
    }
    let mut layers = Vec::with_capacity(r.weights.len());
    for (i, l) in r.weights.into_iter().enumerate() {
        let rows = l.weights.len();
        let cols = l.weights.first().map_or(0, Vec::len);
        if l.weights.iter().any(|row| row.len() != cols) {
            return Err(format_err(format!("layer {i} has ragged weight rows")));
        }
        let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
        let weights = Array2::from_shape_vec((rows, cols), flat).expect("checked shape");
        layers.push(Layer {
            weights,
            bias: Array1::from(l.bias),
        });
    }
    let weights = NetworkWeights { layers };
    weights
        .check(&arch)
        .map_err(|e| format_err(format!("model weights: {e}")))?;
    let analysis = AnalysisParams {
        segmentation: r.meta.segmentation,
        detection_threshold: r.meta.detection_threshold,
        features: FeatureConfig {
            pooling: PoolingConfig {
                tau: r.pooling.tau,
                lambda0: r.pooling.lambda0,
                reference_size: r.pooling.reference_size,
            },
            categories: r.categories.len(),
            context: r.pooling.context,
        },
    };
    analysis.segmentation.validate()?;
    analysis.features.validate()?;
    let model = TrainedModel {
        arch,
        weights,
        normalizer: r.normalizer,
        analysis,
        categories: r.categories,
        meta: r.meta.training,
    };
    model
        .check()
        .map_err(|e| format_err(format!("inconsistent model file: {e}")))?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    let text = model_to_json(model)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            context: path.display().to_string(),
            source,
        },
        other => other.context(path.display()),
    })
}
