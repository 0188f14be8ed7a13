use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::mean_lab_distance;
use crate::error::Result;
use crate::network::TrainedModel;
use crate::sampling::Example;

use super::enhance::{enhance, EnhanceOptions};

pub const HISTOGRAM_BIN_WIDTH: f64 = 2.5;
pub const HISTOGRAM_RANGE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEvaluation {
    pub name: String,
    /// Mean per-pixel CIELab distance between the enhanced image and the target.
    pub error: f64,
    /// Same distance between the unmodified input and the target.
    pub input_distance: f64,
}

/// Per-image mean errors binned over `[0, 50)`; larger errors land in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub bin_width: f64,
    pub range: [f64; 2],
    pub counts: Vec<u64>,
}

impl ErrorHistogram {
    pub fn from_errors(errors: impl IntoIterator<Item = f64>) -> Self {
        let bins = (HISTOGRAM_RANGE / HISTOGRAM_BIN_WIDTH).round() as usize;
        let mut counts = vec![0u64; bins];
        for e in errors {
            let b = ((e / HISTOGRAM_BIN_WIDTH).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        ErrorHistogram {
            bin_width: HISTOGRAM_BIN_WIDTH,
            range: [0.0, HISTOGRAM_RANGE],
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub images: Vec<ImageEvaluation>,
    pub mean_error: f64,
    pub mean_input_distance: f64,
    pub histogram: ErrorHistogram,
}

/// Enhance every example, write it out as 8-bit RGB and compare with its target.
pub fn evaluate(model: &TrainedModel, examples: &[Example], opts: EnhanceOptions) -> Result<EvaluationReport> {
    let images = examples
        .par_iter()
        .map(|ex| {
            let target = ex.require_target()?;
            let out = enhance(model, &ex.input, &ex.parsing, &ex.detections, opts)
                .map_err(|e| e.context(&ex.name))?
                .output
                .quantized();
            Ok(ImageEvaluation {
                name: ex.name.clone(),
                error: mean_lab_distance(&out, target)?,
                input_distance: mean_lab_distance(&ex.input, target)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::from_images(images))
}

impl EvaluationReport {
    pub fn from_images(images: Vec<ImageEvaluation>) -> Self {
        let n = images.len().max(1) as f64;
        EvaluationReport {
            mean_error: images.iter().map(|i| i.error).sum::<f64>() / n,
            mean_input_distance: images.iter().map(|i| i.input_distance).sum::<f64>() / n,
            histogram: ErrorHistogram::from_errors(images.iter().map(|i| i.error)),
            images,
        }
    }
}
