use rayon::prelude::*;

use crate::colorspace::{LabColor, LabImage};
use crate::error::{contract, Error, Result};
use crate::features::{analyze_image, FeatureExtractor, ImageAnalysis};
use crate::network::{Prediction, TrainedModel};
use crate::semantics::{CategoryTable, ConfidenceMap, SemanticLabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnhanceMode {
    #[default]
    Standard,
    /// Fill every superpixel with its mean adjusted color.
    Watercolor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnhanceOptions {
    pub mode: EnhanceMode,
    /// Predict a transform at every pixel instead of once per superpixel.
    /// Slow; for diagnostics.
    pub per_pixel: bool,
}

#[derive(Debug, Clone)]
pub struct Enhancement {
    /// Adjusted image, clamped to the Lab range.
    pub output: LabImage,
    pub analysis: ImageAnalysis,
    /// One prediction per superpixel.
    pub predictions: Vec<Prediction>,
}

/// Fails unless `table` names exactly the model's categories.
pub fn check_category_table(model: &TrainedModel, table: &CategoryTable) -> Result<()> {
    if table != &model.categories {
        return Err(Error::Compatibility(format!(
            "model was trained with categories {:?}, got {:?}",
            model.categories.names(),
            table.names()
        )));
    }
    Ok(())
}

pub fn enhance(
    model: &TrainedModel,
    img: &LabImage,
    parsing: &SemanticLabelMap,
    detections: &[ConfidenceMap],
    opts: EnhanceOptions,
) -> Result<Enhancement> {
    model.check()?;
    let analysis = analyze_image(img, parsing, detections, &model.analysis)?;
    let predictions = model.predict_batch(&analysis.features)?;
    let seg = &analysis.segmentation;

    let mut pixels = vec![LabColor::default(); img.len()];
    if opts.per_pixel {
        let extractor = FeatureExtractor::new(img, &analysis.labels, &model.analysis.features)?;
        const ROWS: usize = 8;
        let chunks: Vec<Vec<LabColor>> = (0..img.height)
            .into_par_iter()
            .step_by(ROWS)
            .map(|y0| {
                let y1 = (y0 + ROWS).min(img.height);
                let feats = (y0..y1)
                    .flat_map(|y| (0..img.width).map(move |x| (x, y)))
                    .map(|(x, y)| extractor.extract(x, y))
                    .collect::<Result<Vec<_>>>()?;
                let preds = model.predict_batch(&feats)?;
                Ok(preds
                    .iter()
                    .zip(&img.pixels[y0 * img.width..y1 * img.width])
                    .map(|(p, &c)| p.apply(c))
                    .collect())
            })
            .collect::<Result<_>>()?;
        pixels = chunks.concat();
    } else {
        let adjusted: Vec<Vec<(u32, LabColor)>> = seg
            .segments()
            .par_iter()
            .zip(&predictions)
            .map(|(members, p)| {
                members
                    .iter()
                    .map(|&i| (i, p.apply(img.pixels[i as usize])))
                    .collect()
            })
            .collect();
        for seg_px in adjusted {
            for (i, c) in seg_px {
                pixels[i as usize] = c;
            }
        }
    }
    if pixels.iter().any(|c| !c.is_finite()) {
        return Err(contract("model produced non-finite colors"));
    }
    for c in &mut pixels {
        *c = c.clamped();
    }
    if opts.mode == EnhanceMode::Watercolor {
        let adjusted = LabImage::new(img.width, img.height, pixels.clone())?;
        for id in 0..seg.len() {
            let mean = seg.mean_color(id, &adjusted)?;
            for &i in seg.members(id)? {
                pixels[i as usize] = mean;
            }
        }
    }
    Ok(Enhancement {
        output: LabImage::new(img.width, img.height, pixels)?,
        analysis,
        predictions,
    })
}
