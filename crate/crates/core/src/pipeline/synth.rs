//! Synthetic scenes and styles with known ground truth.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::colorspace::{make_basis, BasisKind, ColorTransform, LabColor, LabImage};
use crate::error::{contract, Error, Result};
use crate::semantics::SemanticLabelMap;

/// Weight `w(x, y) = c0 + c1 x + c2 y + c3 x^2 + c4 x y + c5 y^2` over
/// normalized coordinates, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Modulation(pub [f64; 6]);

impl Modulation {
    pub fn weight(&self, x: f64, y: f64) -> f64 {
        let c = &self.0;
        (c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y).clamp(0.0, 1.0)
    }
}

/// Per-category color transforms that stand in for a photographer's style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStyleSpec {
    /// Transform of category `i` at index `i`.
    pub transforms: Vec<ColorTransform>,
    #[serde(default)]
    pub modulation: Option<Modulation>,
    /// Std of the Gaussian noise added to each Lab channel.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticStyleSpec {
    pub fn identity(categories: usize, kind: BasisKind) -> Self {
        SyntheticStyleSpec {
            transforms: vec![ColorTransform::identity(kind); categories],
            modulation: None,
            noise_std: 0.0,
            seed: 0,
        }
    }

    /// Three categories: warm shift on a, cool shift on a, and a saturation
    /// boost with a lightness curve. Modulated across the frame.
    pub fn three_category_demo() -> Self {
        let kind = BasisKind::Quadratic;
        let mut warm = ColorTransform::identity(kind);
        warm.set(1, 9, 15.0 / 110.0);
        let mut cool = ColorTransform::identity(kind);
        cool.set(1, 9, -15.0 / 110.0);
        let mut vivid = ColorTransform::identity(kind);
        vivid.set(0, 6, 1.3);
        vivid.set(0, 0, -0.3);
        vivid.set(1, 7, 1.4);
        vivid.set(2, 8, 1.4);
        SyntheticStyleSpec {
            transforms: vec![warm, cool, vivid],
            modulation: Some(Modulation([0.5, 0.3, 0.2, 0.0, 0.0, 0.0])),
            noise_std: 0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .transforms
            .first()
            .ok_or_else(|| contract("style spec needs at least one transform"))?;
        for (i, t) in self.transforms.iter().enumerate() {
            if t.kind() != first.kind() {
                return Err(contract(format!("transform {i} uses a different basis")));
            }
            ColorTransform::from_row_major(t.kind(), t.coeffs().to_vec())
                .map_err(|e| e.context(format!("transform {i}")))?;
        }
        if let Some(m) = &self.modulation {
            if m.0.iter().any(|v| !v.is_finite()) {
                return Err(contract("modulation coefficients must be finite"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(contract("noise std must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        spec.validate().map_err(|e| e.context(path.display()))?;
        Ok(spec)
    }
}

/// Target image for `img`. `seed` selects the noise realization.
pub fn synthesize_target(
    spec: &SyntheticStyleSpec,
    img: &LabImage,
    labels: &SemanticLabelMap,
    seed: u64,
) -> Result<LabImage> {
    spec.validate()?;
    if (labels.width, labels.height) != (img.width, img.height) {
        return Err(contract("label map and image sizes differ"));
    }
    if labels.category_bound() > spec.transforms.len() {
        return Err(Error::Compatibility(format!(
            "label map uses category {} but the style defines {}",
            labels.category_bound() - 1,
            spec.transforms.len()
        )));
    }
    let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
    let mut pixels = Vec::with_capacity(img.len());
    for (i, &c) in img.pixels.iter().enumerate() {
        let (x, y) = (i % img.width, i / img.width);
        let t = &spec.transforms[labels.labels()[i] as usize];
        let styled = LabColor::from_scaled(t.apply_scaled(&make_basis(c, t.kind())));
        let w = spec
            .modulation
            .map_or(1.0, |m| m.weight(norm(x, img.width), norm(y, img.height)));
        let mut out = LabColor::new(
            c.l + w * (styled.l - c.l),
            c.a + w * (styled.a - c.a),
            c.b + w * (styled.b - c.b),
        );
        if spec.noise_std > 0.0 {
            out.l += noise.sample(&mut rng);
            out.a += noise.sample(&mut rng);
            out.b += noise.sample(&mut rng);
        }
        pixels.push(out.clamped());
    }
    LabImage::new(img.width, img.height, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub categories: usize,
    /// Number of Voronoi regions.
    pub cells: usize,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 128,
            height: 128,
            categories: 3,
            cells: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: LabImage,
    pub labels: SemanticLabelMap,
}

struct Cell {
    x: f64,
    y: f64,
    category: u8,
    base: [f64; 3],
    gradient: [[f64; 2]; 3],
    wave: (f64, f64, f64),
}

/// Piecewise-smooth scene of Voronoi regions. Every category draws its
/// colors from the same distribution, so color alone does not reveal the
/// category. The image is quantized to 8-bit sRGB.
pub fn generate_scene(params: &SceneParams, index: usize) -> Result<Scene> {
    if params.width == 0 || params.height == 0 || params.cells == 0 {
        return Err(contract("scene needs a non-empty image and at least one cell"));
    }
    if params.categories == 0 || params.categories > 256 {
        return Err(contract("scene categories must be in 1..=256"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    let (w, h) = (params.width as f64, params.height as f64);
    let cells: Vec<Cell> = (0..params.cells)
        .map(|i| Cell {
            x: rng.gen_range(0.0..w),
            y: rng.gen_range(0.0..h),
            category: if i < params.categories {
                i as u8
            } else {
                rng.gen_range(0..params.categories) as u8
            },
            base: [rng.gen_range(30.0..80.0), rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)],
            gradient: std::array::from_fn(|_| [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)]),
            wave: (rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4), rng.gen_range(0.5..1.5)),
        })
        .collect();
    let mut owner = vec![0usize; params.width * params.height];
    for y in 0..params.height {
        for x in 0..params.width {
            let (px, py) = (x as f64, y as f64);
            let mut best = (0, f64::INFINITY);
            for (i, c) in cells.iter().enumerate() {
                let d = (c.x - px).powi(2) + (c.y - py).powi(2);
                if d < best.1 {
                    best = (i, d);
                }
            }
            owner[y * params.width + x] = best.0;
        }
    }
    let image = LabImage::from_fn(params.width, params.height, |x, y| {
        let c = &cells[owner[y * params.width + x]];
        let (u, v) = (x as f64 / w - 0.5, y as f64 / h - 0.5);
        let texture = c.wave.2 * (c.wave.0 * x as f64 + c.wave.1 * y as f64).sin();
        LabColor::new(
            c.base[0] + c.gradient[0][0] * u + c.gradient[0][1] * v + texture,
            c.base[1] + c.gradient[1][0] * u + c.gradient[1][1] * v,
            c.base[2] + c.gradient[2][0] * u + c.gradient[2][1] * v,
        )
        .clamped()
    })
    .quantized();
    let labels = SemanticLabelMap::new(
        params.width,
        params.height,
        owner.iter().map(|&o| cells[o].category).collect(),
    )?;
    Ok(Scene { image, labels })
}

/// One pixel of an input/target scatter plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub image: usize,
    pub x: usize,
    pub y: usize,
    pub category: u8,
    pub input_l: f64,
    pub input_a: f64,
    pub input_b: f64,
    pub target_l: f64,
    pub target_a: f64,
    pub target_b: f64,
}

/// Every `stride`-th pixel in row-major order.
pub fn scatter_points(
    image: usize,
    input: &LabImage,
    target: &LabImage,
    labels: &SemanticLabelMap,
    stride: usize,
) -> Vec<ScatterPoint> {
    (0..input.len())
        .step_by(stride.max(1))
        .map(|i| {
            let (c, t) = (input.pixels[i], target.pixels[i]);
            ScatterPoint {
                image,
                x: i % input.width,
                y: i / input.width,
                category: labels.labels()[i],
                input_l: c.l,
                input_a: c.a,
                input_b: c.b,
                target_l: t.l,
                target_a: t.a,
                target_b: t.b,
            }
        })
        .collect()
}
