//! Color representations, sRGB <-> CIELab conversion and the color basis
//! used by the transform head.
//!
//! Conversions assume the sRGB transfer curve and a D65 white point. The
//! basis monomials are computed on a scaled Lab triple
//! `(L / 100, a / 110, b / 110)`; the same scaling is applied to regression
//! targets, so a transform maps scaled basis values to scaled Lab.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Divisors applied to `(L, a, b)` before building basis monomials.
pub const LAB_SCALE: [f64; 3] = [100.0, 110.0, 110.0];

pub const L_RANGE: (f64, f64) = (0.0, 100.0);
pub const AB_RANGE: (f64, f64) = (-128.0, 127.0);

/// sRGB (D65) linear RGB -> XYZ.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Reference white, taken as the XYZ of linear (1, 1, 1) so that white maps
/// to exactly zero chroma.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    let m = RGB_TO_XYZ;
    [
        m[0][0] + m[0][1] + m[0][2],
        m[1][0] + m[1][1] + m[1][2],
        m[2][0] + m[2][1] + m[2][2],
    ]
});

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            // cofactor of (c, r), i.e. transposed
            let (r0, r1) = ((c + 1) % 3, (c + 2) % 3);
            let (c0, c1) = ((r + 1) % 3, (r + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) * inv_det;
        }
    }
    out
}

/// sRGB color with channels in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RgbColor {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl RgbColor {
    pub fn new(r: f64, g: f64, b: f64) -> Self {
        RgbColor { r, g, b }
    }

    pub fn from_u8(px: [u8; 3]) -> Self {
        RgbColor::new(
            px[0] as f64 / 255.0,
            px[1] as f64 / 255.0,
            px[2] as f64 / 255.0,
        )
    }

    /// Round to 8-bit, clamping out-of-range channels.
    pub fn to_u8(self) -> [u8; 3] {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        [q(self.r), q(self.g), q(self.b)]
    }

    pub fn clamped(self) -> Self {
        RgbColor::new(
            self.r.clamp(0.0, 1.0),
            self.g.clamp(0.0, 1.0),
            self.b.clamp(0.0, 1.0),
        )
    }
}

/// CIELab color. `l` in `[0, 100]`, `a` and `b` nominally in `[-128, 127]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        LabColor { l, a, b }
    }

    pub fn clamped(self) -> Self {
        LabColor::new(
            self.l.clamp(L_RANGE.0, L_RANGE.1),
            self.a.clamp(AB_RANGE.0, AB_RANGE.1),
            self.b.clamp(AB_RANGE.0, AB_RANGE.1),
        )
    }

    /// `(L / 100, a / 110, b / 110)`.
    pub fn scaled(self) -> [f64; 3] {
        [
            self.l / LAB_SCALE[0],
            self.a / LAB_SCALE[1],
            self.b / LAB_SCALE[2],
        ]
    }

    pub fn from_scaled(v: [f64; 3]) -> Self {
        LabColor::new(v[0] * LAB_SCALE[0], v[1] * LAB_SCALE[1], v[2] * LAB_SCALE[2])
    }

    pub fn distance(self, other: LabColor) -> f64 {
        let (dl, da, db) = (self.l - other.l, self.a - other.a, self.b - other.b);
        (dl * dl + da * da + db * db).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.l, self.a, self.b]
    }

    pub fn is_finite(self) -> bool {
        self.l.is_finite() && self.a.is_finite() && self.b.is_finite()
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mul3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Relative luminance `Y` in `[0, 1]` of an sRGB color.
pub fn luminance(c: RgbColor) -> f64 {
    let lin = [srgb_to_linear(c.r), srgb_to_linear(c.g), srgb_to_linear(c.b)];
    mul3(&RGB_TO_XYZ, lin)[1]
}

/// Relative luminance recovered from a Lab lightness.
pub fn lightness_to_luminance(l: f64) -> f64 {
    lab_f_inv((l + 16.0) / 116.0) * WHITE[1]
}

pub fn rgb_to_lab(c: RgbColor) -> LabColor {
    let c = c.clamped();
    let lin = [srgb_to_linear(c.r), srgb_to_linear(c.g), srgb_to_linear(c.b)];
    let xyz = mul3(&RGB_TO_XYZ, lin);
    let w = *WHITE;
    let fx = lab_f(xyz[0] / w[0]);
    let fy = lab_f(xyz[1] / w[1]);
    let fz = lab_f(xyz[2] / w[2]);
    LabColor::new(
        (116.0 * fy - 16.0).clamp(L_RANGE.0, L_RANGE.1),
        500.0 * (fx - fy),
        200.0 * (fy - fz),
    )
}

/// Inverse of [`rgb_to_lab`]; out-of-gamut results are clamped per channel.
pub fn lab_to_rgb(c: LabColor) -> RgbColor {
    let fy = (c.l + 16.0) / 116.0;
    let fx = fy + c.a / 500.0;
    let fz = fy - c.b / 200.0;
    let w = *WHITE;
    let xyz = [lab_f_inv(fx) * w[0], lab_f_inv(fy) * w[1], lab_f_inv(fz) * w[2]];
    let lin = mul3(&XYZ_TO_RGB, xyz);
    RgbColor::new(
        linear_to_srgb(lin[0].max(0.0)),
        linear_to_srgb(lin[1].max(0.0)),
        linear_to_srgb(lin[2].max(0.0)),
    )
    .clamped()
}

/// Degree of the monomial lift of a Lab color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    /// `[L, a, b, 1]`
    Affine,
    /// `[L², a², b², La, Lb, ab, L, a, b, 1]`
    Quadratic,
}

impl BasisKind {
    pub const fn len(self) -> usize {
        match self {
            BasisKind::Affine => 4,
            BasisKind::Quadratic => 10,
        }
    }

    /// Column holding the linear `L`, `a`, `b` monomials.
    pub const fn linear_columns(self) -> [usize; 3] {
        match self {
            BasisKind::Affine => [0, 1, 2],
            BasisKind::Quadratic => [6, 7, 8],
        }
    }

    pub fn from_len(len: usize) -> Option<Self> {
        match len {
            4 => Some(BasisKind::Affine),
            10 => Some(BasisKind::Quadratic),
            _ => None,
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "affine" => Ok(BasisKind::Affine),
            "quadratic" => Ok(BasisKind::Quadratic),
            _ => Err(format!("unknown basis kind '{s}' (expected affine|quadratic)")),
        }
    }
}

/// Monomial lift of a scaled Lab color. The last entry is always 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorBasisVector {
    kind: BasisKind,
    values: [f64; 10],
}

impl ColorBasisVector {
    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values[..self.kind.len()]
    }
}

pub fn make_basis(c: LabColor, kind: BasisKind) -> ColorBasisVector {
    let [l, a, b] = c.scaled();
    let mut values = [0.0; 10];
    match kind {
        BasisKind::Affine => values[..4].copy_from_slice(&[l, a, b, 1.0]),
        BasisKind::Quadratic => {
            values = [l * l, a * a, b * b, l * a, l * b, a * b, l, a, b, 1.0];
        }
    }
    ColorBasisVector { kind, values }
}

/// A 3 x m matrix (m = 4 or 10) acting on [`ColorBasisVector`]s.
/// Coefficients are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorTransform {
    kind: BasisKind,
    coeffs: Vec<f64>,
}

impl ColorTransform {
    pub fn from_row_major(kind: BasisKind, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != 3 * kind.len() {
            return Err(contract(format!(
                "{kind:?} transform needs {} coefficients, got {}",
                3 * kind.len(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(contract("transform coefficients must be finite"));
        }
        Ok(ColorTransform { kind, coeffs })
    }

    pub fn zero(kind: BasisKind) -> Self {
        ColorTransform {
            kind,
            coeffs: vec![0.0; 3 * kind.len()],
        }
    }

    /// Rows select the linear `L`, `a`, `b` monomials with unit weight.
    pub fn identity(kind: BasisKind) -> Self {
        let mut t = Self::zero(kind);
        for (row, col) in kind.linear_columns().into_iter().enumerate() {
            t.set(row, col, 1.0);
        }
        t
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.coeffs[row * self.kind.len() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let m = self.kind.len();
        self.coeffs[row * m + col] = v;
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &ColorTransform, beta: f64) -> Result<Self> {
        if self.kind != other.kind {
            return Err(contract("cannot combine transforms of different basis kinds"));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| alpha * x + beta * y)
            .collect();
        Ok(ColorTransform {
            kind: self.kind,
            coeffs,
        })
    }

    /// Product with a basis vector, in scaled Lab units.
    pub fn apply_scaled(&self, v: &ColorBasisVector) -> [f64; 3] {
        let m = self.kind.len();
        let vals = v.values();
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.coeffs[r * m..(r + 1) * m];
            *o = row.iter().zip(vals).map(|(w, x)| w * x).sum();
        }
        out
    }
}

/// Apply a transform to a color without clamping the result.
pub fn apply_transform_unclamped(t: &ColorTransform, c: LabColor) -> Result<LabColor> {
    let basis = make_basis(c, t.kind());
    Ok(LabColor::from_scaled(t.apply_scaled(&basis)))
}

/// Apply a transform and clamp to Lab ranges.
pub fn apply_transform(t: &ColorTransform, c: LabColor) -> Result<LabColor> {
    apply_transform_unclamped(t, c).map(LabColor::clamped)
}

/// Apply a transform to a precomputed basis vector; checks the basis kind.
pub fn apply_to_basis(t: &ColorTransform, v: &ColorBasisVector) -> Result<LabColor> {
    if t.kind() != v.kind() {
        return Err(contract(format!(
            "transform has {} columns but basis vector has {} entries",
            t.kind().len(),
            v.kind().len()
        )));
    }
    Ok(LabColor::from_scaled(t.apply_scaled(v)))
}

/// Row-major image of Lab colors.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<LabColor>,
}

impl LabImage {
    pub fn new(width: usize, height: usize, pixels: Vec<LabColor>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(contract(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(LabImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, c: LabColor) -> Self {
        LabImage {
            width,
            height,
            pixels: vec![c; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> LabColor) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        LabImage {
            width,
            height,
            pixels,
        }
    }

    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(contract("RGB buffer length does not match dimensions"));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| rgb_to_lab(RgbColor::from_u8([p[0], p[1], p[2]])))
            .collect();
        Ok(LabImage {
            width,
            height,
            pixels,
        })
    }

    /// Convert to packed 8-bit sRGB, clamping Lab first.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 3);
        for &p in &self.pixels {
            out.extend_from_slice(&lab_to_rgb(p.clamped()).to_u8());
        }
        out
    }

    /// Round trip through 8-bit sRGB, as writing and re-reading a PNG would.
    pub fn quantized(&self) -> LabImage {
        LabImage::from_rgb8(self.width, self.height, &self.to_rgb8())
            .expect("dimensions preserved")
    }

    pub fn get(&self, x: usize, y: usize) -> LabColor {
        self.pixels[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Mean per-pixel Euclidean Lab distance between two images of equal size.
pub fn mean_lab_distance(a: &LabImage, b: &LabImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(contract(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| p.distance(*q))
        .sum();
    Ok(total / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_lab(c: LabColor, l: f64, a: f64, b: f64, tol: f64) {
        assert_abs_diff_eq!(c.l, l, epsilon = tol);
        assert_abs_diff_eq!(c.a, a, epsilon = tol);
        assert_abs_diff_eq!(c.b, b, epsilon = tol);
    }

    #[test]
    fn white_and_black_points() {
        assert_lab(rgb_to_lab(RgbColor::new(1.0, 1.0, 1.0)), 100.0, 0.0, 0.0, 1e-9);
        assert_lab(rgb_to_lab(RgbColor::new(0.0, 0.0, 0.0)), 0.0, 0.0, 0.0, 1e-9);

        let w = lab_to_rgb(LabColor::new(100.0, 0.0, 0.0));
        for v in [w.r, w.g, w.b] {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-3);
        }
        let k = lab_to_rgb(LabColor::new(0.0, 0.0, 0.0));
        for v in [k.r, k.g, k.b] {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pure_red_matches_reference() {
        // reference values from the standard D65 sRGB formulas
        assert_lab(rgb_to_lab(RgbColor::new(1.0, 0.0, 0.0)), 53.24, 80.09, 67.20, 0.05);
    }

    #[test]
    fn grid_round_trip() {
        let mut worst = 0.0f64;
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    let c = RgbColor::new(i as f64 / 9.0, j as f64 / 9.0, k as f64 / 9.0);
                    let back = lab_to_rgb(rgb_to_lab(c));
                    worst = worst
                        .max((back.r - c.r).abs())
                        .max((back.g - c.g).abs())
                        .max((back.b - c.b).abs());
                }
            }
        }
        assert!(worst <= 1e-4, "worst channel error {worst}");
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let c = lab_to_rgb(LabColor::new(50.0, 127.0, -128.0));
        for v in [c.r, c.g, c.b] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn basis_expansions() {
        let z = make_basis(LabColor::new(0.0, 0.0, 0.0), BasisKind::Quadratic);
        assert_eq!(z.values(), &[0., 0., 0., 0., 0., 0., 0., 0., 0., 1.]);

        let c = LabColor::new(50.0, 10.0, -10.0);
        let aff = make_basis(c, BasisKind::Affine);
        assert_eq!(aff.values(), &[0.5, 10.0 / 110.0, -10.0 / 110.0, 1.0]);

        let (l, a, b) = (0.5, 10.0 / 110.0, -10.0 / 110.0);
        let q = make_basis(c, BasisKind::Quadratic);
        assert_eq!(
            q.values(),
            &[l * l, a * a, b * b, l * a, l * b, a * b, l, a, b, 1.0]
        );
    }

    #[test]
    fn transform_examples() {
        let c = LabColor::new(40.0, 5.0, -5.0);
        for kind in [BasisKind::Affine, BasisKind::Quadratic] {
            let id = apply_transform_unclamped(&ColorTransform::identity(kind), c).unwrap();
            assert_lab(id, 40.0, 5.0, -5.0, 1e-12);

            let zero =
                apply_transform(&ColorTransform::zero(kind), LabColor::new(50.0, 0.0, 0.0)).unwrap();
            assert_eq!(zero, LabColor::new(0.0, 0.0, 0.0));

            let mut dbl = ColorTransform::identity(kind);
            dbl.set(0, kind.linear_columns()[0], 2.0);
            assert_lab(apply_transform(&dbl, c).unwrap(), 80.0, 5.0, -5.0, 1e-12);
        }
    }

    #[test]
    fn transform_shape_checked() {
        assert!(ColorTransform::from_row_major(BasisKind::Quadratic, vec![0.0; 12]).is_err());
        let t = ColorTransform::identity(BasisKind::Affine);
        let v = make_basis(LabColor::new(1.0, 2.0, 3.0), BasisKind::Quadratic);
        assert!(matches!(
            apply_to_basis(&t, &v),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn apply_clamps_only_on_request() {
        let mut t = ColorTransform::identity(BasisKind::Affine);
        t.set(0, 0, 3.0);
        let c = LabColor::new(60.0, 0.0, 0.0);
        assert_abs_diff_eq!(apply_transform_unclamped(&t, c).unwrap().l, 180.0, epsilon = 1e-9);
        assert_eq!(apply_transform(&t, c).unwrap().l, 100.0);
    }
}
