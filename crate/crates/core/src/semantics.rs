//! Semantic label maps: fusion of parsing and detection results, cleanup by
//! per-superpixel voting, and per-category integral images for constant-time
//! rectangle histograms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::segmentation::SuperpixelSegmentation;

pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.5;

/// Ordered list of category names; the position is the category index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryTable {
    names: Vec<String>,
}

impl CategoryTable {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Format("category table is empty".into()));
        }
        if names.len() > 256 {
            return Err(Error::Format(format!(
                "{} categories do not fit in an 8-bit label map",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::Format(format!("category {i} has an empty name")));
            }
            if names[..i].contains(n) {
                return Err(Error::Format(format!("duplicate category name '{n}'")));
            }
        }
        Ok(CategoryTable { names })
    }

    /// One name per line; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let names = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::new(names)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for CategoryTable {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        CategoryTable::new(names)
    }
}

impl From<CategoryTable> for Vec<String> {
    fn from(t: CategoryTable) -> Self {
        t.names
    }
}

/// Per-pixel category indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticLabelMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<u8>,
}

impl SemanticLabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(contract(format!(
                "{width}x{height} label map needs {} entries, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(SemanticLabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        SemanticLabelMap {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Largest label + 1.
    pub fn category_bound(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Fails if any label is not a valid index into a table of `n` categories.
    pub fn check_categories(&self, n: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize >= n) {
            Some(bad) => Err(Error::Compatibility(format!(
                "label map uses category {bad} but only {n} categories are defined"
            ))),
            None => Ok(()),
        }
    }

    /// Single-channel 8-bit PNG; pixel value = category index.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("buffer size checked at construction")
            .save(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })
    }
}

/// Detector output for one category, confidences in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub category: usize,
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(category: usize, width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(contract("confidence buffer does not match dimensions"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(contract(format!("confidence {v} outside [0, 1]")));
        }
        Ok(ConfidenceMap {
            category,
            width,
            height,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Single-channel 8-bit PNG; value / 255 = confidence.
    pub fn load(category: usize, path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        let values = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        Self::new(category, w as usize, h as usize, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let raw = self
            .values
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size checked at construction")
            .save(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })
    }
}

/// Overwrite parsing labels with the most confident detection wherever that
/// confidence is strictly above `threshold`. Equal confidences resolve to
/// the lower category index.
pub fn fuse_label_maps(
    parsing: &SemanticLabelMap,
    detections: &[ConfidenceMap],
    threshold: f64,
) -> Result<SemanticLabelMap> {
    for d in detections {
        if d.width != parsing.width || d.height != parsing.height {
            return Err(contract(format!(
                "detection map for category {} is {}x{}, parsing map is {}x{}",
                d.category, d.width, d.height, parsing.width, parsing.height
            )));
        }
        if d.category > u8::MAX as usize {
            return Err(contract(format!("detection category {} out of range", d.category)));
        }
    }
    let mut out = parsing.clone();
    for (i, label) in out.labels.iter_mut().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for d in detections {
            let v = d.values[i];
            let better = match best {
                None => true,
                Some((bv, bc)) => v > bv || (v == bv && d.category < bc),
            };
            if better {
                best = Some((v, d.category));
            }
        }
        if let Some((v, c)) = best {
            if v > threshold {
                *label = c as u8;
            }
        }
    }
    Ok(out)
}

/// Replace every label inside a segment with the segment's modal label
/// (ties go to the lowest category index).
pub fn cleanup_labels(
    map: &SemanticLabelMap,
    seg: &SuperpixelSegmentation,
) -> Result<SemanticLabelMap> {
    if map.width != seg.width || map.height != seg.height {
        return Err(contract(format!(
            "label map is {}x{} but segmentation is {}x{}",
            map.width, map.height, seg.width, seg.height
        )));
    }
    let mut out = map.clone();
    let mut counts = [0u32; 256];
    for members in seg.segments() {
        counts.fill(0);
        for &p in members {
            counts[map.labels[p as usize] as usize] += 1;
        }
        let mut modal = 0usize;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[modal] {
                modal = c;
            }
        }
        for &p in members {
            out.labels[p as usize] = modal as u8;
        }
    }
    Ok(out)
}

/// Half-open, axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`. Coordinates
/// may lie outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub const fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> i64 {
        (self.x1 - self.x0).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.y1 - self.y0).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn clip(&self, width: usize, height: usize) -> Rect {
        let x0 = self.x0.clamp(0, width as i64);
        let y0 = self.y0.clamp(0, height as i64);
        Rect {
            x0,
            y0,
            x1: self.x1.clamp(x0, width as i64),
            y1: self.y1.clamp(y0, height as i64),
        }
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Rect {
        Rect::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }
}

/// One summed-area table per category. `table(c)[y * (w + 1) + x]` counts
/// category-`c` pixels in `[0, x) x [0, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralLabelStack {
    pub width: usize,
    pub height: usize,
    categories: usize,
    tables: Vec<u32>,
}

impl IntegralLabelStack {
    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn table(&self, category: usize) -> &[u32] {
        let stride = (self.width + 1) * (self.height + 1);
        &self.tables[category * stride..(category + 1) * stride]
    }

    /// Count of category-`c` pixels in `[0, x) x [0, y)`.
    pub fn prefix(&self, category: usize, x: usize, y: usize) -> u32 {
        self.table(category)[y * (self.width + 1) + x]
    }
}

pub fn build_integral_stack(map: &SemanticLabelMap, n: usize) -> Result<IntegralLabelStack> {
    map.check_categories(n)
        .map_err(|e| contract(e.to_string()))?;
    let (w, h) = (map.width, map.height);
    let stride = (w + 1) * (h + 1);
    let mut tables = vec![0u32; n * stride];
    let mut row = vec![0u32; n];
    for y in 0..h {
        row.fill(0);
        for x in 0..w {
            row[map.labels[y * w + x] as usize] += 1;
            let at = (y + 1) * (w + 1) + x + 1;
            let above = y * (w + 1) + x + 1;
            for (c, &r) in row.iter().enumerate() {
                let t = &mut tables[c * stride..(c + 1) * stride];
                t[at] = t[above] + r;
            }
        }
    }
    Ok(IntegralLabelStack {
        width: w,
        height: h,
        categories: n,
        tables,
    })
}

/// Category counts inside `rect` after clipping to the image.
pub fn rect_histogram(stack: &IntegralLabelStack, rect: Rect) -> Vec<u32> {
    let mut out = vec![0u32; stack.categories];
    rect_histogram_into(stack, rect, &mut out);
    out
}

pub(crate) fn rect_histogram_into(stack: &IntegralLabelStack, rect: Rect, out: &mut [u32]) {
    let r = rect.clip(stack.width, stack.height);
    if r.is_empty() {
        out.fill(0);
        return;
    }
    let w1 = stack.width + 1;
    let stride = w1 * (stack.height + 1);
    let (x0, y0, x1, y1) = (r.x0 as usize, r.y0 as usize, r.x1 as usize, r.y1 as usize);
    for (c, o) in out.iter_mut().enumerate() {
        let t = &stack.tables[c * stride..];
        *o = t[y1 * w1 + x1] + t[y0 * w1 + x0] - t[y0 * w1 + x1] - t[y1 * w1 + x0];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_table_parsing() {
        let t = CategoryTable::parse("sky\nperson\n\ncar\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.index_of("car"), Some(2));
        assert!(CategoryTable::parse("sky\nsky\n").is_err());
        assert!(CategoryTable::parse("\n\n").is_err());
    }

    #[test]
    fn fusion_rules() {
        let parsing = SemanticLabelMap::filled(2, 2, 0);
        assert_eq!(fuse_label_maps(&parsing, &[], 0.5).unwrap(), parsing);

        let full = ConfidenceMap::new(2, 2, 2, vec![1.0; 4]).unwrap();
        let fused = fuse_label_maps(&parsing, &[full], 0.5).unwrap();
        assert!(fused.labels().iter().all(|&l| l == 2));

        // car 0.7, person 0.9 at pixel 0; both below threshold at pixel 1
        let car = ConfidenceMap::new(1, 2, 1, vec![0.7, 0.3]).unwrap();
        let person = ConfidenceMap::new(2, 2, 1, vec![0.9, 0.4]).unwrap();
        let p = SemanticLabelMap::filled(2, 1, 0);
        let fused = fuse_label_maps(&p, &[car, person], 0.5).unwrap();
        assert_eq!(fused.labels(), &[2, 0]);

        let wrong = ConfidenceMap::new(1, 3, 3, vec![0.0; 9]).unwrap();
        assert!(fuse_label_maps(&p, &[wrong], 0.5).is_err());
    }

    #[test]
    fn threshold_one_keeps_parsing() {
        let parsing = SemanticLabelMap::new(3, 1, vec![0, 1, 0]).unwrap();
        let d = ConfidenceMap::new(2, 3, 1, vec![1.0, 1.0, 0.2]).unwrap();
        assert_eq!(fuse_label_maps(&parsing, &[d], 1.0).unwrap(), parsing);
    }

    #[test]
    fn cleanup_votes() {
        // one segment: A x5, B x2 -> all A
        let seg = SuperpixelSegmentation::from_labels(7, 1, &[0; 7]).unwrap();
        let m = SemanticLabelMap::new(7, 1, vec![1, 1, 0, 1, 1, 0, 1]).unwrap();
        let c = cleanup_labels(&m, &seg).unwrap();
        assert!(c.labels().iter().all(|&l| l == 1));

        // tie 3:3 -> lower index
        let seg = SuperpixelSegmentation::from_labels(6, 1, &[0; 6]).unwrap();
        let m = SemanticLabelMap::new(6, 1, vec![3, 2, 3, 2, 3, 2]).unwrap();
        let c = cleanup_labels(&m, &seg).unwrap();
        assert!(c.labels().iter().all(|&l| l == 2));

        let uniform = SemanticLabelMap::filled(6, 1, 4);
        assert_eq!(cleanup_labels(&uniform, &seg).unwrap(), uniform);

        let other = SemanticLabelMap::filled(5, 1, 0);
        assert!(cleanup_labels(&other, &seg).is_err());
    }

    #[test]
    fn small_stacks() {
        let m = SemanticLabelMap::new(1, 1, vec![2]).unwrap();
        let s = build_integral_stack(&m, 3).unwrap();
        assert_eq!(s.prefix(2, 1, 1), 1);
        assert_eq!(s.prefix(0, 1, 1), 0);
        assert_eq!(s.prefix(1, 1, 1), 0);
        assert_eq!(s.prefix(2, 0, 1), 0);

        let m = SemanticLabelMap::filled(4, 4, 0);
        let s = build_integral_stack(&m, 1).unwrap();
        assert_eq!(s.prefix(0, 4, 4), 16);
        assert_eq!(rect_histogram(&s, Rect::new(0, 0, 4, 4)), vec![16]);
        assert_eq!(rect_histogram(&s, Rect::new(2, 2, 2, 9)), vec![0]);
        assert_eq!(rect_histogram(&s, Rect::new(10, 10, 20, 20)), vec![0]);
        assert_eq!(rect_histogram(&s, Rect::new(-5, -5, 2, 1)), vec![2]);

        assert!(build_integral_stack(&SemanticLabelMap::filled(2, 2, 5), 3).is_err());
    }
}
