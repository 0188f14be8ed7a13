//! Graph-based superpixel segmentation.
//!
//! Felzenszwalb-Huttenlocher merging over the 8-connected pixel grid with
//! Euclidean Lab distances as edge weights. After the threshold pass and the
//! minimum-size pass, segments are split into 4-connected pieces and pieces
//! below `min_size` are folded into their closest 4-adjacent neighbour, so
//! every returned segment is 4-connected.

use serde::{Deserialize, Serialize};

use crate::colorspace::{LabColor, LabImage};
use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    /// Merge threshold scale, in Lab units times pixels.
    pub k: f64,
    /// Standard deviation of the Gaussian pre-smoothing, in pixels.
    pub sigma: f64,
    /// Minimum segment size in pixels.
    pub min_size: usize,
    /// Reserved for randomized tie-breaking; the current algorithm is
    /// deterministic and ignores it.
    #[serde(default)]
    pub seed: u64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            k: 2.0,
            sigma: 0.5,
            min_size: 8,
            seed: 0,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(contract(format!("segmentation k must be > 0, got {}", self.k)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(contract(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.min_size == 0 {
            return Err(contract("min_size must be >= 1"));
        }
        Ok(())
    }
}

/// A partition of the pixel grid into superpixels with dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelSegmentation {
    pub width: usize,
    pub height: usize,
    labels: Vec<u32>,
    segments: Vec<Vec<u32>>,
}

impl SuperpixelSegmentation {
    /// Build from a per-pixel labelling. Ids are re-densified in order of
    /// first appearance (row-major).
    pub fn from_labels(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        if raw.len() != width * height {
            return Err(contract("label buffer does not match dimensions"));
        }
        let mut remap = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        let mut segments: Vec<Vec<u32>> = Vec::new();
        for (i, &r) in raw.iter().enumerate() {
            let id = *remap.entry(r).or_insert_with(|| {
                segments.push(Vec::new());
                (segments.len() - 1) as u32
            });
            labels.push(id);
            segments[id as usize].push(i as u32);
        }
        Ok(SuperpixelSegmentation {
            width,
            height,
            labels,
            segments,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Per-pixel segment ids, row-major.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Row-major pixel indices of one segment, ascending.
    pub fn members(&self, id: usize) -> Result<&[u32]> {
        self.segments
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| contract(format!("segment id {id} out of range 0..{}", self.len())))
    }

    pub fn segments(&self) -> &[Vec<u32>] {
        &self.segments
    }

    /// Member pixel closest to the segment's mean coordinate; ties go to the
    /// first pixel in row-major order.
    pub fn centroid_pixel(&self, id: usize) -> Result<(usize, usize)> {
        let members = self.members(id)?;
        let n = members.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for &p in members {
            sx += (p as usize % self.width) as f64;
            sy += (p as usize / self.width) as f64;
        }
        let (mx, my) = (sx / n, sy / n);
        let mut best = (f64::INFINITY, 0usize);
        for &p in members {
            let (x, y) = ((p as usize % self.width) as f64, (p as usize / self.width) as f64);
            let d = (x - mx) * (x - mx) + (y - my) * (y - my);
            if d < best.0 {
                best = (d, p as usize);
            }
        }
        Ok((best.1 % self.width, best.1 / self.width))
    }

    pub fn mean_color(&self, id: usize, img: &LabImage) -> Result<LabColor> {
        if img.width != self.width || img.height != self.height {
            return Err(contract(format!(
                "image is {}x{} but segmentation is {}x{}",
                img.width, img.height, self.width, self.height
            )));
        }
        let members = self.members(id)?;
        let mut acc = [0.0; 3];
        for &p in members {
            let c = img.pixels[p as usize];
            acc[0] += c.l;
            acc[1] += c.a;
            acc[2] += c.b;
        }
        let n = members.len() as f64;
        Ok(LabColor::new(acc[0] / n, acc[1] / n, acc[2] / n))
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    /// Union by size; the surviving root inherits `weight` as internal difference.
    fn union(&mut self, a: u32, b: u32, weight: f64) -> u32 {
        let (big, small) = if self.size[a as usize] >= self.size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.internal[big as usize] = weight
            .max(self.internal[big as usize])
            .max(self.internal[small as usize]);
        big
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with replicated borders.
pub(crate) fn smooth(img: &LabImage, sigma: f64) -> Vec<[f64; 3]> {
    let (w, h) = (img.width, img.height);
    let src: Vec<[f64; 3]> = img.pixels.iter().map(|c| c.to_array()).collect();
    if sigma < 0.01 {
        return src;
    }
    let kernel = gaussian_kernel(sigma);
    let r = kernel.len() as isize - 1;
    let mut tmp = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for d in -r..=r {
                let xx = (x as isize + d).clamp(0, w as isize - 1) as usize;
                let wgt = kernel[d.unsigned_abs()];
                let p = src[y * w + xx];
                for c in 0..3 {
                    acc[c] += wgt * p[c];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for d in -r..=r {
                let yy = (y as isize + d).clamp(0, h as isize - 1) as usize;
                let wgt = kernel[d.unsigned_abs()];
                let p = tmp[yy * w + x];
                for c in 0..3 {
                    acc[c] += wgt * p[c];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

struct Edge {
    a: u32,
    b: u32,
    w: f64,
}

fn grid_edges(w: usize, h: usize, px: &[[f64; 3]]) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(w * h * 4);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut push = |j: usize| {
                edges.push(Edge {
                    a: i as u32,
                    b: j as u32,
                    w: dist(&px[i], &px[j]),
                })
            };
            if x + 1 < w {
                push(i + 1);
            }
            if y + 1 < h {
                push(i + w);
                if x + 1 < w {
                    push(i + w + 1);
                }
                if x > 0 {
                    push(i + w - 1);
                }
            }
        }
    }
    // stable: equal weights keep generation order
    edges.sort_by(|p, q| p.w.total_cmp(&q.w));
    edges
}

pub fn segment_image(img: &LabImage, params: &SegmentationParams) -> Result<SuperpixelSegmentation> {
    params.validate()?;
    let (w, h) = (img.width, img.height);
    if w == 0 || h == 0 {
        return Err(contract("cannot segment an empty image"));
    }
    let px = smooth(img, params.sigma);
    let edges = grid_edges(w, h, &px);

    let mut ds = DisjointSet::new(w * h);
    for e in &edges {
        let (ra, rb) = (ds.find(e.a), ds.find(e.b));
        if ra == rb {
            continue;
        }
        let ta = ds.internal[ra as usize] + params.k / ds.size[ra as usize] as f64;
        let tb = ds.internal[rb as usize] + params.k / ds.size[rb as usize] as f64;
        if e.w <= ta.min(tb) {
            ds.union(ra, rb, e.w);
        }
    }
    for e in &edges {
        let (ra, rb) = (ds.find(e.a), ds.find(e.b));
        if ra != rb
            && (ds.size[ra as usize] < params.min_size as u32
                || ds.size[rb as usize] < params.min_size as u32)
        {
            ds.union(ra, rb, e.w);
        }
    }

    let raw: Vec<u32> = (0..(w * h) as u32).map(|i| ds.find(i)).collect();
    let pieces = split_four_connected(w, h, &raw);
    let merged = absorb_small_pieces(w, h, &pieces, &px, params.min_size);
    SuperpixelSegmentation::from_labels(w, h, &merged)
}

/// Relabel so that each label is a single 4-connected component.
fn split_four_connected(w: usize, h: usize, raw: &[u32]) -> Vec<u32> {
    let mut out = vec![u32::MAX; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if out[start] != u32::MAX {
            continue;
        }
        out[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if out[j] == u32::MAX && raw[j] == raw[i] {
                    out[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        next += 1;
    }
    out
}

/// Merge 4-connected pieces smaller than `min_size` into the 4-adjacent
/// neighbour with the closest mean color (ties: lowest piece id). Pieces are
/// visited smallest first.
fn absorb_small_pieces(
    w: usize,
    h: usize,
    pieces: &[u32],
    px: &[[f64; 3]],
    min_size: usize,
) -> Vec<u32> {
    let n = pieces.iter().map(|&p| p as usize + 1).max().unwrap_or(0);
    let mut size = vec![0usize; n];
    let mut sum = vec![[0.0f64; 3]; n];
    for (i, &p) in pieces.iter().enumerate() {
        size[p as usize] += 1;
        for c in 0..3 {
            sum[p as usize][c] += px[i][c];
        }
    }
    if size.iter().all(|&s| s >= min_size) || n <= 1 {
        return pieces.to_vec();
    }

    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut link = |j: usize| {
                let (a, b) = (pieces[i], pieces[j]);
                if a != b {
                    adjacency[a as usize].push(b);
                    adjacency[b as usize].push(a);
                }
            };
            if x + 1 < w {
                link(i + 1);
            }
            if y + 1 < h {
                link(i + w);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }

    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn root(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }

    let mut groups: Vec<Vec<u32>> = (0..n as u32).map(|p| vec![p]).collect();
    let mut order: Vec<u32> = (0..n as u32).filter(|&p| size[p as usize] < min_size).collect();
    order.sort_by_key(|&p| (size[p as usize], p));
    for p in order {
        let r = root(&mut parent, p);
        if size[r as usize] >= min_size {
            continue;
        }
        let mean_r = {
            let s = sum[r as usize];
            let c = size[r as usize] as f64;
            [s[0] / c, s[1] / c, s[2] / c]
        };
        let mut best: Option<(f64, u32)> = None;
        for &m in &groups[r as usize] {
            for &nb in &adjacency[m as usize] {
                let rn = root(&mut parent, nb);
                if rn == r {
                    continue;
                }
                let s = sum[rn as usize];
                let c = size[rn as usize] as f64;
                let d = dist(&mean_r, &[s[0] / c, s[1] / c, s[2] / c]);
                if best.is_none_or(|(bd, bid)| d < bd || (d == bd && rn < bid)) {
                    best = Some((d, rn));
                }
            }
        }
        if let Some((_, target)) = best {
            parent[r as usize] = target;
            size[target as usize] += size[r as usize];
            for c in 0..3 {
                sum[target as usize][c] += sum[r as usize][c];
            }
            let moved = std::mem::take(&mut groups[r as usize]);
            groups[target as usize].extend(moved);
        }
    }
    pieces.iter().map(|&p| root(&mut parent, p)).collect()
}
