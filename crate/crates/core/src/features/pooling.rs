//! Multiscale pooling regions for the contextual descriptor.
//!
//! `tau + 1` nested squares `R_0 .. R_tau` share a center; each edge is three
//! times the previous one. The ring `R_{k+1} - R_k` is the outer eight cells
//! of a 3x3 grid of `lambda_k`-sized cells, so the rings tile exactly on the
//! integer grid. Region order: squares inner to outer, then for each ring
//! the eight cells clockwise from the top-left corner.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::semantics::Rect;

/// Cell positions of a ring inside the 3x3 grid, clockwise from top-left.
const RING_CELLS: [(i64, i64); 8] = [
    (0, 0),
    (1, 0),
    (2, 0),
    (2, 1),
    (2, 2),
    (1, 2),
    (0, 2),
    (0, 1),
];

/// Concrete layout for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolingLayout {
    pub tau: usize,
    /// Edge length of the innermost square, in pixels.
    pub lambda0: usize,
}

impl PoolingLayout {
    pub fn new(tau: usize, lambda0: usize) -> Result<Self> {
        if lambda0 == 0 {
            return Err(contract("lambda0 must be >= 1"));
        }
        if tau > 8 {
            return Err(contract(format!("tau = {tau} is unreasonably large")));
        }
        Ok(PoolingLayout { tau, lambda0 })
    }

    pub fn region_count(&self) -> usize {
        9 * self.tau + 1
    }

    /// Edge lengths `lambda_0 .. lambda_tau`.
    pub fn edges(&self) -> Vec<usize> {
        (0..=self.tau)
            .map(|k| self.lambda0 * 3usize.pow(k as u32))
            .collect()
    }

    /// Regions relative to a center at the origin.
    pub fn relative_regions(&self) -> Vec<Rect> {
        let edges = self.edges();
        // offset of each square's left/top edge from the center
        let mut half = Vec::with_capacity(edges.len());
        half.push((self.lambda0 / 2) as i64);
        for k in 1..edges.len() {
            half.push(half[k - 1] + edges[k - 1] as i64);
        }
        let mut out: Vec<Rect> = edges
            .iter()
            .zip(&half)
            .map(|(&e, &h)| Rect::new(-h, -h, -h + e as i64, -h + e as i64))
            .collect();
        for k in 0..self.tau {
            let cell = edges[k] as i64;
            let origin = -half[k + 1];
            for (i, j) in RING_CELLS {
                let x0 = origin + i * cell;
                let y0 = origin + j * cell;
                out.push(Rect::new(x0, y0, x0 + cell, y0 + cell));
            }
        }
        out
    }

    pub fn regions_at(&self, cx: usize, cy: usize) -> Vec<Rect> {
        self.relative_regions()
            .into_iter()
            .map(|r| r.translate(cx as i64, cy as i64))
            .collect()
    }
}

/// Image-independent pooling settings; `lambda0` is given for images whose
/// longer side equals `reference_size` and scaled proportionally otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub tau: usize,
    pub lambda0: f64,
    pub reference_size: usize,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        PoolingConfig {
            tau: 3,
            lambda0: 15.0,
            reference_size: 512,
        }
    }
}

impl PoolingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0) || self.reference_size == 0 {
            return Err(contract("pooling lambda0 and reference_size must be positive"));
        }
        PoolingLayout::new(self.tau, 1).map(|_| ())
    }

    pub fn layout_for(&self, width: usize, height: usize) -> PoolingLayout {
        let scale = width.max(height) as f64 / self.reference_size as f64;
        let lambda0 = (self.lambda0 * scale).round().max(1.0) as usize;
        PoolingLayout {
            tau: self.tau,
            lambda0,
        }
    }

    pub fn region_count(&self) -> usize {
        9 * self.tau + 1
    }
}

pub fn pooling_regions(cx: usize, cy: usize, layout: &PoolingLayout) -> Vec<Rect> {
    layout.regions_at(cx, cy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn region_counts() {
        assert_eq!(PoolingLayout::new(3, 15).unwrap().relative_regions().len(), 28);
        assert_eq!(PoolingLayout::new(2, 15).unwrap().relative_regions().len(), 19);
        assert_eq!(PoolingLayout::new(0, 5).unwrap().relative_regions().len(), 1);
    }

    #[test]
    fn geometric_edges() {
        assert_eq!(PoolingLayout::new(3, 15).unwrap().edges(), vec![15, 45, 135, 405]);
        let regions = PoolingLayout::new(3, 15).unwrap().relative_regions();
        for (k, e) in [15, 45, 135, 405].into_iter().enumerate() {
            assert_eq!(regions[k].width(), e);
            assert_eq!(regions[k].height(), e);
        }
    }

    #[test]
    fn odd_edges_are_centered() {
        let r = PoolingLayout::new(1, 15).unwrap().relative_regions();
        assert_eq!(r[0], Rect::new(-7, -7, 8, 8));
        assert_eq!(r[1], Rect::new(-22, -22, 23, 23));
    }

    #[test]
    fn rings_tile_exactly() {
        for lambda0 in [1, 2, 4, 15] {
            let layout = PoolingLayout::new(3, lambda0).unwrap();
            let regions = layout.relative_regions();
            for k in 0..3 {
                let outer = regions[k + 1];
                let mut cover: HashMap<(i64, i64), usize> = HashMap::new();
                let parts = std::iter::once(regions[k])
                    .chain(regions[4 + 8 * k..4 + 8 * (k + 1)].iter().copied());
                for r in parts {
                    for y in r.y0..r.y1 {
                        for x in r.x0..r.x1 {
                            *cover.entry((x, y)).or_default() += 1;
                        }
                    }
                }
                assert_eq!(cover.len() as i64, outer.area(), "lambda0={lambda0} ring {k}");
                assert!(cover.values().all(|&c| c == 1));
                assert!(cover.keys().all(|&(x, y)| outer.contains(x, y)));
            }
        }
    }

    #[test]
    fn lambda_scales_with_image() {
        let cfg = PoolingConfig::default();
        assert_eq!(cfg.layout_for(512, 384).lambda0, 15);
        assert_eq!(cfg.layout_for(128, 128).lambda0, 4);
        assert_eq!(cfg.layout_for(1024, 700).lambda0, 30);
        assert_eq!(cfg.layout_for(8, 8).lambda0, 1);
    }
}
