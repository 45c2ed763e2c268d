//! Per-location regression targets, foreground mask and center-ness.

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps response-map cells back to search-region pixels.
///
/// The valid correlation grid is centered in the search region, so cell `i`
/// sits at `i * stride + (search_size - (size - 1) * stride) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    /// Cells per side of the (square) response map.
    pub size: usize,
    pub stride: usize,
    pub search_size: usize,
}

impl Grid {
    pub fn new(size: usize, stride: usize, search_size: usize) -> Self {
        Grid {
            size,
            stride,
            search_size,
        }
    }

    pub fn offset(&self) -> f64 {
        (self.search_size as f64 - ((self.size - 1) * self.stride) as f64) / 2.0
    }

    /// Pixel position `(x, y)` of the cell in column `col`, row `row`.
    pub fn location(&self, col: usize, row: usize) -> (f64, f64) {
        let off = self.offset();
        (
            (col * self.stride) as f64 + off,
            (row * self.stride) as f64 + off,
        )
    }

    pub fn cells(&self) -> usize {
        self.size * self.size
    }
}

/// Distances `(l, t, r, b)` to the ground-truth sides at every cell, plus the
/// indicator of cells whose four distances are all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTarget {
    pub dist: Tensor,
    pub mask: Tensor,
}

impl RegressionTarget {
    pub fn positives(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m > 0.0).count()
    }

    pub fn distances_at(&self, idx: usize) -> [f64; 4] {
        let n = self.mask.len();
        let d = self.dist.data();
        [d[idx], d[n + idx], d[2 * n + idx], d[3 * n + idx]]
    }

    pub fn is_positive(&self, idx: usize) -> bool {
        self.mask.data()[idx] > 0.0
    }

    /// Rebuilds the ground-truth box from a masked-in cell.
    pub fn reconstruct(&self, grid: &Grid, col: usize, row: usize) -> Option<BBox> {
        let idx = row * grid.size + col;
        if !self.is_positive(idx) {
            return None;
        }
        let [l, t, r, b] = self.distances_at(idx);
        let (x, y) = grid.location(col, row);
        Some(BBox::new(x - l, y - t, x + r, y + b))
    }
}

pub fn encode_targets(gt: &BBox, grid: &Grid) -> Result<RegressionTarget> {
    gt.require_well_formed()?;
    let n = grid.cells();
    let mut dist = vec![0.0; 4 * n];
    let mut mask = vec![0.0; n];
    for row in 0..grid.size {
        for col in 0..grid.size {
            let idx = row * grid.size + col;
            let (x, y) = grid.location(col, row);
            let d = [x - gt.x0, y - gt.y0, gt.x1 - x, gt.y1 - y];
            for (k, v) in d.iter().enumerate() {
                dist[k * n + idx] = *v;
            }
            if d.iter().all(|&v| v > 0.0) {
                mask[idx] = 1.0;
            }
        }
    }
    Ok(RegressionTarget {
        dist: Tensor::new(vec![4, grid.size, grid.size], dist)?,
        mask: Tensor::new(vec![1, grid.size, grid.size], mask)?,
    })
}

/// Center-ness of one set of distances; assumes all four are positive.
pub fn centerness(d: [f64; 4]) -> f64 {
    let [l, t, r, b] = d;
    (l.min(r) / l.max(r) * (t.min(b) / t.max(b))).sqrt()
}

/// Center-ness map; zero wherever the mask is zero.
pub fn centerness_score(target: &RegressionTarget) -> Tensor {
    let n = target.mask.len();
    let data = (0..n)
        .map(|i| {
            if target.is_positive(i) {
                centerness(target.distances_at(i))
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(target.mask.shape().to_vec(), data).expect("mask-shaped")
}

/// Validates a distance quadruple for the IoU loss.
pub(crate) fn require_positive(d: [f64; 4]) -> Result<()> {
    if d.iter().all(|&v| v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonPositiveDistance(d))
    }
}
