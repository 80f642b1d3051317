use serde::{Deserialize, Serialize};

use super::boxes::{iou3d, Box3};
use crate::error::{Error, Result};

/// Anchor shapes and the feature stride they are laid out on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub base_sizes: Vec<f64>,
    pub stride: usize,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec { base_sizes: vec![13.0, 16.0, 20.0, 28.0], stride: 4 }
    }
}

impl AnchorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_sizes.is_empty() {
            return Err(Error::InvalidAnchorSpec("base_sizes is empty".into()));
        }
        if let Some(s) = self.base_sizes.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidAnchorSpec(format!("base size {s} is not positive")));
        }
        if self.stride == 0 {
            return Err(Error::InvalidAnchorSpec("stride must be positive".into()));
        }
        Ok(())
    }

    /// Every (w, h, d) triple from `base_sizes`, so `|base_sizes|^3` per cell.
    pub fn anchors_per_cell(&self) -> usize {
        self.base_sizes.len().pow(3)
    }

    /// Extents of the `a`-th anchor shape; w varies slowest, d fastest.
    pub fn shape(&self, a: usize) -> [f64; 3] {
        let n = self.base_sizes.len();
        [self.base_sizes[a / (n * n)], self.base_sizes[(a / n) % n], self.base_sizes[a % n]]
    }

    pub fn max_size(&self) -> f64 {
        self.base_sizes.iter().copied().fold(0.0, f64::max)
    }
}

/// Dense lattice of anchors.
///
/// Boxes are enumerated z-major, then y, then x, then anchor shape, and are
/// computed on demand rather than stored: a 256³ volume carries 16.7M anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub spec: AnchorSpec,
    pub grid_dims: [usize; 3],
}

pub fn generate_anchors(spec: &AnchorSpec, volume_dims: [usize; 3]) -> Result<AnchorGrid> {
    spec.validate()?;
    if let Some(d) = volume_dims.iter().find(|d| **d < spec.stride) {
        return Err(Error::InvalidArgument(format!(
            "volume dimension {d} is smaller than stride {}",
            spec.stride
        )));
    }
    Ok(AnchorGrid {
        spec: spec.clone(),
        grid_dims: volume_dims.map(|d| d / spec.stride),
    })
}

impl AnchorGrid {
    pub fn anchors_per_cell(&self) -> usize {
        self.spec.anchors_per_cell()
    }

    pub fn num_cells(&self) -> usize {
        self.grid_dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.num_cells() * self.anchors_per_cell()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_index(&self, cell: [usize; 3]) -> usize {
        let [nx, ny, _] = self.grid_dims;
        (cell[2] * ny + cell[1]) * nx + cell[0]
    }

    pub fn cell_coords(&self, cell_index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.grid_dims;
        [cell_index % nx, (cell_index / nx) % ny, cell_index / (nx * ny)]
    }

    pub fn anchor_index(&self, cell: [usize; 3], shape: usize) -> usize {
        self.cell_index(cell) * self.anchors_per_cell() + shape
    }

    /// Splits a flat anchor index into (cell index, shape index).
    pub fn split_index(&self, index: usize) -> (usize, usize) {
        let a = self.anchors_per_cell();
        (index / a, index % a)
    }

    pub fn cell_center(&self, cell: [usize; 3]) -> [f64; 3] {
        let s = self.spec.stride as f64;
        cell.map(|c| (c as f64 + 0.5) * s)
    }

    pub fn box_at(&self, index: usize) -> Box3 {
        let (cell, shape) = self.split_index(index);
        let c = self.cell_center(self.cell_coords(cell));
        let s = self.spec.shape(shape);
        Box3 { cx: c[0], cy: c[1], cz: c[2], w: s[0], h: s[1], d: s[2] }
    }

    pub fn boxes(&self) -> impl Iterator<Item = Box3> + '_ {
        (0..self.len()).map(move |i| self.box_at(i))
    }

    /// Indices of all anchors whose box can intersect `target`.
    pub fn overlapping_candidates(&self, target: &Box3) -> Vec<usize> {
        let s = self.spec.stride as f64;
        let reach = 0.5 * self.spec.max_size();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let c = target.center();
        let half = target.size().map(|v| 0.5 * v);
        for a in 0..3 {
            // cell centre (i + 0.5) s must lie strictly within c ± (half + reach)
            let min = (c[a] - half[a] - reach) / s - 0.5;
            let max = (c[a] + half[a] + reach) / s - 0.5;
            let n = self.grid_dims[a] as f64;
            lo[a] = min.floor().clamp(0.0, n) as usize;
            hi[a] = (max.ceil() + 1.0).clamp(0.0, n) as usize;
        }
        let per = self.anchors_per_cell();
        let mut out = Vec::new();
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    let base = self.cell_index([i, j, k]) * per;
                    out.extend(base..base + per);
                }
            }
        }
        out
    }
}

/// Row-major anchors × ground-truth IoU matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IouMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl IouMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

pub fn pairwise_iou(anchors: &AnchorGrid, gts: &[Box3]) -> Result<IouMatrix> {
    if gts.is_empty() {
        return Err(Error::InvalidArgument("pairwise_iou needs at least one box".into()));
    }
    let cols = gts.len();
    let mut data = Vec::with_capacity(anchors.len() * cols);
    for anchor in anchors.boxes() {
        data.extend(gts.iter().map(|g| iou3d(&anchor, g)));
    }
    Ok(IouMatrix { rows: anchors.len(), cols, data })
}
