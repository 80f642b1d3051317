use crate::error::{Error, Result};
use crate::volume::Volume;

/// Per-cell feature vectors on the anchor lattice, cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid_dims: [usize; 3],
    pub feature_dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn num_cells(&self) -> usize {
        self.grid_dims.iter().product()
    }

    pub fn cell(&self, index: usize) -> &[f32] {
        &self.data[index * self.feature_dim..(index + 1) * self.feature_dim]
    }
}

/// Maps a volume to one feature vector per stride-sized cell.
pub trait FeatureExtractor {
    fn feature_dim(&self) -> usize;
    fn stride(&self) -> usize;
    fn extract(&self, volume: &Volume) -> Result<FeatureMap>;
}

/// Hand-crafted multi-scale descriptor.
///
/// The volume is first standardised to zero mean and unit variance. For
/// windows of 4, 8 and 16 voxels centred on the cell it then records mean,
/// variance, min and max intensity, followed by three signed context
/// gradients: the mean of a window displaced forward along each axis minus
/// the mean of the one displaced backward. Each statistic is rescaled so
/// that landmark-sized structures give values of order one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceExtractor {
    pub stride: usize,
    /// Side of the windows compared by the context gradients.
    pub context_window: usize,
    /// Displacement of each context window from the cell centre.
    pub context_offset: usize,
}

impl Default for ReferenceExtractor {
    fn default() -> Self {
        ReferenceExtractor { stride: 4, context_window: 16, context_offset: 12 }
    }
}

pub const REFERENCE_FEATURE_DIM: usize = 15;
const WINDOWS: [usize; 3] = [4, 8, 16];
const MEAN_SCALE: f64 = 0.25;
const VARIANCE_SCALE: f64 = 0.1;
const EXTREMA_SCALE: f64 = 0.1;
const GRADIENT_SCALE: f64 = 1.0;

/// The volume shifted and scaled to zero mean and unit variance.
fn standardized(volume: &Volume) -> Volume {
    let n = volume.data.len().max(1) as f64;
    let mean = volume.data.iter().map(|v| *v as f64).sum::<f64>() / n;
    let var = volume.data.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let mut out = volume.clone();
    for v in &mut out.data {
        *v = ((*v as f64 - mean) / sd) as f32;
    }
    out
}

/// Inclusive-exclusive prefix sums of values and squares.
struct Integral {
    dims: [usize; 3],
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(v: &Volume) -> Self {
        let [nx, ny, nz] = v.dims;
        let (sx, sy) = (nx + 1, ny + 1);
        let len = sx * sy * (nz + 1);
        let mut sum = vec![0.0; len];
        let mut sq = vec![0.0; len];
        let at = |x: usize, y: usize, z: usize| x + sx * (y + sy * z);
        for z in 0..nz {
            for y in 0..ny {
                let mut row = 0.0;
                let mut row_sq = 0.0;
                for x in 0..nx {
                    let val = v.get(x, y, z) as f64;
                    row += val;
                    row_sq += val * val;
                    let i = at(x + 1, y + 1, z + 1);
                    sum[i] = row + sum[at(x + 1, y, z + 1)] + sum[at(x + 1, y + 1, z)] - sum[at(x + 1, y, z)];
                    sq[i] = row_sq + sq[at(x + 1, y, z + 1)] + sq[at(x + 1, y + 1, z)] - sq[at(x + 1, y, z)];
                }
            }
        }
        Integral { dims: v.dims, sum, sq }
    }

    fn box_sums(&self, lo: [usize; 3], hi: [usize; 3]) -> (f64, f64) {
        let sx = self.dims[0] + 1;
        let sy = self.dims[1] + 1;
        let at = |x: usize, y: usize, z: usize| x + sx * (y + sy * z);
        let eval = |t: &[f64]| {
            t[at(hi[0], hi[1], hi[2])] - t[at(lo[0], hi[1], hi[2])] - t[at(hi[0], lo[1], hi[2])] - t[at(hi[0], hi[1], lo[2])]
                + t[at(lo[0], lo[1], hi[2])]
                + t[at(lo[0], hi[1], lo[2])]
                + t[at(hi[0], lo[1], lo[2])]
                - t[at(lo[0], lo[1], lo[2])]
        };
        (eval(&self.sum), eval(&self.sq))
    }
}

/// Window `[centre - size/2, centre + size/2)` clipped to `[0, n)`, never empty.
fn clip(centre: isize, size: usize, n: usize) -> (usize, usize) {
    let half = (size / 2) as isize;
    let lo = (centre - half).clamp(0, n as isize - 1);
    let hi = (centre + size as isize - half).clamp(lo + 1, n as isize);
    (lo as usize, hi as usize)
}

/// Min and max over per-cell windows, computed one axis at a time.
fn window_extrema(v: &Volume, grid: [usize; 3], stride: usize, size: usize) -> (Vec<f32>, Vec<f32>) {
    let ranges: Vec<Vec<(usize, usize)>> = (0..3)
        .map(|a| (0..grid[a]).map(|i| clip((i * stride + stride / 2) as isize, size, v.dims[a])).collect())
        .collect();

    // reduce along x: [gx, ny, nz]
    let [nx, ny, nz] = v.dims;
    let [gx, gy, gz] = grid;
    let mut mn = vec![f32::INFINITY; gx * ny * nz];
    let mut mx = vec![f32::NEG_INFINITY; gx * ny * nz];
    for z in 0..nz {
        for y in 0..ny {
            let row = &v.data[nx * (y + ny * z)..nx * (y + ny * z) + nx];
            for (i, &(lo, hi)) in ranges[0].iter().enumerate() {
                let o = i + gx * (y + ny * z);
                for &val in &row[lo..hi] {
                    mn[o] = mn[o].min(val);
                    mx[o] = mx[o].max(val);
                }
            }
        }
    }
    // along y: [gx, gy, nz]
    let mut mn2 = vec![f32::INFINITY; gx * gy * nz];
    let mut mx2 = vec![f32::NEG_INFINITY; gx * gy * nz];
    for z in 0..nz {
        for (j, &(lo, hi)) in ranges[1].iter().enumerate() {
            for y in lo..hi {
                for i in 0..gx {
                    let o = i + gx * (j + gy * z);
                    let s = i + gx * (y + ny * z);
                    mn2[o] = mn2[o].min(mn[s]);
                    mx2[o] = mx2[o].max(mx[s]);
                }
            }
        }
    }
    // along z: [gx, gy, gz]
    let mut mn3 = vec![f32::INFINITY; gx * gy * gz];
    let mut mx3 = vec![f32::NEG_INFINITY; gx * gy * gz];
    for (k, &(lo, hi)) in ranges[2].iter().enumerate() {
        for z in lo..hi {
            for j in 0..gy {
                for i in 0..gx {
                    let o = i + gx * (j + gy * k);
                    let s = i + gx * (j + gy * z);
                    mn3[o] = mn3[o].min(mn2[s]);
                    mx3[o] = mx3[o].max(mx2[s]);
                }
            }
        }
    }
    (mn3, mx3)
}

impl FeatureExtractor for ReferenceExtractor {
    fn feature_dim(&self) -> usize {
        REFERENCE_FEATURE_DIM
    }

    fn stride(&self) -> usize {
        self.stride
    }

    fn extract(&self, volume: &Volume) -> Result<FeatureMap> {
        let s = self.stride;
        if s == 0 || volume.dims.iter().any(|d| *d < s) {
            return Err(Error::DimensionMismatch(format!(
                "volume {:?} is smaller than stride {s}",
                volume.dims
            )));
        }
        let volume = &standardized(volume);
        let grid = volume.dims.map(|d| d / s);
        let n_cells: usize = grid.iter().product();
        let integral = Integral::new(volume);
        let extrema: Vec<(Vec<f32>, Vec<f32>)> = WINDOWS.iter().map(|&w| window_extrema(volume, grid, s, w)).collect();

        let mean_over = |centre: [isize; 3], size: usize| -> (f64, f64) {
            let mut lo = [0; 3];
            let mut hi = [0; 3];
            for a in 0..3 {
                (lo[a], hi[a]) = clip(centre[a], size, volume.dims[a]);
            }
            let n = ((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])) as f64;
            let (sum, sq) = integral.box_sums(lo, hi);
            let mean = sum / n;
            (mean, (sq / n - mean * mean).max(0.0))
        };

        let mut data = Vec::with_capacity(n_cells * REFERENCE_FEATURE_DIM);
        for k in 0..grid[2] {
            for j in 0..grid[1] {
                for i in 0..grid[0] {
                    let centre = [i, j, k].map(|c| (c * s + s / 2) as isize);
                    let cell = i + grid[0] * (j + grid[1] * k);
                    for (w, &size) in WINDOWS.iter().enumerate() {
                        let (mean, var) = mean_over(centre, size);
                        data.push((mean * MEAN_SCALE) as f32);
                        data.push((var * VARIANCE_SCALE) as f32);
                        data.push((extrema[w].0[cell] as f64 * EXTREMA_SCALE) as f32);
                        data.push((extrema[w].1[cell] as f64 * EXTREMA_SCALE) as f32);
                    }
                    for a in 0..3 {
                        let mut fwd = centre;
                        let mut back = centre;
                        fwd[a] += self.context_offset as isize;
                        back[a] -= self.context_offset as isize;
                        let g = mean_over(fwd, self.context_window).0 - mean_over(back, self.context_window).0;
                        data.push((g * GRADIENT_SCALE) as f32);
                    }
                }
            }
        }
        Ok(FeatureMap { grid_dims: grid, feature_dim: REFERENCE_FEATURE_DIM, data })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Volume::zeros(dims, 1.3);
        for x in &mut v.data {
            *x = rng.random_range(0.0..1.0);
        }
        v
    }

    /// Direct per-voxel statistics for one window.
    fn brute_stats(v: &Volume, lo: [usize; 3], hi: [usize; 3]) -> (f64, f64, f32, f32) {
        let mut vals = Vec::new();
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    vals.push(v.get(x, y, z));
                }
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().map(|v| *v as f64).sum::<f64>() / n;
        let var = vals.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
        let mn = vals.iter().copied().fold(f32::INFINITY, f32::min);
        let mx = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        (mean, var, mn, mx)
    }

    #[test]
    fn matches_brute_force_statistics() {
        let raw = random_volume([20, 16, 12], 1);
        let f = ReferenceExtractor::default().extract(&raw).unwrap();
        let v = standardized(&raw);
        assert_eq!(f.grid_dims, [5, 4, 3]);
        for cell in [[0, 0, 0], [2, 1, 1], [4, 3, 2]] {
            let idx = cell[0] + 5 * (cell[1] + 4 * cell[2]);
            let feats = f.cell(idx);
            for (w, &size) in WINDOWS.iter().enumerate() {
                let mut lo = [0; 3];
                let mut hi = [0; 3];
                for a in 0..3 {
                    (lo[a], hi[a]) = clip((cell[a] * 4 + 2) as isize, size, v.dims[a]);
                }
                let (mean, var, mn, mx) = brute_stats(&v, lo, hi);
                assert!((feats[4 * w] as f64 - mean * MEAN_SCALE).abs() < 1e-5);
                assert!((feats[4 * w + 1] as f64 - var * VARIANCE_SCALE).abs() < 1e-5);
                assert_eq!(feats[4 * w + 2], (mn as f64 * EXTREMA_SCALE) as f32);
                assert_eq!(feats[4 * w + 3], (mx as f64 * EXTREMA_SCALE) as f32);
            }
        }
    }

    #[test]
    fn gradient_points_towards_brightness() {
        let mut v = Volume::zeros([32, 32, 32], 1.0);
        for z in 0..32 {
            for y in 0..32 {
                for x in 0..32 {
                    let i = v.index(x, y, z);
                    v.data[i] = x as f32 / 32.0;
                }
            }
        }
        let f = ReferenceExtractor::default().extract(&v).unwrap();
        let c = f.cell(3 + 8 * (3 + 8 * 3));
        assert!(c[12] > 0.0);
        assert!(c[13].abs() < 1e-6 && c[14].abs() < 1e-6);
    }

    #[test]
    fn translation_covariant_on_interior_cells() {
        let v = random_volume([64, 64, 64], 2);
        let shifted = v.rolled([4, 0, 0]);
        let ex = ReferenceExtractor::default();
        let a = ex.extract(&v).unwrap();
        let b = ex.extract(&shifted).unwrap();
        let g = a.grid_dims;
        // windows reach 20 voxels from the cell centre: cells 5..=10 are clear of both faces
        for k in 5..11 {
            for j in 5..11 {
                for i in 5..10 {
                    let ia = i + g[0] * (j + g[1] * k);
                    let ib = (i + 1) + g[0] * (j + g[1] * k);
                    for (x, y) in a.cell(ia).iter().zip(b.cell(ib)) {
                        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_tiny_volume() {
        assert!(ReferenceExtractor::default().extract(&Volume::zeros([3, 8, 8], 1.0)).is_err());
    }
}
